// SPDX-License-Identifier: Apache-2.0
#include "msvq/augment.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace msvq {

namespace {

float clamp01(double v) { return static_cast<float>(std::clamp(v, 0.0, 1.0)); }

void check_prob(double p, const char* what) {
  if (!(p >= 0.0 && p <= 1.0)) throw ParameterError(std::string(what) + " must lie in [0,1]");
}

double luma(const Image& img, std::size_t y, std::size_t x) {
  return 0.299 * img.at(0, y, x) + 0.587 * img.at(1, y, x) + 0.114 * img.at(2, y, x);
}

Image blend(const Image& a, const Image& b, double factor) {
  Image out = a;
  for (std::size_t i = 0; i < out.pixels.size(); ++i) {
    out.pixels[i] = clamp01(factor * a.pixels[i] + (1.0 - factor) * b.pixels[i]);
  }
  return out;
}

Image to_gray(const Image& img) {
  Image g = img;
  for (std::size_t y = 0; y < img.height; ++y)
    for (std::size_t x = 0; x < img.width; ++x) {
      const float v = clamp01(luma(img, y, x));
      for (std::size_t c = 0; c < img.channels; ++c) g.at(c, y, x) = v;
    }
  return g;
}

Image adjust_brightness(const Image& img, double f) {
  Image out = img;
  for (float& v : out.pixels) v = clamp01(v * f);
  return out;
}

Image adjust_contrast(const Image& img, double f) {
  double mean = 0.0;
  if (img.channels == 3) {
    for (std::size_t y = 0; y < img.height; ++y)
      for (std::size_t x = 0; x < img.width; ++x) mean += luma(img, y, x);
    mean /= static_cast<double>(img.height * img.width);
  } else {
    mean = std::accumulate(img.pixels.begin(), img.pixels.end(), 0.0) / img.pixels.size();
  }
  Image flat(img.channels, img.height, img.width, static_cast<float>(mean));
  return blend(img, flat, f);
}

Image adjust_hue(const Image& img, double shift) {
  Image out = img;
  for (std::size_t y = 0; y < img.height; ++y)
    for (std::size_t x = 0; x < img.width; ++x) {
      const double r = img.at(0, y, x), g = img.at(1, y, x), b = img.at(2, y, x);
      const double mx = std::max({r, g, b}), mn = std::min({r, g, b});
      const double v = mx, delta = mx - mn;
      const double s = mx > 0.0 ? delta / mx : 0.0;
      double h = 0.0;
      if (delta > 0.0) {
        if (mx == r) h = std::fmod((g - b) / delta, 6.0);
        else if (mx == g) h = (b - r) / delta + 2.0;
        else h = (r - g) / delta + 4.0;
        h /= 6.0;
      }
      h = h + shift;
      h -= std::floor(h);
      const double hh = h * 6.0;
      const int sector = static_cast<int>(std::floor(hh)) % 6;
      const double f = hh - std::floor(hh);
      const double p = v * (1.0 - s), q = v * (1.0 - s * f), t = v * (1.0 - s * (1.0 - f));
      double rr, gg, bb;
      switch (sector) {
        case 0: rr = v, gg = t, bb = p; break;
        case 1: rr = q, gg = v, bb = p; break;
        case 2: rr = p, gg = v, bb = t; break;
        case 3: rr = p, gg = q, bb = v; break;
        case 4: rr = t, gg = p, bb = v; break;
        default: rr = v, gg = p, bb = q; break;
      }
      out.at(0, y, x) = clamp01(rr);
      out.at(1, y, x) = clamp01(gg);
      out.at(2, y, x) = clamp01(bb);
    }
  return out;
}

// Half-sample symmetric extension: ... 1 0 | 0 1 2 ... n-1 | n-1 n-2 ...
std::size_t reflect(long i, long n) {
  const long period = 2 * n;
  long m = ((i % period) + period) % period;
  return static_cast<std::size_t>(m < n ? m : period - 1 - m);
}

}  // namespace

AugmentPolicy AugmentPolicy::strong(std::size_t out_h, std::size_t out_w) {
  AugmentPolicy p;
  p.out_height = out_h;
  p.out_width = out_w;
  p.p_flip = 0.5;
  p.p_jitter = 0.8;
  p.p_gray = 0.2;
  p.p_blur = 0.5;
  return p;
}

AugmentPolicy AugmentPolicy::weak(std::size_t out_h, std::size_t out_w) {
  AugmentPolicy p;
  p.out_height = out_h;
  p.out_width = out_w;
  p.p_flip = 0.9;
  return p;
}

void AugmentPolicy::validate() const {
  if (!(crop_scale.first > 0.0 && crop_scale.first <= crop_scale.second && crop_scale.second <= 1.0)) {
    throw ParameterError("crop_scale must satisfy 0 < low <= high <= 1");
  }
  if (!(crop_ratio.first > 0.0 && crop_ratio.first <= crop_ratio.second)) {
    throw ParameterError("crop_ratio must satisfy 0 < low <= high");
  }
  if (out_height == 0 || out_width == 0) throw ParameterError("output size must be at least 1x1");
  check_prob(p_flip, "p_flip");
  check_prob(p_jitter, "p_jitter");
  check_prob(p_gray, "p_gray");
  check_prob(p_blur, "p_blur");
  if (!(blur_sigma.first > 0.0 && blur_sigma.first <= blur_sigma.second)) {
    throw ParameterError("blur_sigma must satisfy 0 < low <= high");
  }
}

Image resize_bilinear(const Image& img, std::size_t out_h, std::size_t out_w) {
  Image out(img.channels, out_h, out_w);
  const double sy = static_cast<double>(img.height) / out_h;
  const double sx = static_cast<double>(img.width) / out_w;
  for (std::size_t y = 0; y < out_h; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, static_cast<double>(img.height - 1));
    const std::size_t y0 = static_cast<std::size_t>(fy);
    const std::size_t y1 = std::min(y0 + 1, img.height - 1);
    const double wy = fy - y0;
    for (std::size_t x = 0; x < out_w; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, static_cast<double>(img.width - 1));
      const std::size_t x0 = static_cast<std::size_t>(fx);
      const std::size_t x1 = std::min(x0 + 1, img.width - 1);
      const double wx = fx - x0;
      for (std::size_t c = 0; c < img.channels; ++c) {
        const double top = (1 - wx) * img.at(c, y0, x0) + wx * img.at(c, y0, x1);
        const double bot = (1 - wx) * img.at(c, y1, x0) + wx * img.at(c, y1, x1);
        out.at(c, y, x) = clamp01((1 - wy) * top + wy * bot);
      }
    }
  }
  return out;
}

Image random_resized_crop(const Image& img, std::pair<double, double> scale,
                          std::pair<double, double> ratio, std::size_t out_h, std::size_t out_w,
                          SeededRng& rng) {
  const double area = static_cast<double>(img.height * img.width);
  const double log_lo = std::log(ratio.first), log_hi = std::log(ratio.second);
  std::size_t ch = 0, cw = 0, top = 0, left = 0;
  bool found = false;
  for (int attempt = 0; attempt < 10 && !found; ++attempt) {
    const double target = area * rng.uniform(scale.first, scale.second);
    const double ar = std::exp(rng.uniform(log_lo, log_hi));
    const long w = std::lround(std::sqrt(target * ar));
    const long h = std::lround(std::sqrt(target / ar));
    if (w > 0 && h > 0 && w <= static_cast<long>(img.width) && h <= static_cast<long>(img.height)) {
      ch = static_cast<std::size_t>(h);
      cw = static_cast<std::size_t>(w);
      top = rng.below(img.height - ch + 1);
      left = rng.below(img.width - cw + 1);
      found = true;
    }
  }
  if (!found) {
    const double in_ratio = static_cast<double>(img.width) / img.height;
    if (in_ratio < ratio.first) {
      cw = img.width;
      ch = std::max<std::size_t>(1, std::min<std::size_t>(img.height, std::lround(cw / ratio.first)));
    } else if (in_ratio > ratio.second) {
      ch = img.height;
      cw = std::max<std::size_t>(1, std::min<std::size_t>(img.width, std::lround(ch * ratio.second)));
    } else {
      ch = img.height;
      cw = img.width;
    }
    top = (img.height - ch) / 2;
    left = (img.width - cw) / 2;
  }
  Image crop(img.channels, ch, cw);
  for (std::size_t c = 0; c < img.channels; ++c)
    for (std::size_t y = 0; y < ch; ++y)
      for (std::size_t x = 0; x < cw; ++x) crop.at(c, y, x) = img.at(c, top + y, left + x);
  return resize_bilinear(crop, out_h, out_w);
}

Image horizontal_flip(const Image& img, double p, SeededRng& rng) {
  if (!rng.bernoulli(p)) return img;
  Image out = img;
  for (std::size_t c = 0; c < img.channels; ++c)
    for (std::size_t y = 0; y < img.height; ++y)
      for (std::size_t x = 0; x < img.width; ++x) out.at(c, y, x) = img.at(c, y, img.width - 1 - x);
  return out;
}

Image color_jitter(const Image& img, double p, const JitterStrengths& s, SeededRng& rng) {
  if (!rng.bernoulli(p)) return img;
  // Factors are drawn up front, then applied in a random order.
  const double fb = rng.uniform(std::max(0.0, 1.0 - s.brightness), 1.0 + s.brightness);
  const double fc = rng.uniform(std::max(0.0, 1.0 - s.contrast), 1.0 + s.contrast);
  const double fs = rng.uniform(std::max(0.0, 1.0 - s.saturation), 1.0 + s.saturation);
  const double fh = rng.uniform(-s.hue, s.hue);
  std::array<int, 4> order{0, 1, 2, 3};
  for (std::size_t i = order.size() - 1; i > 0; --i) std::swap(order[i], order[rng.below(i + 1)]);
  Image out = img;
  for (int op : order) {
    switch (op) {
      case 0: out = adjust_brightness(out, fb); break;
      case 1: out = adjust_contrast(out, fc); break;
      case 2:
        if (out.channels == 3) out = blend(out, to_gray(out), fs);
        break;
      default:
        if (out.channels == 3) out = adjust_hue(out, fh);
        break;
    }
  }
  return out;
}

Image grayscale(const Image& img, double p, SeededRng& rng) {
  if (!rng.bernoulli(p) || img.channels != 3) return img;
  return to_gray(img);
}

std::size_t blur_kernel_size(std::size_t width) {
  std::size_t k = std::max<std::size_t>(3, width / 10);
  if (k % 2 == 0) --k;
  return std::max<std::size_t>(k, 3);
}

Image gaussian_blur_fixed(const Image& img, double sigma) {
  const long k = static_cast<long>(blur_kernel_size(img.width));
  const long r = k / 2;
  std::vector<double> w(k);
  double total = 0.0;
  for (long i = -r; i <= r; ++i) total += w[i + r] = std::exp(-0.5 * (i * i) / (sigma * sigma));
  for (double& v : w) v /= total;

  const long h = static_cast<long>(img.height), wd = static_cast<long>(img.width);
  Image tmp = img, out = img;
  for (std::size_t c = 0; c < img.channels; ++c) {
    for (long y = 0; y < h; ++y)
      for (long x = 0; x < wd; ++x) {
        double s = 0.0;
        for (long i = -r; i <= r; ++i) s += w[i + r] * img.at(c, y, reflect(x + i, wd));
        tmp.at(c, y, x) = static_cast<float>(s);
      }
    for (long y = 0; y < h; ++y)
      for (long x = 0; x < wd; ++x) {
        double s = 0.0;
        for (long i = -r; i <= r; ++i) s += w[i + r] * tmp.at(c, reflect(y + i, h), x);
        out.at(c, y, x) = clamp01(s);
      }
  }
  return out;
}

Image gaussian_blur(const Image& img, double p, std::pair<double, double> sigma_range, SeededRng& rng) {
  if (!rng.bernoulli(p)) return img;
  return gaussian_blur_fixed(img, rng.uniform(sigma_range.first, sigma_range.second));
}

Image apply_policy(const Image& img, const AugmentPolicy& policy, SeededRng& rng) {
  Image out = random_resized_crop(img, policy.crop_scale, policy.crop_ratio, policy.out_height,
                                  policy.out_width, rng);
  out = horizontal_flip(out, policy.p_flip, rng);
  out = color_jitter(out, policy.p_jitter, policy.jitter, rng);
  out = grayscale(out, policy.p_gray, rng);
  out = gaussian_blur(out, policy.p_blur, policy.blur_sigma, rng);
  return out;
}

ImageBatch apply_policy(const ImageBatch& batch, const AugmentPolicy& policy, const SeededRng& rng) {
  require_rank(batch, 4, "apply_policy");
  if (batch.dim(0) == 0) throw UsageError("apply_policy: empty batch");
  std::vector<Image> out;
  out.reserve(batch.dim(0));
  for (std::size_t i = 0; i < batch.dim(0); ++i) {
    SeededRng r = rng.derive(i);
    out.push_back(apply_policy(batch_image(batch, i), policy, r));
  }
  return stack_images(out);
}

}  // namespace msvq
