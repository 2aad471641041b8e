// SPDX-License-Identifier: Apache-2.0
#include "msvq/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "msvq/augment.hpp"
#include "msvq/rng.hpp"

namespace msvq {

namespace {

constexpr std::size_t kCifarSide = 32;
constexpr std::size_t kCifarRecord = 1 + 3 * kCifarSide * kCifarSide;

// Low-frequency field: white noise blurred with a wide Gaussian (sigma ~ side/5),
// standardised per channel so classes cannot be told apart by mean colour alone.
std::vector<float> smooth_pattern(std::size_t c, std::size_t h, std::size_t w, SeededRng& rng) {
  Image noise(c, h, w);
  for (float& v : noise.pixels) v = static_cast<float>(rng.normal());
  const double sigma = std::max<double>(1.0, std::min(h, w) / 5.0);
  const long r = static_cast<long>(std::ceil(2.5 * sigma));
  std::vector<double> k(2 * r + 1);
  for (long i = -r; i <= r; ++i) k[i + r] = std::exp(-0.5 * i * i / (sigma * sigma));
  const long H = static_cast<long>(h), W = static_cast<long>(w);
  std::vector<float> out(c * h * w);
  std::vector<double> tmp(h * w);
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (long y = 0; y < H; ++y)
      for (long x = 0; x < W; ++x) {
        double s = 0;
        for (long i = -r; i <= r; ++i) s += k[i + r] * noise.at(ch, y, ((x + i) % W + W) % W);
        tmp[y * W + x] = s;
      }
    std::vector<double> field(h * w);
    for (long y = 0; y < H; ++y)
      for (long x = 0; x < W; ++x) {
        double s = 0;
        for (long i = -r; i <= r; ++i) s += k[i + r] * tmp[(((y + i) % H + H) % H) * W + x];
        field[y * W + x] = s;
      }
    const double mean = std::accumulate(field.begin(), field.end(), 0.0) / field.size();
    double var = 0;
    for (double v : field) var += (v - mean) * (v - mean);
    const double sd = std::sqrt(var / field.size()) + 1e-12;
    for (std::size_t i = 0; i < h * w; ++i) {
      out[ch * h * w + i] = static_cast<float>(std::clamp(0.5 + 0.2 * (field[i] - mean) / sd, 0.0, 1.0));
    }
  }
  return out;
}

}  // namespace

Image LabeledImageDataset::image(std::size_t i) const {
  Image img(channels, height, width);
  std::copy_n(pixels.begin() + i * image_size(), image_size(), img.pixels.begin());
  return img;
}

ImageBatch LabeledImageDataset::gather(std::span<const std::size_t> indices) const {
  ImageBatch out({indices.size(), channels, height, width});
  const std::size_t len = image_size();
  for (std::size_t k = 0; k < indices.size(); ++k) {
    std::copy_n(pixels.begin() + indices[k] * len, len, out.data().begin() + k * len);
  }
  return out;
}

std::vector<std::int32_t> LabeledImageDataset::gather_labels(std::span<const std::size_t> indices) const {
  std::vector<std::int32_t> out;
  out.reserve(indices.size());
  for (std::size_t i : indices) out.push_back(labels.at(i));
  return out;
}

LabeledImageDataset LabeledImageDataset::subset(std::span<const std::size_t> indices) const {
  LabeledImageDataset out = *this;
  out.labels = gather_labels(indices);
  auto b = gather(indices);
  out.pixels.assign(b.data().begin(), b.data().end());
  return out;
}

LabeledImageDataset synth_clusters(const SynthSpec& spec) {
  if (spec.class_count < 2) throw ParameterError("synth_clusters: class_count must be at least 2");
  if (spec.height == 0 || spec.width == 0 || spec.channels == 0) {
    throw ParameterError("synth_clusters: image dimensions must be positive");
  }
  LabeledImageDataset ds;
  ds.channels = spec.channels;
  ds.height = spec.height;
  ds.width = spec.width;
  ds.class_count = spec.class_count;
  const std::size_t len = ds.image_size();

  std::vector<std::vector<float>> bases;
  for (std::size_t c = 0; c < spec.class_count; ++c) {
    SeededRng rng(spec.seed, mix_stream(stream_id("synth/base"), c));
    bases.push_back(smooth_pattern(spec.channels, spec.height, spec.width, rng));
  }

  SeededRng rng(spec.seed, mix_stream(stream_id("synth/samples"), spec.sample_stream));
  ds.pixels.resize(spec.class_count * spec.per_class * len);
  ds.labels.resize(spec.class_count * spec.per_class);
  std::size_t k = 0;
  for (std::size_t c = 0; c < spec.class_count; ++c) {
    for (std::size_t s = 0; s < spec.per_class; ++s, ++k) {
      ds.labels[k] = static_cast<std::int32_t>(c);
      float* dst = ds.pixels.data() + k * len;
      for (std::size_t i = 0; i < len; ++i) {
        const double noise = spec.noise_sigma > 0.0 ? spec.noise_sigma * rng.normal() : 0.0;
        const double v = bases[c][i] + noise;
        dst[i] = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
    }
  }
  return ds;
}

void read_cifar10_file(const std::filesystem::path& file, LabeledImageDataset& out,
                       std::size_t chunk_bytes) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw MissingFileError("CIFAR-10 batch file not found: " + file.string());
  if (chunk_bytes == 0) chunk_bytes = 1;
  out.channels = 3;
  out.height = kCifarSide;
  out.width = kCifarSide;
  out.class_count = 10;

  std::vector<unsigned char> pending;
  std::vector<char> chunk(chunk_bytes);
  std::size_t record_index = 0;
  auto consume = [&](const unsigned char* rec) {
    const unsigned label = rec[0];
    if (label > 9) {
      throw LabelRangeError(file.string() + ": record " + std::to_string(record_index) + " has label " +
                            std::to_string(label) + " (expected 0..9)");
    }
    out.labels.push_back(static_cast<std::int32_t>(label));
    for (std::size_t i = 1; i < kCifarRecord; ++i) out.pixels.push_back(rec[i] / 255.0f);
    ++record_index;
  };
  while (in) {
    in.read(chunk.data(), static_cast<std::streamsize>(chunk.size()));
    const std::size_t got = static_cast<std::size_t>(in.gcount());
    pending.insert(pending.end(), chunk.begin(), chunk.begin() + static_cast<long>(got));
    std::size_t off = 0;
    while (pending.size() - off >= kCifarRecord) {
      consume(pending.data() + off);
      off += kCifarRecord;
    }
    pending.erase(pending.begin(), pending.begin() + static_cast<long>(off));
  }
  if (!pending.empty()) {
    throw RecordLengthError(file.string() + ": trailing " + std::to_string(pending.size()) +
                            " bytes do not form a " + std::to_string(kCifarRecord) + "-byte record");
  }
}

LabeledImageDataset load_cifar10(const std::filesystem::path& dir, Split split, std::size_t chunk_bytes) {
  LabeledImageDataset ds;
  if (split == Split::Train) {
    for (int b = 1; b <= 5; ++b) {
      read_cifar10_file(dir / ("data_batch_" + std::to_string(b) + ".bin"), ds, chunk_bytes);
    }
  } else {
    read_cifar10_file(dir / "test_batch.bin", ds, chunk_bytes);
  }
  return ds;
}

std::vector<std::size_t> epoch_permutation(std::size_t m, std::uint64_t seed, std::uint64_t epoch) {
  std::vector<std::size_t> perm(m);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  SeededRng rng(seed, mix_stream(stream_id("shuffle"), epoch));
  for (std::size_t i = m; i > 1; --i) std::swap(perm[i - 1], perm[rng.below(i)]);
  return perm;
}

std::vector<std::vector<std::size_t>> batches(std::size_t m, std::size_t n, std::uint64_t seed,
                                              std::uint64_t epoch) {
  if (n == 0) throw ParameterError("batch size must be positive");
  const auto perm = epoch_permutation(m, seed, epoch);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t b = 0; b + n <= m; b += n) out.emplace_back(perm.begin() + b, perm.begin() + b + n);
  return out;
}

std::vector<std::size_t> stratified_subset(const LabeledImageDataset& ds, std::size_t k, std::uint64_t seed) {
  if (ds.class_count == 0) throw ParameterError("stratified_subset: dataset has no classes");
  const auto perm = epoch_permutation(ds.size(), seed, 0);
  const std::size_t per_class = k / ds.class_count;
  std::vector<std::size_t> taken(ds.class_count, 0);
  std::vector<std::size_t> out;
  for (std::size_t i : perm) {
    const auto c = static_cast<std::size_t>(ds.labels[i]);
    if (taken[c] < per_class) {
      ++taken[c];
      out.push_back(i);
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

ChannelStats channel_stats(const LabeledImageDataset& ds) {
  ChannelStats st{std::vector<double>(ds.channels, 0.0), std::vector<double>(ds.channels, 0.0)};
  const std::size_t plane = ds.height * ds.width;
  if (ds.size() == 0 || plane == 0) {
    st.stddev.assign(ds.channels, 1.0);
    return st;
  }
  std::vector<double> sq(ds.channels, 0.0);
  for (std::size_t k = 0; k < ds.size(); ++k)
    for (std::size_t c = 0; c < ds.channels; ++c)
      for (std::size_t p = 0; p < plane; ++p) {
        const double v = ds.pixels[(k * ds.channels + c) * plane + p];
        st.mean[c] += v;
        sq[c] += v * v;
      }
  const double count = static_cast<double>(ds.size() * plane);
  for (std::size_t c = 0; c < ds.channels; ++c) {
    st.mean[c] /= count;
    st.stddev[c] = std::sqrt(std::max(sq[c] / count - st.mean[c] * st.mean[c], 1e-12));
  }
  return st;
}

}  // namespace msvq
