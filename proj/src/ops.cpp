// SPDX-License-Identifier: Apache-2.0
#include "msvq/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>

#include "msvq/kernels.hpp"

namespace msvq::ops {

namespace {

template <class T>
void accumulate(Tensor<T>& dst, const Tensor<T>& src) {
  auto d = dst.data();
  auto s = src.data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
}

template <class T>
void same_shape(const Var<T>& a, const Var<T>& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(what) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}

// cols: (C·k·k) × (OH·OW) for one image at `img`.
template <class T>
void im2col(const T* img, std::size_t c, std::size_t h, std::size_t w, std::size_t k,
            std::size_t pad, std::size_t oh, std::size_t ow, T* cols) {
  const std::size_t plane = oh * ow;
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t ky = 0; ky < k; ++ky)
      for (std::size_t kx = 0; kx < k; ++kx) {
        T* dst = cols + ((ch * k + ky) * k + kx) * plane;
        for (std::size_t y = 0; y < oh; ++y) {
          const long iy = static_cast<long>(y + ky) - static_cast<long>(pad);
          for (std::size_t x = 0; x < ow; ++x) {
            const long ix = static_cast<long>(x + kx) - static_cast<long>(pad);
            dst[y * ow + x] = (iy < 0 || ix < 0 || iy >= static_cast<long>(h) || ix >= static_cast<long>(w))
                                  ? T(0)
                                  : img[(ch * h + iy) * w + ix];
          }
        }
      }
}

template <class T>
void col2im_add(const T* cols, std::size_t c, std::size_t h, std::size_t w, std::size_t k,
                std::size_t pad, std::size_t oh, std::size_t ow, T* img) {
  const std::size_t plane = oh * ow;
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t ky = 0; ky < k; ++ky)
      for (std::size_t kx = 0; kx < k; ++kx) {
        const T* src = cols + ((ch * k + ky) * k + kx) * plane;
        for (std::size_t y = 0; y < oh; ++y) {
          const long iy = static_cast<long>(y + ky) - static_cast<long>(pad);
          if (iy < 0 || iy >= static_cast<long>(h)) continue;
          for (std::size_t x = 0; x < ow; ++x) {
            const long ix = static_cast<long>(x + kx) - static_cast<long>(pad);
            if (ix < 0 || ix >= static_cast<long>(w)) continue;
            img[(ch * h + iy) * w + ix] += src[y * ow + x];
          }
        }
      }
}

}  // namespace

template <class T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  Tensor<T> out = kernels::matmul(a.value(), b.value());
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(
      std::move(out), {a, b},
      [ia, ib](Tape<T>& t, std::size_t o) {
        const Tensor<T>& g = t.grad(o);
        if (t.needs_grad(ia)) accumulate(t.grad(ia), kernels::matmul_nt(g, t.value(ib)));
        if (t.needs_grad(ib)) accumulate(t.grad(ib), kernels::matmul_tn(t.value(ia), g));
      },
      "matmul");
}

template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  same_shape(a, b, "add");
  Tensor<T> out = a.value();
  accumulate(out, b.value());
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(
      std::move(out), {a, b},
      [ia, ib](Tape<T>& t, std::size_t o) {
        const Tensor<T>& g = t.grad(o);
        if (t.needs_grad(ia)) accumulate(t.grad(ia), g);
        if (t.needs_grad(ib)) accumulate(t.grad(ib), g);
      },
      "add");
}

template <class T>
Var<T> add_bias(const Var<T>& x, const Var<T>& bias) {
  require_rank(x.value(), 2, "add_bias");
  const std::size_t n = x.value().dim(0), d = x.value().dim(1);
  if (bias.value().size() != d) {
    throw ShapeError("add_bias: bias " + shape_str(bias.shape()) + " does not fit rows of " +
                     shape_str(x.shape()));
  }
  Tensor<T> out = x.value();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) out.at(i, j) += bias.value()[j];
  const std::size_t ix = x.id(), ibias = bias.id();
  return x.tape().record(
      std::move(out), {x, bias},
      [ix, ibias, n, d](Tape<T>& t, std::size_t o) {
        const Tensor<T>& g = t.grad(o);
        if (t.needs_grad(ix)) accumulate(t.grad(ix), g);
        if (t.needs_grad(ibias)) {
          Tensor<T>& gb = t.grad(ibias);
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < d; ++j) gb[j] += g.at(i, j);
        }
      },
      "add_bias");
}

template <class T>
Var<T> scale(const Var<T>& x, T s) {
  Tensor<T> out = x.value();
  for (T& v : out.data()) v *= s;
  const std::size_t ix = x.id();
  return x.tape().record(
      std::move(out), {x},
      [ix, s](Tape<T>& t, std::size_t o) {
        const Tensor<T>& g = t.grad(o);
        Tensor<T>& gx = t.grad(ix);
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += s * g[i];
      },
      "scale");
}

template <class T>
Var<T> relu(const Var<T>& x) {
  Tensor<T> out = x.value();
  for (T& v : out.data()) v = v > T(0) ? v : T(0);
  const std::size_t ix = x.id();
  return x.tape().record(
      std::move(out), {x},
      [ix](Tape<T>& t, std::size_t o) {
        const Tensor<T>& g = t.grad(o);
        const Tensor<T>& xv = t.value(ix);
        Tensor<T>& gx = t.grad(ix);
        for (std::size_t i = 0; i < g.size(); ++i)
          if (xv[i] > T(0)) gx[i] += g[i];
      },
      "relu");
}

template <class T>
Var<T> reshape(const Var<T>& x, Shape shape) {
  Tensor<T> out = x.value().reshaped(std::move(shape));
  const std::size_t ix = x.id();
  return x.tape().record(
      std::move(out), {x},
      [ix](Tape<T>& t, std::size_t o) {
        const Tensor<T>& g = t.grad(o);
        Tensor<T>& gx = t.grad(ix);
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
      },
      "reshape");
}

template <class T>
Var<T> l2_normalize_rows(const Var<T>& x, T eps) {
  require_rank(x.value(), 2, "l2_normalize_rows");
  const std::size_t n = x.value().dim(0);
  std::vector<T> norms(n);
  for (std::size_t i = 0; i < n; ++i) {
    T ss = 0;
    for (T v : x.value().row(i)) ss += v * v;
    norms[i] = std::sqrt(ss);
  }
  Tensor<T> out = kernels::l2_normalize_rows(x.value(), eps);
  const std::size_t ix = x.id();
  return x.tape().record(
      std::move(out), {x},
      [ix, eps, norms = std::move(norms)](Tape<T>& t, std::size_t o) {
        const Tensor<T>& g = t.grad(o);
        const Tensor<T>& y = t.value(o);
        Tensor<T>& gx = t.grad(ix);
        for (std::size_t i = 0; i < g.dim(0); ++i) {
          auto gr = g.row(i);
          auto yr = y.row(i);
          auto out_row = gx.row(i);
          if (norms[i] > eps) {
            T dot = 0;
            for (std::size_t j = 0; j < gr.size(); ++j) dot += yr[j] * gr[j];
            for (std::size_t j = 0; j < gr.size(); ++j) out_row[j] += (gr[j] - yr[j] * dot) / norms[i];
          } else {
            for (std::size_t j = 0; j < gr.size(); ++j) out_row[j] += gr[j] / eps;
          }
        }
      },
      "l2_normalize_rows");
}

template <class T>
Var<T> softmax_rows(const Var<T>& logits, T temperature) {
  Tensor<T> out = kernels::softmax_rows(logits.value(), temperature);
  const std::size_t ix = logits.id();
  return logits.tape().record(
      std::move(out), {logits},
      [ix, temperature](Tape<T>& t, std::size_t o) {
        const Tensor<T>& g = t.grad(o);
        const Tensor<T>& p = t.value(o);
        Tensor<T>& gx = t.grad(ix);
        for (std::size_t i = 0; i < g.dim(0); ++i) {
          T dot = 0;
          for (std::size_t j = 0; j < g.dim(1); ++j) dot += g.at(i, j) * p.at(i, j);
          for (std::size_t j = 0; j < g.dim(1); ++j)
            gx.at(i, j) += p.at(i, j) * (g.at(i, j) - dot) / temperature;
        }
      },
      "softmax_rows");
}

template <class T>
Var<T> soft_cross_entropy(const Var<T>& logits, const Tensor<T>& target, T temperature) {
  if (logits.shape() != target.shape()) {
    throw ShapeError("soft_cross_entropy: logits " + shape_str(logits.shape()) + " vs target " +
                     shape_str(target.shape()));
  }
  require_rank(target, 2, "soft_cross_entropy");
  Tensor<T> logp = kernels::log_softmax_rows(logits.value(), temperature);
  const std::size_t n = target.dim(0);
  T total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    T row = 0;
    for (std::size_t j = 0; j < target.dim(1); ++j) row -= target.at(i, j) * logp.at(i, j);
    total += row;
  }
  Tensor<T> out({1}, std::vector<T>{total / static_cast<T>(n)});
  const std::size_t ix = logits.id();
  return logits.tape().record(
      std::move(out), {logits},
      [ix, temperature, target, logp = std::move(logp)](Tape<T>& t, std::size_t o) {
        const T g = t.grad(o)[0];
        Tensor<T>& gx = t.grad(ix);
        const std::size_t rows = target.dim(0), cols = target.dim(1);
        const T c = g / (temperature * static_cast<T>(rows));
        for (std::size_t i = 0; i < rows; ++i) {
          T mass = 0;
          for (std::size_t j = 0; j < cols; ++j) mass += target.at(i, j);
          for (std::size_t j = 0; j < cols; ++j)
            gx.at(i, j) += c * (std::exp(logp.at(i, j)) * mass - target.at(i, j));
        }
      },
      "soft_cross_entropy");
}

template <class T>
Var<T> sum(const Var<T>& x) {
  T s = 0;
  for (T v : x.value().data()) s += v;
  const std::size_t ix = x.id();
  return x.tape().record(
      Tensor<T>({1}, std::vector<T>{s}), {x},
      [ix](Tape<T>& t, std::size_t o) {
        const T g = t.grad(o)[0];
        for (T& v : t.grad(ix).data()) v += g;
      },
      "sum");
}

template <class T>
Var<T> mean(const Var<T>& x) {
  return scale(sum(x), T(1) / static_cast<T>(x.value().size()));
}

template <class T>
Var<T> weighted_sum(const std::vector<Var<T>>& terms, const std::vector<T>& coeffs) {
  if (terms.empty() || terms.size() != coeffs.size()) {
    throw UsageError("weighted_sum: need one coefficient per term");
  }
  Var<T> acc = scale(terms[0], coeffs[0]);
  for (std::size_t k = 1; k < terms.size(); ++k) acc = add(acc, scale(terms[k], coeffs[k]));
  return acc;
}

template <class T>
Var<T> row_dot(const Var<T>& a, const Var<T>& b) {
  same_shape(a, b, "row_dot");
  require_rank(a.value(), 2, "row_dot");
  const std::size_t n = a.value().dim(0), d = a.value().dim(1);
  Tensor<T> out({n, 1});
  for (std::size_t i = 0; i < n; ++i) {
    T s = 0;
    for (std::size_t j = 0; j < d; ++j) s += a.value().at(i, j) * b.value().at(i, j);
    out[i] = s;
  }
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(
      std::move(out), {a, b},
      [ia, ib, n, d](Tape<T>& t, std::size_t o) {
        const Tensor<T>& g = t.grad(o);
        if (t.needs_grad(ia)) {
          Tensor<T>& ga = t.grad(ia);
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < d; ++j) ga.at(i, j) += g[i] * t.value(ib).at(i, j);
        }
        if (t.needs_grad(ib)) {
          Tensor<T>& gb = t.grad(ib);
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < d; ++j) gb.at(i, j) += g[i] * t.value(ia).at(i, j);
        }
      },
      "row_dot");
}

template <class T>
Var<T> concat_cols(const Var<T>& a, const Var<T>& b) {
  require_rank(a.value(), 2, "concat_cols");
  require_rank(b.value(), 2, "concat_cols");
  const std::size_t n = a.value().dim(0), p = a.value().dim(1), q = b.value().dim(1);
  if (b.value().dim(0) != n) {
    throw ShapeError("concat_cols: row mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  Tensor<T> out({n, p + q});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < p; ++j) out.at(i, j) = a.value().at(i, j);
    for (std::size_t j = 0; j < q; ++j) out.at(i, p + j) = b.value().at(i, j);
  }
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(
      std::move(out), {a, b},
      [ia, ib, n, p, q](Tape<T>& t, std::size_t o) {
        const Tensor<T>& g = t.grad(o);
        if (t.needs_grad(ia)) {
          Tensor<T>& ga = t.grad(ia);
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < p; ++j) ga.at(i, j) += g.at(i, j);
        }
        if (t.needs_grad(ib)) {
          Tensor<T>& gb = t.grad(ib);
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < q; ++j) gb.at(i, j) += g.at(i, p + j);
        }
      },
      "concat_cols");
}

template <class T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, std::size_t kernel,
              std::size_t pad) {
  require_rank(x.value(), 4, "conv2d input");
  require_rank(weight.value(), 2, "conv2d weight");
  const std::size_t n = x.value().dim(0), c = x.value().dim(1), h = x.value().dim(2),
                    w = x.value().dim(3);
  const std::size_t oc = weight.value().dim(0), ckk = c * kernel * kernel;
  if (weight.value().dim(1) != ckk || bias.value().size() != oc) {
    throw ShapeError("conv2d: weight " + shape_str(weight.shape()) + " / bias " +
                     shape_str(bias.shape()) + " incompatible with input " + shape_str(x.shape()));
  }
  if (h + 2 * pad < kernel || w + 2 * pad < kernel) {
    throw ShapeError("conv2d: input " + shape_str(x.shape()) + " smaller than kernel");
  }
  const std::size_t oh = h + 2 * pad - kernel + 1, ow = w + 2 * pad - kernel + 1, plane = oh * ow;

  Tensor<T> out({n, oc, oh, ow});
  auto cols = std::make_shared<std::vector<Tensor<T>>>();
  cols->reserve(n);
  for (std::size_t img = 0; img < n; ++img) {
    Tensor<T> col({ckk, plane});
    im2col(x.value().data().data() + img * c * h * w, c, h, w, kernel, pad, oh, ow, col.data().data());
    Tensor<T> res = kernels::matmul(weight.value(), col);
    T* dst = out.data().data() + img * oc * plane;
    for (std::size_t o = 0; o < oc; ++o)
      for (std::size_t p = 0; p < plane; ++p) dst[o * plane + p] = res[o * plane + p] + bias.value()[o];
    cols->push_back(std::move(col));
  }
  const std::size_t ix = x.id(), iw = weight.id(), ib = bias.id();
  return x.tape().record(
      std::move(out), {x, weight, bias},
      [=](Tape<T>& t, std::size_t o) {
        const Tensor<T>& g = t.grad(o);
        for (std::size_t img = 0; img < n; ++img) {
          Tensor<T> gimg({oc, plane},
                         std::vector<T>(g.data().begin() + img * oc * plane,
                                        g.data().begin() + (img + 1) * oc * plane));
          if (t.needs_grad(iw)) accumulate(t.grad(iw), kernels::matmul_nt(gimg, (*cols)[img]));
          if (t.needs_grad(ib)) {
            Tensor<T>& gb = t.grad(ib);
            for (std::size_t q = 0; q < oc; ++q)
              for (std::size_t p = 0; p < plane; ++p) gb[q] += gimg[q * plane + p];
          }
          if (t.needs_grad(ix)) {
            Tensor<T> gcol = kernels::matmul_tn(t.value(iw), gimg);
            col2im_add(gcol.data().data(), c, h, w, kernel, pad, oh, ow,
                       t.grad(ix).data().data() + img * c * h * w);
          }
        }
      },
      "conv2d");
}

template <class T>
Var<T> max_pool2(const Var<T>& x) {
  require_rank(x.value(), 4, "max_pool2");
  const std::size_t n = x.value().dim(0), c = x.value().dim(1), h = x.value().dim(2),
                    w = x.value().dim(3);
  const std::size_t oh = h / 2, ow = w / 2;
  if (oh == 0 || ow == 0) throw ShapeError("max_pool2: input " + shape_str(x.shape()) + " too small");
  Tensor<T> out({n, c, oh, ow});
  std::vector<std::size_t> argmax(out.size());
  const T* src = x.value().data().data();
  std::size_t k = 0;
  for (std::size_t b = 0; b < n * c; ++b) {
    const T* plane = src + b * h * w;
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t xx = 0; xx < ow; ++xx, ++k) {
        std::size_t best = (2 * y) * w + 2 * xx;
        for (std::size_t dy = 0; dy < 2; ++dy)
          for (std::size_t dx = 0; dx < 2; ++dx) {
            const std::size_t idx = (2 * y + dy) * w + 2 * xx + dx;
            if (plane[idx] > plane[best]) best = idx;
          }
        out[k] = plane[best];
        argmax[k] = b * h * w + best;
      }
  }
  const std::size_t ix = x.id();
  return x.tape().record(
      std::move(out), {x},
      [ix, argmax = std::move(argmax)](Tape<T>& t, std::size_t o) {
        const Tensor<T>& g = t.grad(o);
        Tensor<T>& gx = t.grad(ix);
        for (std::size_t i = 0; i < g.size(); ++i) gx[argmax[i]] += g[i];
      },
      "max_pool2");
}

template <class T>
Var<T> global_avg_pool(const Var<T>& x) {
  require_rank(x.value(), 4, "global_avg_pool");
  const std::size_t n = x.value().dim(0), c = x.value().dim(1);
  const std::size_t plane = x.value().dim(2) * x.value().dim(3);
  Tensor<T> out({n, c});
  const T* src = x.value().data().data();
  for (std::size_t b = 0; b < n * c; ++b) {
    T s = 0;
    for (std::size_t p = 0; p < plane; ++p) s += src[b * plane + p];
    out[b] = s / static_cast<T>(plane);
  }
  const std::size_t ix = x.id();
  return x.tape().record(
      std::move(out), {x},
      [ix, n, c, plane](Tape<T>& t, std::size_t o) {
        const Tensor<T>& g = t.grad(o);
        Tensor<T>& gx = t.grad(ix);
        const T inv = T(1) / static_cast<T>(plane);
        for (std::size_t b = 0; b < n * c; ++b)
          for (std::size_t p = 0; p < plane; ++p) gx[b * plane + p] += g[b] * inv;
      },
      "global_avg_pool");
}

template <class T>
Var<T> batch_norm(const Var<T>& x, T eps) {
  const Tensor<T>& v = x.value();
  if (v.rank() != 2 && v.rank() != 4) throw ShapeError("batch_norm: expected N x C or N x C x H x W, got " + shape_str(v.shape()));
  const std::size_t n = v.dim(0), c = v.dim(1);
  const std::size_t plane = v.rank() == 4 ? v.dim(2) * v.dim(3) : 1;
  const double m = static_cast<double>(n * plane);
  Tensor<T> out(v.shape());
  std::vector<T> inv_std(c);
  for (std::size_t ch = 0; ch < c; ++ch) {
    double s = 0, ss = 0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t p = 0; p < plane; ++p) s += v[(i * c + ch) * plane + p];
    const double mu = s / m;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t p = 0; p < plane; ++p) {
        const double d = v[(i * c + ch) * plane + p] - mu;
        ss += d * d;
      }
    const double inv = 1.0 / std::sqrt(ss / m + static_cast<double>(eps));
    inv_std[ch] = static_cast<T>(inv);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t p = 0; p < plane; ++p) {
        const std::size_t k = (i * c + ch) * plane + p;
        out[k] = static_cast<T>((v[k] - mu) * inv);
      }
  }
  const std::size_t ix = x.id();
  Var<T> y = x.tape().record(
      std::move(out), {x},
      [ix, n, c, plane, m, inv_std](Tape<T>& t, std::size_t o) {
        const Tensor<T>& g = t.grad(o);
        const Tensor<T>& yv = t.value(o);
        Tensor<T>& gx = t.grad(ix);
        for (std::size_t ch = 0; ch < c; ++ch) {
          double sg = 0, sgy = 0;
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t p = 0; p < plane; ++p) {
              const std::size_t k = (i * c + ch) * plane + p;
              sg += g[k];
              sgy += g[k] * yv[k];
            }
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t p = 0; p < plane; ++p) {
              const std::size_t k = (i * c + ch) * plane + p;
              gx[k] += static_cast<T>(inv_std[ch] * (g[k] - sg / m - yv[k] * sgy / m));
            }
        }
      },
      "batch_norm");
  return y;
}

#define MSVQ_INSTANTIATE(T)                                                                  \
  template Var<T> matmul(const Var<T>&, const Var<T>&);                                      \
  template Var<T> add(const Var<T>&, const Var<T>&);                                         \
  template Var<T> add_bias(const Var<T>&, const Var<T>&);                                    \
  template Var<T> scale(const Var<T>&, T);                                                   \
  template Var<T> relu(const Var<T>&);                                                       \
  template Var<T> reshape(const Var<T>&, Shape);                                             \
  template Var<T> l2_normalize_rows(const Var<T>&, T);                                       \
  template Var<T> softmax_rows(const Var<T>&, T);                                            \
  template Var<T> soft_cross_entropy(const Var<T>&, const Tensor<T>&, T);                    \
  template Var<T> sum(const Var<T>&);                                                        \
  template Var<T> mean(const Var<T>&);                                                       \
  template Var<T> weighted_sum(const std::vector<Var<T>>&, const std::vector<T>&);           \
  template Var<T> row_dot(const Var<T>&, const Var<T>&);                                     \
  template Var<T> concat_cols(const Var<T>&, const Var<T>&);                                 \
  template Var<T> conv2d(const Var<T>&, const Var<T>&, const Var<T>&, std::size_t, std::size_t); \
  template Var<T> max_pool2(const Var<T>&);                                                  \
  template Var<T> global_avg_pool(const Var<T>&);                                            \
  template Var<T> batch_norm(const Var<T>&, T);

MSVQ_INSTANTIATE(float)
MSVQ_INSTANTIATE(double)
#undef MSVQ_INSTANTIATE

}  // namespace msvq::ops
