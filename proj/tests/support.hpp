#pragma once

// Shared helpers for the unit tests: random tensors and plain-loop oracles
// that share no code with the library kernels.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "smamba/image.hpp"
#include "smamba/rng.hpp"
#include "smamba/tensor.hpp"

namespace testing {

using smamba::CounterRng;
using smamba::Plane;
using smamba::Shape;
using smamba::Tensor;

inline Tensor rand_tensor(Shape shape, CounterRng& rng, double lo = -1.0, double hi = 1.0,
                          bool grad = false) {
  Tensor t(std::move(shape));
  for (auto& v : t.mutable_data()) v = rng.uniform(lo, hi);
  if (grad) t.set_requires_grad(true);
  return t;
}

inline Plane rand_plane(std::size_t h, std::size_t w, CounterRng& rng) {
  Plane p(h, w);
  for (auto& v : p.v) v = rng.uniform();
  return p;
}

inline Plane rand_mask(std::size_t h, std::size_t w, CounterRng& rng, double p_fg = 0.4) {
  Plane p(h, w);
  for (auto& v : p.v) v = rng.uniform() < p_fg ? 1.0 : 0.0;
  return p;
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

// max |a-b| / max(1, |b|)
inline double max_rel_diff(std::span<const double> a, std::span<const double> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::abs(a[i] - b[i]) / std::max(1.0, std::abs(b[i])));
  return m;
}

inline bool bit_equal(std::span<const double> a, std::span<const double> b) {
  return a.size() == b.size() && std::equal(a.begin(), a.end(), b.begin());
}

// NHWC convolution by direct quadruple loop.
inline std::vector<double> conv2d_oracle(const std::vector<double>& x, std::size_t n, std::size_t h,
                                         std::size_t w, std::size_t cin, const std::vector<double>& k,
                                         std::size_t ks, std::size_t cout, const std::vector<double>& bias,
                                         std::size_t stride, std::size_t pad) {
  const std::size_t oh = (h + 2 * pad - ks) / stride + 1, ow = (w + 2 * pad - ks) / stride + 1;
  std::vector<double> out(n * oh * ow * cout, 0.0);
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t oy = 0; oy < oh; ++oy)
      for (std::size_t ox = 0; ox < ow; ++ox)
        for (std::size_t co = 0; co < cout; ++co) {
          double s = bias.empty() ? 0.0 : bias[co];
          for (std::size_t ky = 0; ky < ks; ++ky)
            for (std::size_t kx = 0; kx < ks; ++kx) {
              const long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(pad);
              const long ix = static_cast<long>(ox * stride + kx) - static_cast<long>(pad);
              if (iy < 0 || ix < 0 || iy >= static_cast<long>(h) || ix >= static_cast<long>(w)) continue;
              for (std::size_t ci = 0; ci < cin; ++ci)
                s += x[((b * h + iy) * w + ix) * cin + ci] * k[((ky * ks + kx) * cin + ci) * cout + co];
            }
          out[((b * oh + oy) * ow + ox) * cout + co] = s;
        }
  return out;
}

inline std::vector<double> matmul_oracle(const std::vector<double>& a, const std::vector<double>& b,
                                         std::size_t m, std::size_t k, std::size_t p) {
  std::vector<double> c(m * p, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < p; ++j) {
      double s = 0.0;
      for (std::size_t t = 0; t < k; ++t) s += a[i * k + t] * b[t * p + j];
      c[i * p + j] = s;
    }
  return c;
}

// Bilinear, half-pixel centres, clamped at the edges; written per output
// pixel straight from the sampling formula.
inline std::vector<double> upsample_oracle(const std::vector<double>& x, std::size_t h, std::size_t w,
                                           std::size_t c, std::size_t oh, std::size_t ow) {
  std::vector<double> out(oh * ow * c);
  auto src = [](std::size_t o, std::size_t in_n, std::size_t out_n) {
    double s = (static_cast<double>(o) + 0.5) * static_cast<double>(in_n) / static_cast<double>(out_n) - 0.5;
    return std::clamp(s, 0.0, static_cast<double>(in_n - 1));
  };
  for (std::size_t y = 0; y < oh; ++y)
    for (std::size_t xx = 0; xx < ow; ++xx) {
      const double sy = src(y, h, oh), sx = src(xx, w, ow);
      const std::size_t y0 = static_cast<std::size_t>(std::floor(sy)), x0 = static_cast<std::size_t>(std::floor(sx));
      const std::size_t y1 = std::min(y0 + 1, h - 1), x1 = std::min(x0 + 1, w - 1);
      const double fy = sy - static_cast<double>(y0), fx = sx - static_cast<double>(x0);
      for (std::size_t ch = 0; ch < c; ++ch) {
        auto at = [&](std::size_t yy, std::size_t xc) { return x[(yy * w + xc) * c + ch]; };
        out[(y * ow + xx) * c + ch] = (1 - fy) * ((1 - fx) * at(y0, x0) + fx * at(y0, x1)) +
                                      fy * ((1 - fx) * at(y1, x0) + fx * at(y1, x1));
      }
    }
  return out;
}

}  // namespace testing
