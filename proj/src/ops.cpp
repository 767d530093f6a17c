#include "smamba/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include "smamba/kernels.hpp"

namespace smamba::ops {

namespace {

using detail::TensorImpl;

// Index plan for a broadcast binary op.
struct Broadcast {
  Shape out;
  // kind 0: same shape; 1: b repeats with period nb; 2: a repeats with
  // period na; 3: general (explicit index maps).
  int kind = 3;
  std::vector<std::size_t> ia, ib;
};

Broadcast plan_broadcast(const Shape& sa, const Shape& sb, const char* name) {
  Broadcast p;
  if (sa == sb) {
    p.out = sa;
    p.kind = 0;
    return p;
  }
  const std::size_t r = std::max(sa.size(), sb.size());
  Shape a(r, 1), b(r, 1);
  std::copy(sa.begin(), sa.end(), a.begin() + static_cast<std::ptrdiff_t>(r - sa.size()));
  std::copy(sb.begin(), sb.end(), b.begin() + static_cast<std::ptrdiff_t>(r - sb.size()));
  p.out.resize(r);
  for (std::size_t i = 0; i < r; ++i) {
    if (a[i] != b[i] && a[i] != 1 && b[i] != 1)
      throw ShapeError(std::string(name) + ": cannot broadcast " + shape_str(sa) + " with " +
                       shape_str(sb));
    p.out[i] = std::max(a[i], b[i]);
  }
  auto suffix_of = [&](const Shape& s) {
    // s equals out on a trailing run and is 1 before it.
    std::size_t i = 0;
    while (i < r && s[i] == 1 && p.out[i] != 1) ++i;
    for (std::size_t j = i; j < r; ++j)
      if (s[j] != p.out[j]) return false;
    return true;
  };
  if (a == p.out && suffix_of(b)) {
    p.kind = 1;
    return p;
  }
  if (b == p.out && suffix_of(a)) {
    p.kind = 2;
    return p;
  }
  const std::size_t n = shape_numel(p.out);
  p.ia.resize(n);
  p.ib.resize(n);
  std::vector<std::size_t> sta(r), stb(r);
  std::size_t ma = 1, mb = 1;
  for (std::size_t i = r; i-- > 0;) {
    sta[i] = a[i] == 1 ? 0 : ma;
    stb[i] = b[i] == 1 ? 0 : mb;
    ma *= a[i];
    mb *= b[i];
  }
  std::vector<std::size_t> idx(r, 0);
  for (std::size_t flat = 0; flat < n; ++flat) {
    std::size_t oa = 0, ob = 0;
    for (std::size_t i = 0; i < r; ++i) {
      oa += idx[i] * sta[i];
      ob += idx[i] * stb[i];
    }
    p.ia[flat] = oa;
    p.ib[flat] = ob;
    for (std::size_t i = r; i-- > 0;) {
      if (++idx[i] < p.out[i]) break;
      idx[i] = 0;
    }
  }
  return p;
}

inline std::size_t index_a(const Broadcast& p, std::size_t i, std::size_t na) {
  switch (p.kind) {
    case 0:
    case 1: return i;
    case 2: return i % na;
    default: return p.ia[i];
  }
}

inline std::size_t index_b(const Broadcast& p, std::size_t i, std::size_t nb) {
  switch (p.kind) {
    case 0:
    case 2: return i;
    case 1: return i % nb;
    default: return p.ib[i];
  }
}

enum class BinOp { Add, Sub, Mul, Div };

Tensor binary(const Tensor& a, const Tensor& b, BinOp op, const char* name) {
  auto plan = std::make_shared<Broadcast>(plan_broadcast(a.shape(), b.shape(), name));
  const std::size_t n = shape_numel(plan->out);
  const std::size_t na = a.numel(), nb = b.numel();
  const auto av = a.data();
  const auto bv = b.data();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double x = av[index_a(*plan, i, na)];
    const double y = bv[index_b(*plan, i, nb)];
    switch (op) {
      case BinOp::Add: out[i] = x + y; break;
      case BinOp::Sub: out[i] = x - y; break;
      case BinOp::Mul: out[i] = x * y; break;
      case BinOp::Div: out[i] = x / y; break;
    }
  }
  auto ai = a.impl();
  auto bi = b.impl();
  return make_result(plan->out, std::move(out), name, {a, b},
                     [ai, bi, plan, op, na, nb](std::span<const double> g, std::span<const double>) {
                       const std::size_t n = g.size();
                       if (ai->requires_grad) {
                         auto& ga = ai->grad_buffer();
                         for (std::size_t i = 0; i < n; ++i) {
                           double d = g[i];
                           if (op == BinOp::Mul) d *= bi->data[index_b(*plan, i, nb)];
                           if (op == BinOp::Div) d /= bi->data[index_b(*plan, i, nb)];
                           ga[index_a(*plan, i, na)] += d;
                         }
                       }
                       if (bi->requires_grad) {
                         auto& gb = bi->grad_buffer();
                         for (std::size_t i = 0; i < n; ++i) {
                           double d = g[i];
                           if (op == BinOp::Sub) d = -d;
                           if (op == BinOp::Mul) d *= ai->data[index_a(*plan, i, na)];
                           if (op == BinOp::Div) {
                             const double y = bi->data[index_b(*plan, i, nb)];
                             d *= -ai->data[index_a(*plan, i, na)] / (y * y);
                           }
                           gb[index_b(*plan, i, nb)] += d;
                         }
                       }
                     });
}

// Elementwise map with derivative expressed through input and output.
template <typename F, typename DF>
Tensor unary(const Tensor& x, const char* name, F f, DF df) {
  const auto xv = x.data();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = f(xv[i]);
  auto xi = x.impl();
  return make_result(x.shape(), std::move(out), name, {x},
                     [xi, df](std::span<const double> g, std::span<const double> y) {
                       auto& gx = xi->grad_buffer();
                       for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * df(xi->data[i], y[i]);
                     });
}

inline double sigmoid_scalar(double v) {
  if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}

inline double softplus_scalar(double v) { return std::max(v, 0.0) + std::log1p(std::exp(-std::abs(v))); }

std::size_t norm_axis(int axis, std::size_t rank) {
  const int r = static_cast<int>(rank);
  const int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) throw ShapeError("axis out of range");
  return static_cast<std::size_t>(a);
}

struct SpatialView {
  std::size_t n, h, w, c;
};

SpatialView spatial(const Tensor& x, const char* name) {
  if (x.rank() == 3) return {1, x.dim(0), x.dim(1), x.dim(2)};
  if (x.rank() == 4) return {x.dim(0), x.dim(1), x.dim(2), x.dim(3)};
  throw ShapeError(std::string(name) + ": expected H x W x C or N x H x W x C, got " +
                   shape_str(x.shape()));
}

Shape spatial_shape(const Tensor& like, std::size_t n, std::size_t h, std::size_t w, std::size_t c) {
  if (like.rank() == 3) return {h, w, c};
  return {n, h, w, c};
}

// Source taps for a 1-D half-pixel bilinear resample.
struct Taps {
  std::vector<std::size_t> lo, hi;
  std::vector<double> frac;
};

Taps bilinear_taps(std::size_t in, std::size_t out) {
  Taps t;
  t.lo.resize(out);
  t.hi.resize(out);
  t.frac.resize(out);
  const double ratio = static_cast<double>(in) / static_cast<double>(out);
  for (std::size_t i = 0; i < out; ++i) {
    double src = (static_cast<double>(i) + 0.5) * ratio - 0.5;
    if (src < 0) src = 0;
    auto lo = static_cast<std::size_t>(std::floor(src));
    if (lo > in - 1) lo = in - 1;
    t.lo[i] = lo;
    t.hi[i] = std::min(lo + 1, in - 1);
    t.frac[i] = src - static_cast<double>(lo);
  }
  return t;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::Add, "add"); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::Sub, "sub"); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::Mul, "mul"); }
Tensor div(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::Div, "div"); }

Tensor scale(const Tensor& x, double s) {
  return unary(x, "scale", [s](double v) { return v * s; }, [s](double, double) { return s; });
}

Tensor add_scalar(const Tensor& x, double s) {
  return unary(x, "add_scalar", [s](double v) { return v + s; }, [](double, double) { return 1.0; });
}

Tensor silu(const Tensor& x) {
  return unary(
      x, "silu", [](double v) { return v * sigmoid_scalar(v); },
      [](double v, double) {
        const double s = sigmoid_scalar(v);
        return s * (1.0 + v * (1.0 - s));
      });
}

Tensor sigmoid(const Tensor& x) {
  return unary(x, "sigmoid", sigmoid_scalar, [](double, double y) { return y * (1.0 - y); });
}

Tensor softplus(const Tensor& x) {
  return unary(x, "softplus", softplus_scalar, [](double v, double) { return sigmoid_scalar(v); });
}

Tensor gelu(const Tensor& x) {
  return unary(
      x, "gelu", [](double v) { return 0.5 * v * (1.0 + std::erf(v / std::numbers::sqrt2)); },
      [](double v, double) {
        const double cdf = 0.5 * (1.0 + std::erf(v / std::numbers::sqrt2));
        const double pdf = std::exp(-0.5 * v * v) / std::sqrt(2.0 * std::numbers::pi);
        return cdf + v * pdf;
      });
}

Tensor exp(const Tensor& x) {
  return unary(x, "exp", [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  const std::size_t d = x.dim(-1);
  const std::size_t rows = x.numel() / d;
  if (gamma.defined() && gamma.numel() != d) throw ShapeError("layer_norm: gamma size mismatch");
  if (beta.defined() && beta.numel() != d) throw ShapeError("layer_norm: beta size mismatch");
  const auto xv = x.data();
  std::vector<double> out(x.numel());
  auto stats = std::make_shared<std::vector<double>>(rows * 2);  // mean, inv_std
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = xv.data() + r * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += xr[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(var + eps);
    (*stats)[2 * r] = mu;
    (*stats)[2 * r + 1] = inv;
    for (std::size_t j = 0; j < d; ++j) {
      double v = (xr[j] - mu) * inv;
      if (gamma.defined()) v *= gamma.at(j);
      if (beta.defined()) v += beta.at(j);
      out[r * d + j] = v;
    }
  }
  auto xi = x.impl();
  auto gi = gamma.defined() ? gamma.impl() : nullptr;
  auto bi = beta.defined() ? beta.impl() : nullptr;
  std::vector<Tensor> inputs{x};
  if (gamma.defined()) inputs.push_back(gamma);
  if (beta.defined()) inputs.push_back(beta);
  return make_result(x.shape(), std::move(out), "layer_norm", inputs,
                     [xi, gi, bi, stats, d, rows](std::span<const double> g, std::span<const double>) {
                       std::vector<double> xhat(d), gy(d);
                       for (std::size_t r = 0; r < rows; ++r) {
                         const double mu = (*stats)[2 * r], inv = (*stats)[2 * r + 1];
                         const double* xr = xi->data.data() + r * d;
                         const double* gr = g.data() + r * d;
                         double mg = 0.0, mgx = 0.0;
                         for (std::size_t j = 0; j < d; ++j) {
                           xhat[j] = (xr[j] - mu) * inv;
                           gy[j] = gi ? gr[j] * gi->data[j] : gr[j];
                           mg += gy[j];
                           mgx += gy[j] * xhat[j];
                         }
                         mg /= static_cast<double>(d);
                         mgx /= static_cast<double>(d);
                         if (gi && gi->requires_grad) {
                           auto& gg = gi->grad_buffer();
                           for (std::size_t j = 0; j < d; ++j) gg[j] += gr[j] * xhat[j];
                         }
                         if (bi && bi->requires_grad) {
                           auto& gb = bi->grad_buffer();
                           for (std::size_t j = 0; j < d; ++j) gb[j] += gr[j];
                         }
                         if (xi->requires_grad) {
                           auto& gx = xi->grad_buffer();
                           for (std::size_t j = 0; j < d; ++j)
                             gx[r * d + j] += inv * (gy[j] - mg - xhat[j] * mgx);
                         }
                       }
                     });
}

Tensor softmax(const Tensor& x) {
  const std::size_t d = x.dim(-1);
  const std::size_t rows = x.numel() / d;
  const auto xv = x.data();
  std::vector<double> out(x.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = xv.data() + r * d;
    double* o = out.data() + r * d;
    const double mx = *std::max_element(xr, xr + d);
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      o[j] = std::exp(xr[j] - mx);
      s += o[j];
    }
    for (std::size_t j = 0; j < d; ++j) o[j] /= s;
  }
  auto xi = x.impl();
  return make_result(x.shape(), std::move(out), "softmax", {x},
                     [xi, d, rows](std::span<const double> g, std::span<const double> y) {
                       auto& gx = xi->grad_buffer();
                       for (std::size_t r = 0; r < rows; ++r) {
                         double dot = 0.0;
                         for (std::size_t j = 0; j < d; ++j) dot += g[r * d + j] * y[r * d + j];
                         for (std::size_t j = 0; j < d; ++j)
                           gx[r * d + j] += y[r * d + j] * (g[r * d + j] - dot);
                       }
                     });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() < 2 || b.rank() < 2) throw ShapeError("matmul: operands need rank >= 2");
  const std::size_t m = a.dim(-2), k = a.dim(-1), p = b.dim(-1);
  if (b.dim(-2) != k)
    throw ShapeError("matmul: inner dims differ, " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  const std::size_t batch = a.numel() / (m * k);
  const bool shared = b.rank() == 2;
  if (!shared) {
    if (b.rank() != a.rank() || !std::equal(a.shape().begin(), a.shape().end() - 2, b.shape().begin()))
      throw ShapeError("matmul: batch dims differ, " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  Shape os = a.shape();
  os.back() = p;
  std::vector<double> out(batch * m * p);
  const auto av = a.data();
  const auto bv = b.data();
  for (std::size_t i = 0; i < batch; ++i)
    kernels::gemm_nn(m, k, p, av.subspan(i * m * k, m * k), shared ? bv : bv.subspan(i * k * p, k * p),
                     std::span<double>(out).subspan(i * m * p, m * p));
  auto ai = a.impl();
  auto bi = b.impl();
  return make_result(std::move(os), std::move(out), "matmul", {a, b},
                     [ai, bi, batch, m, k, p, shared](std::span<const double> g, std::span<const double>) {
                       for (std::size_t i = 0; i < batch; ++i) {
                         const auto gi = g.subspan(i * m * p, m * p);
                         const auto bsub = shared ? std::span<const double>(bi->data)
                                                  : std::span<const double>(bi->data).subspan(i * k * p, k * p);
                         if (ai->requires_grad)
                           kernels::gemm_nt_acc(m, k, p, gi, bsub,
                                                std::span<double>(ai->grad_buffer()).subspan(i * m * k, m * k));
                         if (bi->requires_grad) {
                           auto& gb = bi->grad_buffer();
                           kernels::gemm_tn_acc(m, k, p, std::span<const double>(ai->data).subspan(i * m * k, m * k), gi,
                                                shared ? std::span<double>(gb) : std::span<double>(gb).subspan(i * k * p, k * p));
                         }
                       }
                     });
}

Tensor transpose_last2(const Tensor& x) {
  if (x.rank() < 2) throw ShapeError("transpose_last2: rank < 2");
  const std::size_t m = x.dim(-2), n = x.dim(-1);
  const std::size_t batch = x.numel() / (m * n);
  Shape os = x.shape();
  std::swap(os[os.size() - 1], os[os.size() - 2]);
  const auto xv = x.data();
  std::vector<double> out(x.numel());
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) out[b * m * n + j * m + i] = xv[b * m * n + i * n + j];
  auto xi = x.impl();
  return make_result(std::move(os), std::move(out), "transpose", {x},
                     [xi, batch, m, n](std::span<const double> g, std::span<const double>) {
                       auto& gx = xi->grad_buffer();
                       for (std::size_t b = 0; b < batch; ++b)
                         for (std::size_t i = 0; i < m; ++i)
                           for (std::size_t j = 0; j < n; ++j) gx[b * m * n + i * n + j] += g[b * m * n + j * m + i];
                     });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  if (w.rank() != 2) throw ShapeError("linear: weight must be Din x Dout");
  const std::size_t din = w.dim(0), dout = w.dim(1);
  if (x.dim(-1) != din)
    throw ShapeError("linear: input width " + std::to_string(x.dim(-1)) + " != " + std::to_string(din));
  if (b.defined() && b.numel() != dout) throw ShapeError("linear: bias size mismatch");
  const std::size_t rows = x.numel() / din;
  Shape os = x.shape();
  os.back() = dout;
  std::vector<double> out(rows * dout);
  kernels::gemm_nn(rows, din, dout, x.data(), w.data(), out);
  if (b.defined())
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < dout; ++j) out[r * dout + j] += b.at(j);
  auto xi = x.impl();
  auto wi = w.impl();
  auto bi = b.defined() ? b.impl() : nullptr;
  std::vector<Tensor> inputs{x, w};
  if (b.defined()) inputs.push_back(b);
  return make_result(std::move(os), std::move(out), "linear", inputs,
                     [xi, wi, bi, rows, din, dout](std::span<const double> g, std::span<const double>) {
                       if (xi->requires_grad) kernels::gemm_nt_acc(rows, din, dout, g, wi->data, xi->grad_buffer());
                       if (wi->requires_grad) kernels::gemm_tn_acc(rows, din, dout, xi->data, g, wi->grad_buffer());
                       if (bi && bi->requires_grad) {
                         auto& gb = bi->grad_buffer();
                         for (std::size_t r = 0; r < rows; ++r)
                           for (std::size_t j = 0; j < dout; ++j) gb[j] += g[r * dout + j];
                       }
                     });
}

Tensor conv2d(const Tensor& x, const Tensor& ker, const Tensor& bias, std::size_t stride,
              std::size_t pad) {
  const auto sv = spatial(x, "conv2d");
  if (ker.rank() != 4 || ker.dim(0) != ker.dim(1))
    throw ShapeError("conv2d: kernel must be k x k x Cin x Cout, got " + shape_str(ker.shape()));
  if (ker.dim(2) != sv.c)
    throw ShapeError("conv2d: kernel expects " + std::to_string(ker.dim(2)) + " input channels, got " +
                     std::to_string(sv.c));
  if (stride == 0) throw ShapeError("conv2d: stride must be positive");
  kernels::ConvGeometry g{sv.n, sv.h, sv.w, sv.c, ker.dim(3), ker.dim(0), stride, pad};
  if (g.h + 2 * pad < g.k || g.w + 2 * pad < g.k)
    throw ShapeError("conv2d: input " + shape_str(x.shape()) + " smaller than kernel " + std::to_string(g.k));
  if (bias.defined() && bias.numel() != g.cout) throw ShapeError("conv2d: bias size mismatch");
  const std::size_t oh = g.out_h(), ow = g.out_w();
  std::vector<double> out(g.n * oh * ow * g.cout);
  kernels::conv2d_forward(g, x.data(), ker.data(), bias.defined() ? bias.data() : std::span<const double>{}, out);
  auto xi = x.impl();
  auto ki = ker.impl();
  auto bi = bias.defined() ? bias.impl() : nullptr;
  std::vector<Tensor> inputs{x, ker};
  if (bias.defined()) inputs.push_back(bias);
  return make_result(spatial_shape(x, g.n, oh, ow, g.cout), std::move(out), "conv2d", inputs,
                     [xi, ki, bi, g](std::span<const double> go, std::span<const double>) {
                       if (xi->requires_grad) kernels::conv2d_backward_input(g, go, ki->data, xi->grad_buffer());
                       const bool wk = ki->requires_grad;
                       const bool wb = bi && bi->requires_grad;
                       if (wk || wb)
                         kernels::conv2d_backward_params(g, xi->data, go,
                                                         wk ? std::span<double>(ki->grad_buffer()) : std::span<double>{},
                                                         wb ? std::span<double>(bi->grad_buffer()) : std::span<double>{});
                     });
}

Tensor conv2d_same(const Tensor& x, const Tensor& ker, const Tensor& bias) {
  if (ker.rank() != 4) throw ShapeError("conv2d: kernel must be rank 4");
  const std::size_t k = ker.dim(0);
  if (k % 2 == 0) throw ShapeError("conv2d: same padding needs an odd kernel, got " + std::to_string(k));
  return conv2d(x, ker, bias, 1, (k - 1) / 2);
}

Tensor conv_transpose2d(const Tensor& x, const Tensor& ker, const Tensor& bias) {
  const auto sv = spatial(x, "conv_transpose2d");
  if (ker.rank() != 4 || ker.dim(0) != ker.dim(1) || ker.dim(2) != sv.c)
    throw ShapeError("conv_transpose2d: kernel must be s x s x Cin x Cout");
  const std::size_t s = ker.dim(0), cout = ker.dim(3), cin = sv.c;
  if (bias.defined() && bias.numel() != cout) throw ShapeError("conv_transpose2d: bias size mismatch");
  const std::size_t oh = sv.h * s, ow = sv.w * s;
  std::vector<double> out(sv.n * oh * ow * cout, 0.0);
  const auto xv = x.data();
  const auto kv = ker.data();
  for (std::size_t n = 0; n < sv.n; ++n)
    for (std::size_t y = 0; y < sv.h; ++y)
      for (std::size_t xx = 0; xx < sv.w; ++xx) {
        const double* src = xv.data() + ((n * sv.h + y) * sv.w + xx) * cin;
        for (std::size_t dy = 0; dy < s; ++dy)
          for (std::size_t dx = 0; dx < s; ++dx) {
            double* o = out.data() + ((n * oh + y * s + dy) * ow + xx * s + dx) * cout;
            if (bias.defined())
              for (std::size_t co = 0; co < cout; ++co) o[co] = bias.at(co);
            const double* kk = kv.data() + (dy * s + dx) * cin * cout;
            for (std::size_t ci = 0; ci < cin; ++ci) {
              const double a = src[ci];
              for (std::size_t co = 0; co < cout; ++co) o[co] += a * kk[ci * cout + co];
            }
          }
      }
  auto xi = x.impl();
  auto ki = ker.impl();
  auto bi = bias.defined() ? bias.impl() : nullptr;
  std::vector<Tensor> inputs{x, ker};
  if (bias.defined()) inputs.push_back(bias);
  const SpatialView v = sv;
  return make_result(spatial_shape(x, sv.n, oh, ow, cout), std::move(out), "conv_transpose2d", inputs,
                     [xi, ki, bi, v, s, cin, cout, oh, ow](std::span<const double> g, std::span<const double>) {
                       double* gx = xi->requires_grad ? xi->grad_buffer().data() : nullptr;
                       double* gk = ki->requires_grad ? ki->grad_buffer().data() : nullptr;
                       double* gb = bi && bi->requires_grad ? bi->grad_buffer().data() : nullptr;
                       for (std::size_t n = 0; n < v.n; ++n)
                         for (std::size_t y = 0; y < v.h; ++y)
                           for (std::size_t xx = 0; xx < v.w; ++xx) {
                             const std::size_t si = ((n * v.h + y) * v.w + xx) * cin;
                             for (std::size_t dy = 0; dy < s; ++dy)
                               for (std::size_t dx = 0; dx < s; ++dx) {
                                 const double* go = g.data() + ((n * oh + y * s + dy) * ow + xx * s + dx) * cout;
                                 const std::size_t tap = (dy * s + dx) * cin * cout;
                                 if (gb)
                                   for (std::size_t co = 0; co < cout; ++co) gb[co] += go[co];
                                 for (std::size_t ci = 0; ci < cin; ++ci) {
                                   const double a = xi->data[si + ci];
                                   const double* kr = ki->data.data() + tap + ci * cout;
                                   double acc = 0.0;
                                   for (std::size_t co = 0; co < cout; ++co) {
                                     acc += go[co] * kr[co];
                                     if (gk) gk[tap + ci * cout + co] += a * go[co];
                                   }
                                   if (gx) gx[si + ci] += acc;
                                 }
                               }
                           }
                     });
}

Tensor depthwise_causal_conv1d(const Tensor& x, const Tensor& w, const Tensor& b) {
  if (x.rank() != 2) throw ShapeError("depthwise_causal_conv1d: input must be L x E");
  const std::size_t len = x.dim(0), e = x.dim(1);
  if (w.rank() != 2 || w.dim(0) != e) throw ShapeError("depthwise_causal_conv1d: weight must be E x K");
  if (b.numel() != e) throw ShapeError("depthwise_causal_conv1d: bias must have E entries");
  const std::size_t k = w.dim(1);
  const auto xv = x.data();
  const auto wv = w.data();
  std::vector<double> out(len * e);
  for (std::size_t t = 0; t < len; ++t)
    for (std::size_t c = 0; c < e; ++c) {
      double s = b.at(c);
      for (std::size_t j = 0; j < k; ++j) {
        const long long src = static_cast<long long>(t + j) - static_cast<long long>(k - 1);
        if (src >= 0) s += wv[c * k + j] * xv[static_cast<std::size_t>(src) * e + c];
      }
      out[t * e + c] = s;
    }
  auto xi = x.impl();
  auto wi = w.impl();
  auto bi = b.impl();
  return make_result({len, e}, std::move(out), "dwconv1d", {x, w, b},
                     [xi, wi, bi, len, e, k](std::span<const double> g, std::span<const double>) {
                       double* gx = xi->requires_grad ? xi->grad_buffer().data() : nullptr;
                       double* gw = wi->requires_grad ? wi->grad_buffer().data() : nullptr;
                       double* gb = bi->requires_grad ? bi->grad_buffer().data() : nullptr;
                       for (std::size_t t = 0; t < len; ++t)
                         for (std::size_t c = 0; c < e; ++c) {
                           const double gv = g[t * e + c];
                           if (gb) gb[c] += gv;
                           for (std::size_t j = 0; j < k; ++j) {
                             const long long src = static_cast<long long>(t + j) - static_cast<long long>(k - 1);
                             if (src < 0) continue;
                             const std::size_t si = static_cast<std::size_t>(src) * e + c;
                             if (gw) gw[c * k + j] += gv * xi->data[si];
                             if (gx) gx[si] += gv * wi->data[c * k + j];
                           }
                         }
                     });
}

Tensor global_max_pool(const Tensor& x) {
  if (x.rank() != 3) throw ShapeError("global_max_pool: expected H x W x C");
  const std::size_t c = x.dim(2), hw = x.dim(0) * x.dim(1);
  const auto xv = x.data();
  auto arg = std::make_shared<std::vector<std::size_t>>(c, 0);
  std::vector<double> out(c, -std::numeric_limits<double>::infinity());
  for (std::size_t p = 0; p < hw; ++p)
    for (std::size_t ch = 0; ch < c; ++ch)
      if (xv[p * c + ch] > out[ch]) {  // strict: first row-major maximum wins ties
        out[ch] = xv[p * c + ch];
        (*arg)[ch] = p * c + ch;
      }
  auto xi = x.impl();
  return make_result({1, 1, c}, std::move(out), "global_max_pool", {x},
                     [xi, arg](std::span<const double> g, std::span<const double>) {
                       auto& gx = xi->grad_buffer();
                       for (std::size_t ch = 0; ch < g.size(); ++ch) gx[(*arg)[ch]] += g[ch];
                     });
}

Tensor global_avg_pool(const Tensor& x) {
  if (x.rank() != 3) throw ShapeError("global_avg_pool: expected H x W x C");
  const std::size_t c = x.dim(2), hw = x.dim(0) * x.dim(1);
  const auto xv = x.data();
  std::vector<double> out(c, 0.0);
  for (std::size_t p = 0; p < hw; ++p)
    for (std::size_t ch = 0; ch < c; ++ch) out[ch] += xv[p * c + ch];
  for (auto& v : out) v /= static_cast<double>(hw);
  auto xi = x.impl();
  return make_result({1, 1, c}, std::move(out), "global_avg_pool", {x},
                     [xi, hw, c](std::span<const double> g, std::span<const double>) {
                       auto& gx = xi->grad_buffer();
                       const double inv = 1.0 / static_cast<double>(hw);
                       for (std::size_t p = 0; p < hw; ++p)
                         for (std::size_t ch = 0; ch < c; ++ch) gx[p * c + ch] += g[ch] * inv;
                     });
}

Tensor avg_pool2d(const Tensor& x, std::size_t window) {
  if (x.rank() != 3) throw ShapeError("avg_pool2d: expected H x W x C");
  const std::size_t h = x.dim(0), w = x.dim(1), c = x.dim(2);
  if (window == 0 || h % window || w % window)
    throw ShapeError("avg_pool2d: window " + std::to_string(window) + " does not divide " + shape_str(x.shape()));
  const std::size_t oh = h / window, ow = w / window;
  const double inv = 1.0 / static_cast<double>(window * window);
  const auto xv = x.data();
  std::vector<double> out(oh * ow * c, 0.0);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t xx = 0; xx < w; ++xx)
      for (std::size_t ch = 0; ch < c; ++ch)
        out[((y / window) * ow + xx / window) * c + ch] += xv[(y * w + xx) * c + ch];
  for (auto& v : out) v *= inv;
  auto xi = x.impl();
  return make_result({oh, ow, c}, std::move(out), "avg_pool2d", {x},
                     [xi, h, w, c, window, ow, inv](std::span<const double> g, std::span<const double>) {
                       auto& gx = xi->grad_buffer();
                       for (std::size_t y = 0; y < h; ++y)
                         for (std::size_t xx = 0; xx < w; ++xx)
                           for (std::size_t ch = 0; ch < c; ++ch)
                             gx[(y * w + xx) * c + ch] += g[((y / window) * ow + xx / window) * c + ch] * inv;
                     });
}

Tensor upsample_bilinear(const Tensor& x, std::size_t out_h, std::size_t out_w) {
  if (x.rank() != 3) throw ShapeError("upsample_bilinear: expected H x W x C");
  if (out_h == 0 || out_w == 0) throw ShapeError("upsample_bilinear: empty output");
  const std::size_t h = x.dim(0), w = x.dim(1), c = x.dim(2);
  auto ty = std::make_shared<Taps>(bilinear_taps(h, out_h));
  auto tx = std::make_shared<Taps>(bilinear_taps(w, out_w));
  const auto xv = x.data();
  std::vector<double> out(out_h * out_w * c);
  for (std::size_t i = 0; i < out_h; ++i) {
    const double fy = ty->frac[i];
    for (std::size_t j = 0; j < out_w; ++j) {
      const double fx = tx->frac[j];
      const double* p00 = xv.data() + (ty->lo[i] * w + tx->lo[j]) * c;
      const double* p01 = xv.data() + (ty->lo[i] * w + tx->hi[j]) * c;
      const double* p10 = xv.data() + (ty->hi[i] * w + tx->lo[j]) * c;
      const double* p11 = xv.data() + (ty->hi[i] * w + tx->hi[j]) * c;
      double* o = out.data() + (i * out_w + j) * c;
      for (std::size_t ch = 0; ch < c; ++ch)
        o[ch] = (1 - fy) * ((1 - fx) * p00[ch] + fx * p01[ch]) + fy * ((1 - fx) * p10[ch] + fx * p11[ch]);
    }
  }
  auto xi = x.impl();
  return make_result({out_h, out_w, c}, std::move(out), "upsample_bilinear", {x},
                     [xi, ty, tx, w, c, out_h, out_w](std::span<const double> g, std::span<const double>) {
                       auto& gx = xi->grad_buffer();
                       for (std::size_t i = 0; i < out_h; ++i) {
                         const double fy = ty->frac[i];
                         for (std::size_t j = 0; j < out_w; ++j) {
                           const double fx = tx->frac[j];
                           const double* go = g.data() + (i * out_w + j) * c;
                           const std::size_t i00 = (ty->lo[i] * w + tx->lo[j]) * c;
                           const std::size_t i01 = (ty->lo[i] * w + tx->hi[j]) * c;
                           const std::size_t i10 = (ty->hi[i] * w + tx->lo[j]) * c;
                           const std::size_t i11 = (ty->hi[i] * w + tx->hi[j]) * c;
                           for (std::size_t ch = 0; ch < c; ++ch) {
                             gx[i00 + ch] += go[ch] * (1 - fy) * (1 - fx);
                             gx[i01 + ch] += go[ch] * (1 - fy) * fx;
                             gx[i10 + ch] += go[ch] * fy * (1 - fx);
                             gx[i11 + ch] += go[ch] * fy * fx;
                           }
                         }
                       }
                     });
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const std::size_t ax = norm_axis(axis, parts[0].rank());
  Shape os = parts[0].shape();
  os[ax] = 0;
  for (const auto& t : parts) {
    if (t.rank() != os.size()) throw ShapeError("concat: rank mismatch");
    for (std::size_t i = 0; i < os.size(); ++i)
      if (i != ax && t.shape()[i] != parts[0].shape()[i])
        throw ShapeError("concat: shape mismatch " + shape_str(t.shape()) + " vs " + shape_str(parts[0].shape()));
    os[ax] += t.shape()[ax];
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < ax; ++i) outer *= os[i];
  for (std::size_t i = ax + 1; i < os.size(); ++i) inner *= os[i];
  const std::size_t total_ax = os[ax];
  std::vector<double> out(shape_numel(os));
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& t : parts) {
    offsets.push_back(off);
    const std::size_t len = t.shape()[ax] * inner;
    const auto tv = t.data();
    for (std::size_t o = 0; o < outer; ++o)
      std::copy(tv.begin() + static_cast<std::ptrdiff_t>(o * len), tv.begin() + static_cast<std::ptrdiff_t>((o + 1) * len),
                out.begin() + static_cast<std::ptrdiff_t>(o * total_ax * inner + off * inner));
    off += t.shape()[ax];
  }
  std::vector<std::shared_ptr<TensorImpl>> impls;
  std::vector<std::size_t> sizes;
  for (const auto& t : parts) {
    impls.push_back(t.impl());
    sizes.push_back(t.shape()[ax]);
  }
  return make_result(std::move(os), std::move(out), "concat", parts,
                     [impls, sizes, offsets, outer, inner, total_ax](std::span<const double> g, std::span<const double>) {
                       for (std::size_t p = 0; p < impls.size(); ++p) {
                         if (!impls[p]->requires_grad) continue;
                         auto& gp = impls[p]->grad_buffer();
                         const std::size_t len = sizes[p] * inner;
                         for (std::size_t o = 0; o < outer; ++o)
                           for (std::size_t i = 0; i < len; ++i)
                             gp[o * len + i] += g[o * total_ax * inner + offsets[p] * inner + i];
                       }
                     });
}

Tensor slice(const Tensor& x, int axis, std::size_t begin, std::size_t end) {
  const std::size_t ax = norm_axis(axis, x.rank());
  if (begin >= end || end > x.shape()[ax]) throw ShapeError("slice: bad range");
  Shape os = x.shape();
  os[ax] = end - begin;
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < ax; ++i) outer *= os[i];
  for (std::size_t i = ax + 1; i < os.size(); ++i) inner *= os[i];
  const std::size_t full = x.shape()[ax];
  const std::size_t len = (end - begin) * inner;
  const auto xv = x.data();
  std::vector<double> out(outer * len);
  for (std::size_t o = 0; o < outer; ++o)
    std::copy(xv.begin() + static_cast<std::ptrdiff_t>(o * full * inner + begin * inner),
              xv.begin() + static_cast<std::ptrdiff_t>(o * full * inner + begin * inner + len),
              out.begin() + static_cast<std::ptrdiff_t>(o * len));
  auto xi = x.impl();
  return make_result(std::move(os), std::move(out), "slice", {x},
                     [xi, outer, inner, full, begin, len](std::span<const double> g, std::span<const double>) {
                       auto& gx = xi->grad_buffer();
                       for (std::size_t o = 0; o < outer; ++o)
                         for (std::size_t i = 0; i < len; ++i) gx[o * full * inner + begin * inner + i] += g[o * len + i];
                     });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel())
    throw ShapeError("reshape: " + shape_str(x.shape()) + " -> " + shape_str(shape));
  auto xi = x.impl();
  return make_result(std::move(shape), x.values(), "reshape", {x},
                     [xi](std::span<const double> g, std::span<const double>) { xi->accumulate(g); });
}

Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  auto xi = x.impl();
  return make_result({1}, {s}, "sum", {x}, [xi](std::span<const double> g, std::span<const double>) {
    auto& gx = xi->grad_buffer();
    for (auto& v : gx) v += g[0];
  });
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

Tensor bce_with_logits(const Tensor& logits, const Tensor& target) {
  if (logits.shape() != target.shape())
    throw ShapeError("bce_with_logits: " + shape_str(logits.shape()) + " vs " + shape_str(target.shape()));
  const auto xv = logits.data();
  const auto tv = target.data();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i)
    out[i] = std::max(xv[i], 0.0) - xv[i] * tv[i] + std::log1p(std::exp(-std::abs(xv[i])));
  auto xi = logits.impl();
  auto ti = target.impl();
  return make_result(logits.shape(), std::move(out), "bce_with_logits", {logits},
                     [xi, ti](std::span<const double> g, std::span<const double>) {
                       auto& gx = xi->grad_buffer();
                       for (std::size_t i = 0; i < g.size(); ++i)
                         gx[i] += g[i] * (sigmoid_scalar(xi->data[i]) - ti->data[i]);
                     });
}

Tensor selective_scan(const Tensor& u, const Tensor& delta, const Tensor& a, const Tensor& b,
                      const Tensor& c, const Tensor& d, std::size_t chunk) {
  if (u.rank() != 2) throw ShapeError("selective_scan: u must be L x E");
  const std::size_t len = u.dim(0), e = u.dim(1);
  if (a.rank() != 2 || a.dim(0) != e) throw ShapeError("selective_scan: A must be E x N");
  const std::size_t n = a.dim(1);
  if (delta.shape() != u.shape()) throw ShapeError("selective_scan: delta must match u");
  if (b.shape() != Shape{len, n} || c.shape() != Shape{len, n})
    throw ShapeError("selective_scan: B and C must be L x N");
  if (d.numel() != e) throw ShapeError("selective_scan: D must have E entries");
  const kernels::ScanDims dims{len, e, n};
  std::vector<double> y(len * e);
  auto states = std::make_shared<std::vector<double>>();
  if (chunk == 0) {
    states->resize(len * e * n);
    kernels::scan_forward_seq(dims, u.data(), delta.data(), a.data(), b.data(), c.data(), d.data(), y, *states);
  } else {
    kernels::scan_forward_chunked(dims, chunk, u.data(), delta.data(), a.data(), b.data(), c.data(), d.data(), y);
  }
  auto ui = u.impl(), di = delta.impl(), ai = a.impl(), bi = b.impl(), ci = c.impl(), dd = d.impl();
  return make_result({len, e}, std::move(y), "selective_scan", {u, delta, a, b, c, d},
                     [ui, di, ai, bi, ci, dd, dims, states](std::span<const double> g, std::span<const double>) {
                       if (states->empty()) {
                         states->resize(dims.len * dims.channels * dims.state);
                         std::vector<double> scratch(dims.len * dims.channels);
                         kernels::scan_forward_seq(dims, ui->data, di->data, ai->data, bi->data, ci->data, dd->data,
                                                   scratch, *states);
                       }
                       auto grad_of = [](const std::shared_ptr<TensorImpl>& t) {
                         return t->requires_grad ? std::span<double>(t->grad_buffer()) : std::span<double>{};
                       };
                       kernels::scan_backward(dims, ui->data, di->data, ai->data, bi->data, ci->data, dd->data,
                                              *states, g, grad_of(ui), grad_of(di), grad_of(ai), grad_of(bi),
                                              grad_of(ci), grad_of(dd));
                     });
}

}  // namespace smamba::ops
