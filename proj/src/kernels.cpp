#include "smamba/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace smamba::kernels {

namespace {

int g_threads = -1;

int resolve_threads() {
  if (g_threads > 0) return g_threads;
  int n = 1;
#ifdef _OPENMP
  n = omp_get_max_threads();
#endif
  if (const char* env = std::getenv("SMAMBA_THREADS")) {
    const int cap = std::atoi(env);
    if (cap > 0) n = std::min(n, cap);
  }
  g_threads = std::max(1, n);
  return g_threads;
}

// Below this many multiply-adds a parallel region costs more than it saves.
constexpr std::size_t kParallelWork = 1u << 15;

inline bool go_parallel(std::size_t work) { return work >= kParallelWork && resolve_threads() > 1; }

}  // namespace

int max_threads() { return resolve_threads(); }
void set_max_threads(int n) { g_threads = std::max(1, n); }

namespace {

constexpr std::size_t kMr = 4;  // micro-tile rows
constexpr std::size_t kNr = 8;  // micro-tile columns

using vec4 = double __attribute__((vector_size(32)));

inline vec4 load4(const double* p) {
  vec4 v;
  std::memcpy(&v, p, sizeof(v));
  return v;
}

inline void store4(double* p, vec4 v) { std::memcpy(p, &v, sizeof(v)); }

// C[0:kMr, 0:kNr] (+)= A B on a full tile. Element (r, kk) of A sits at
// a[r * rs + kk * ks], so the same kernel serves A and A^T. Each output
// element sums its k products in ascending order, matching the edge path.
inline void micro_tile(std::size_t k, const double* a, std::size_t rs, std::size_t ks, const double* b,
                       std::size_t ldb, double* c, std::size_t ldc, bool accumulate) {
  vec4 acc[kMr][2] = {};
  for (std::size_t kk = 0; kk < k; ++kk) {
    const vec4 b0 = load4(b + kk * ldb);
    const vec4 b1 = load4(b + kk * ldb + 4);
    for (std::size_t r = 0; r < kMr; ++r) {
      const double av = a[r * rs + kk * ks];
      acc[r][0] += av * b0;
      acc[r][1] += av * b1;
    }
  }
  for (std::size_t r = 0; r < kMr; ++r) {
    double* cr = c + r * ldc;
    if (accumulate) {
      store4(cr, load4(cr) + acc[r][0]);
      store4(cr + 4, load4(cr + 4) + acc[r][1]);
    } else {
      store4(cr, acc[r][0]);
      store4(cr + 4, acc[r][1]);
    }
  }
}

inline void edge_tile(std::size_t rows, std::size_t cols, std::size_t k, const double* a, std::size_t rs,
                      std::size_t ks, const double* b, std::size_t ldb, double* c, std::size_t ldc,
                      bool accumulate) {
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < cols; ++j) {
      double s = 0.0;
      for (std::size_t kk = 0; kk < k; ++kk) s += a[r * rs + kk * ks] * b[kk * ldb + j];
      c[r * ldc + j] = accumulate ? c[r * ldc + j] + s : s;
    }
}

// Row-major C (m x p) (+)= op(A) (m x k) * B (k x p), parallel over row
// panels. With trans_a the stored A is k x m.
void gemm_core(std::size_t m, std::size_t k, std::size_t p, const double* a, const double* b,
               double* c, bool accumulate, bool trans_a = false) {
  const std::size_t panels = (m + kMr - 1) / kMr;
  const std::size_t rs = trans_a ? 1 : k, ks = trans_a ? m : 1;
  const long long np = static_cast<long long>(panels);
#pragma omp parallel for schedule(static) num_threads(resolve_threads()) if (go_parallel(m * k * p))
  for (long long pi = 0; pi < np; ++pi) {
    const std::size_t i0 = static_cast<std::size_t>(pi) * kMr;
    const std::size_t rows = std::min(kMr, m - i0);
    const double* ai = a + i0 * rs;
    double* ci = c + i0 * p;
    std::size_t j0 = 0;
    if (rows == kMr)
      for (; j0 + kNr <= p; j0 += kNr) micro_tile(k, ai, rs, ks, b + j0, p, ci + j0, p, accumulate);
    if (j0 < p || rows < kMr) {
      const std::size_t jstart = rows == kMr ? j0 : 0;
      edge_tile(rows, p - jstart, k, ai, rs, ks, b + jstart, p, ci + jstart, p, accumulate);
    }
  }
}

std::vector<double> transposed(std::span<const double> x, std::size_t rows, std::size_t cols) {
  std::vector<double> t(rows * cols);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) t[c * rows + r] = x[r * cols + c];
  return t;
}

// Patch rows for output pixels [p0, p1): k*k*Cin columns in kernel order,
// zeros where the window leaves the image.
void im2col_rows(const ConvGeometry& g, std::span<const double> in, std::size_t p0, std::size_t p1,
                 double* out) {
  const std::size_t oh = g.out_h(), ow = g.out_w();
  const std::size_t cols = g.k * g.k * g.cin;
  std::fill(out, out + (p1 - p0) * cols, 0.0);
  for (std::size_t px = p0; px < p1; ++px) {
    const std::size_t n = px / (oh * ow);
    const std::size_t oy = (px / ow) % oh;
    const std::size_t ox = px % ow;
    double* row = out + (px - p0) * cols;
    for (std::size_t dy = 0; dy < g.k; ++dy) {
      const long long iy = static_cast<long long>(oy * g.stride + dy) - static_cast<long long>(g.pad);
      if (iy < 0 || iy >= static_cast<long long>(g.h)) continue;
      for (std::size_t dx = 0; dx < g.k; ++dx) {
        const long long ix = static_cast<long long>(ox * g.stride + dx) - static_cast<long long>(g.pad);
        if (ix < 0 || ix >= static_cast<long long>(g.w)) continue;
        const double* src = in.data() + ((n * g.h + static_cast<std::size_t>(iy)) * g.w +
                                         static_cast<std::size_t>(ix)) * g.cin;
        std::copy(src, src + g.cin, row + (dy * g.k + dx) * g.cin);
      }
    }
  }
}

// Pixels per patch block; sized so a block of patch rows stays in L2.
constexpr std::size_t kPixelBlock = 256;

bool is_pointwise(const ConvGeometry& g) { return g.k == 1 && g.stride == 1 && g.pad == 0; }

}  // namespace

void conv2d_forward(const ConvGeometry& g, std::span<const double> in,
                    std::span<const double> ker, std::span<const double> bias,
                    std::span<double> out) {
  const std::size_t pixels = g.n * g.out_h() * g.out_w();
  const std::size_t cols = g.k * g.k * g.cin;
  if (is_pointwise(g)) {
    gemm_core(pixels, cols, g.cout, in.data(), ker.data(), out.data(), false);
  } else {
    std::vector<double> patches(std::min(pixels, kPixelBlock) * cols);
    for (std::size_t p0 = 0; p0 < pixels; p0 += kPixelBlock) {
      const std::size_t p1 = std::min(pixels, p0 + kPixelBlock);
      im2col_rows(g, in, p0, p1, patches.data());
      gemm_core(p1 - p0, cols, g.cout, patches.data(), ker.data(), out.data() + p0 * g.cout, false);
    }
  }
  if (!bias.empty())
    for (std::size_t p = 0; p < pixels; ++p)
      for (std::size_t co = 0; co < g.cout; ++co) out[p * g.cout + co] += bias[co];
}

void conv2d_backward_input(const ConvGeometry& g, std::span<const double> grad_out,
                           std::span<const double> ker, std::span<double> grad_in) {
  const std::size_t oh = g.out_h(), ow = g.out_w();
  const std::size_t taps = g.k * g.k;
  // Kernel transposed per tap to [co][ci] so the inner loop runs over ci.
  std::vector<double> kt(taps * g.cout * g.cin);
  for (std::size_t t = 0; t < taps; ++t)
    for (std::size_t ci = 0; ci < g.cin; ++ci)
      for (std::size_t co = 0; co < g.cout; ++co)
        kt[(t * g.cout + co) * g.cin + ci] = ker[(t * g.cin + ci) * g.cout + co];

  const long long nrows = static_cast<long long>(g.n * g.h);
  const std::size_t work = g.n * oh * ow * taps * g.cin * g.cout;
#pragma omp parallel for schedule(static) num_threads(resolve_threads()) if (go_parallel(work))
  for (long long r = 0; r < nrows; ++r) {
    const std::size_t n = static_cast<std::size_t>(r) / g.h;
    const std::size_t iy = static_cast<std::size_t>(r) % g.h;
    for (std::size_t ix = 0; ix < g.w; ++ix) {
      double* acc = grad_in.data() + ((n * g.h + iy) * g.w + ix) * g.cin;
      for (std::size_t dy = 0; dy < g.k; ++dy) {
        const long long ty = static_cast<long long>(iy + g.pad) - static_cast<long long>(dy);
        if (ty < 0 || ty % static_cast<long long>(g.stride) != 0) continue;
        const std::size_t oy = static_cast<std::size_t>(ty) / g.stride;
        if (oy >= oh) continue;
        for (std::size_t dx = 0; dx < g.k; ++dx) {
          const long long tx = static_cast<long long>(ix + g.pad) - static_cast<long long>(dx);
          if (tx < 0 || tx % static_cast<long long>(g.stride) != 0) continue;
          const std::size_t ox = static_cast<std::size_t>(tx) / g.stride;
          if (ox >= ow) continue;
          const double* go = grad_out.data() + ((n * oh + oy) * ow + ox) * g.cout;
          const double* kk = kt.data() + (dy * g.k + dx) * g.cout * g.cin;
          for (std::size_t co = 0; co < g.cout; ++co) {
            const double gv = go[co];
            const double* row = kk + co * g.cin;
            for (std::size_t ci = 0; ci < g.cin; ++ci) acc[ci] += gv * row[ci];
          }
        }
      }
    }
  }
}

void conv2d_backward_params(const ConvGeometry& g, std::span<const double> in,
                            std::span<const double> grad_out, std::span<double> grad_ker,
                            std::span<double> grad_bias) {
  const std::size_t pixels = g.n * g.out_h() * g.out_w();
  if (!grad_bias.empty()) {
    for (std::size_t p = 0; p < pixels; ++p)
      for (std::size_t co = 0; co < g.cout; ++co) grad_bias[co] += grad_out[p * g.cout + co];
  }
  if (grad_ker.empty()) return;
  const std::size_t cols = g.k * g.k * g.cin;
  // grad_ker (cols x Cout) += patches^T (cols x pixels) * grad_out (pixels x Cout),
  // one pixel block at a time.
  if (is_pointwise(g)) {
    gemm_core(cols, pixels, g.cout, in.data(), grad_out.data(), grad_ker.data(), true, true);
    return;
  }
  std::vector<double> patches(std::min(pixels, kPixelBlock) * cols);
  for (std::size_t p0 = 0; p0 < pixels; p0 += kPixelBlock) {
    const std::size_t p1 = std::min(pixels, p0 + kPixelBlock);
    im2col_rows(g, in, p0, p1, patches.data());
    gemm_core(cols, p1 - p0, g.cout, patches.data(), grad_out.data() + p0 * g.cout, grad_ker.data(), true,
              true);
  }
}

void gemm_nn(std::size_t m, std::size_t k, std::size_t p, std::span<const double> a,
             std::span<const double> b, std::span<double> c) {
  gemm_core(m, k, p, a.data(), b.data(), c.data(), false);
}

void gemm_nt_acc(std::size_t m, std::size_t k, std::size_t p, std::span<const double> g,
                 std::span<const double> b, std::span<double> c) {
  const std::vector<double> bt = transposed(b, k, p);  // p x k
  gemm_core(m, p, k, g.data(), bt.data(), c.data(), true);
}

void gemm_tn_acc(std::size_t m, std::size_t k, std::size_t p, std::span<const double> a,
                 std::span<const double> g, std::span<double> c) {
  gemm_core(k, m, p, a.data(), g.data(), c.data(), true, true);
}

namespace {

// One recurrence step for all channels; shared by the sequential and the
// chunked paths so that both perform identical arithmetic.
inline void scan_step(const ScanDims& dims, std::size_t t, std::span<const double> u,
                      std::span<const double> delta, std::span<const double> a,
                      std::span<const double> b, std::span<const double> c,
                      std::span<const double> d, double* h, double* y) {
  const std::size_t E = dims.channels, N = dims.state;
  const double* bt = b.data() + t * N;
  const double* ct = c.data() + t * N;
  for (std::size_t e = 0; e < E; ++e) {
    const double dt = delta[t * E + e];
    const double ut = u[t * E + e];
    const double* ae = a.data() + e * N;
    double* he = h + e * N;
    double acc = 0.0;
    for (std::size_t n = 0; n < N; ++n) {
      const double decay = std::exp(dt * ae[n]);
      he[n] = decay * he[n] + dt * bt[n] * ut;
      acc += ct[n] * he[n];
    }
    y[t * E + e] = acc + d[e] * ut;
  }
}

}  // namespace

void scan_forward_seq(const ScanDims& dims, std::span<const double> u,
                      std::span<const double> delta, std::span<const double> a,
                      std::span<const double> b, std::span<const double> c,
                      std::span<const double> d, std::span<double> y,
                      std::span<double> states) {
  const std::size_t EN = dims.channels * dims.state;
  std::vector<double> h(EN, 0.0);
  for (std::size_t t = 0; t < dims.len; ++t) {
    scan_step(dims, t, u, delta, a, b, c, d, h.data(), y.data());
    if (!states.empty()) std::copy(h.begin(), h.end(), states.begin() + static_cast<std::ptrdiff_t>(t * EN));
  }
}

void scan_forward_chunked(const ScanDims& dims, std::size_t chunk, std::span<const double> u,
                          std::span<const double> delta, std::span<const double> a,
                          std::span<const double> b, std::span<const double> c,
                          std::span<const double> d, std::span<double> y) {
  const std::size_t E = dims.channels, N = dims.state, EN = E * N;
  const std::size_t nchunks = (dims.len + chunk - 1) / chunk;
  std::vector<double> local_end(nchunks * EN, 0.0);
  std::vector<double> decay_prod(nchunks * EN, 1.0);
  const long long nc = static_cast<long long>(nchunks);

  // Pass 1: each chunk from a zero state, tracking its total decay.
#pragma omp parallel for schedule(static) num_threads(resolve_threads()) if (nchunks > 1 && resolve_threads() > 1)
  for (long long ci = 0; ci < nc; ++ci) {
    if (ci + 1 == nc) continue;  // last chunk's summary is never consumed
    const std::size_t t0 = static_cast<std::size_t>(ci) * chunk;
    const std::size_t t1 = std::min(dims.len, t0 + chunk);
    double* h = local_end.data() + static_cast<std::size_t>(ci) * EN;
    double* p = decay_prod.data() + static_cast<std::size_t>(ci) * EN;
    for (std::size_t t = t0; t < t1; ++t) {
      for (std::size_t e = 0; e < E; ++e) {
        const double dt = delta[t * E + e];
        const double ut = u[t * E + e];
        for (std::size_t n = 0; n < N; ++n) {
          const double decay = std::exp(dt * a[e * N + n]);
          h[e * N + n] = decay * h[e * N + n] + dt * b[t * N + n] * ut;
          p[e * N + n] *= decay;
        }
      }
    }
  }

  // Pass 2: carry true start states across chunk boundaries.
  std::vector<double> start(nchunks * EN, 0.0);
  for (std::size_t ci = 1; ci < nchunks; ++ci)
    for (std::size_t i = 0; i < EN; ++i)
      start[ci * EN + i] = decay_prod[(ci - 1) * EN + i] * start[(ci - 1) * EN + i] +
                           local_end[(ci - 1) * EN + i];

  // Pass 3: replay every chunk from its start state.
#pragma omp parallel for schedule(static) num_threads(resolve_threads()) if (nchunks > 1 && resolve_threads() > 1)
  for (long long ci = 0; ci < nc; ++ci) {
    const std::size_t t0 = static_cast<std::size_t>(ci) * chunk;
    const std::size_t t1 = std::min(dims.len, t0 + chunk);
    std::vector<double> h(start.begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(ci) * EN),
                          start.begin() + static_cast<std::ptrdiff_t>((static_cast<std::size_t>(ci) + 1) * EN));
    for (std::size_t t = t0; t < t1; ++t) scan_step(dims, t, u, delta, a, b, c, d, h.data(), y.data());
  }
}

void scan_backward(const ScanDims& dims, std::span<const double> u,
                   std::span<const double> delta, std::span<const double> a,
                   std::span<const double> b, std::span<const double> c,
                   std::span<const double> d, std::span<const double> states,
                   std::span<const double> grad_y, std::span<double> grad_u,
                   std::span<double> grad_delta, std::span<double> grad_a,
                   std::span<double> grad_b, std::span<double> grad_c,
                   std::span<double> grad_d) {
  const std::size_t E = dims.channels, N = dims.state, EN = E * N;
  std::vector<double> dh(EN, 0.0);
  for (std::size_t t = dims.len; t-- > 0;) {
    const double* ht = states.data() + t * EN;
    const double* hp = t > 0 ? states.data() + (t - 1) * EN : nullptr;
    for (std::size_t e = 0; e < E; ++e) {
      const double gy = grad_y[t * E + e];
      const double dt = delta[t * E + e];
      const double ut = u[t * E + e];
      if (!grad_d.empty()) grad_d[e] += gy * ut;
      if (!grad_u.empty()) grad_u[t * E + e] += gy * d[e];
      for (std::size_t n = 0; n < N; ++n) {
        const std::size_t i = e * N + n;
        const double an = a[i];
        dh[i] += gy * c[t * N + n];
        if (!grad_c.empty()) grad_c[t * N + n] += gy * ht[i];
        const double decay = std::exp(dt * an);
        const double g = dh[i];
        const double dd = hp ? g * hp[i] : 0.0;
        if (!grad_delta.empty()) grad_delta[t * E + e] += dd * decay * an + g * b[t * N + n] * ut;
        if (!grad_a.empty()) grad_a[i] += dd * decay * dt;
        if (!grad_b.empty()) grad_b[t * N + n] += g * dt * ut;
        if (!grad_u.empty()) grad_u[t * E + e] += g * dt * b[t * N + n];
        dh[i] = g * decay;
      }
    }
  }
}

namespace reference {

void conv2d_forward(const ConvGeometry& g, std::span<const double> in,
                    std::span<const double> ker, std::span<const double> bias,
                    std::span<double> out) {
  const std::size_t oh = g.out_h(), ow = g.out_w();
  for (std::size_t n = 0; n < g.n; ++n)
    for (std::size_t oy = 0; oy < oh; ++oy)
      for (std::size_t ox = 0; ox < ow; ++ox)
        for (std::size_t co = 0; co < g.cout; ++co) {
          double s = bias.empty() ? 0.0 : bias[co];
          for (std::size_t dy = 0; dy < g.k; ++dy)
            for (std::size_t dx = 0; dx < g.k; ++dx) {
              const long long iy = static_cast<long long>(oy * g.stride + dy) - static_cast<long long>(g.pad);
              const long long ix = static_cast<long long>(ox * g.stride + dx) - static_cast<long long>(g.pad);
              if (iy < 0 || ix < 0 || iy >= static_cast<long long>(g.h) || ix >= static_cast<long long>(g.w))
                continue;
              for (std::size_t ci = 0; ci < g.cin; ++ci)
                s += in[((n * g.h + static_cast<std::size_t>(iy)) * g.w + static_cast<std::size_t>(ix)) * g.cin + ci] *
                     ker[((dy * g.k + dx) * g.cin + ci) * g.cout + co];
            }
          out[((n * oh + oy) * ow + ox) * g.cout + co] = s;
        }
}

void conv2d_backward_input(const ConvGeometry& g, std::span<const double> grad_out,
                           std::span<const double> ker, std::span<double> grad_in) {
  const std::size_t oh = g.out_h(), ow = g.out_w();
  for (std::size_t n = 0; n < g.n; ++n)
    for (std::size_t oy = 0; oy < oh; ++oy)
      for (std::size_t ox = 0; ox < ow; ++ox)
        for (std::size_t co = 0; co < g.cout; ++co) {
          const double gv = grad_out[((n * oh + oy) * ow + ox) * g.cout + co];
          for (std::size_t dy = 0; dy < g.k; ++dy)
            for (std::size_t dx = 0; dx < g.k; ++dx) {
              const long long iy = static_cast<long long>(oy * g.stride + dy) - static_cast<long long>(g.pad);
              const long long ix = static_cast<long long>(ox * g.stride + dx) - static_cast<long long>(g.pad);
              if (iy < 0 || ix < 0 || iy >= static_cast<long long>(g.h) || ix >= static_cast<long long>(g.w))
                continue;
              for (std::size_t ci = 0; ci < g.cin; ++ci)
                grad_in[((n * g.h + static_cast<std::size_t>(iy)) * g.w + static_cast<std::size_t>(ix)) * g.cin + ci] +=
                    gv * ker[((dy * g.k + dx) * g.cin + ci) * g.cout + co];
            }
        }
}

void conv2d_backward_params(const ConvGeometry& g, std::span<const double> in,
                            std::span<const double> grad_out, std::span<double> grad_ker,
                            std::span<double> grad_bias) {
  const std::size_t oh = g.out_h(), ow = g.out_w();
  for (std::size_t n = 0; n < g.n; ++n)
    for (std::size_t oy = 0; oy < oh; ++oy)
      for (std::size_t ox = 0; ox < ow; ++ox)
        for (std::size_t co = 0; co < g.cout; ++co) {
          const double gv = grad_out[((n * oh + oy) * ow + ox) * g.cout + co];
          if (!grad_bias.empty()) grad_bias[co] += gv;
          if (grad_ker.empty()) continue;
          for (std::size_t dy = 0; dy < g.k; ++dy)
            for (std::size_t dx = 0; dx < g.k; ++dx) {
              const long long iy = static_cast<long long>(oy * g.stride + dy) - static_cast<long long>(g.pad);
              const long long ix = static_cast<long long>(ox * g.stride + dx) - static_cast<long long>(g.pad);
              if (iy < 0 || ix < 0 || iy >= static_cast<long long>(g.h) || ix >= static_cast<long long>(g.w))
                continue;
              for (std::size_t ci = 0; ci < g.cin; ++ci)
                grad_ker[((dy * g.k + dx) * g.cin + ci) * g.cout + co] +=
                    gv * in[((n * g.h + static_cast<std::size_t>(iy)) * g.w + static_cast<std::size_t>(ix)) * g.cin + ci];
            }
        }
}

void gemm_nn(std::size_t m, std::size_t k, std::size_t p, std::span<const double> a,
             std::span<const double> b, std::span<double> c) {
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < p; ++j) {
      double s = 0.0;
      for (std::size_t kk = 0; kk < k; ++kk) s += a[i * k + kk] * b[kk * p + j];
      c[i * p + j] = s;
    }
}

}  // namespace reference

}  // namespace smamba::kernels
