#pragma once

// Raw numeric kernels over contiguous row-major buffers. The top-level
// namespace holds the OpenMP-parallel versions used by the differentiable
// ops; `reference` holds plain serial loops kept as test oracles and as the
// benchmark baseline. Every parallel kernel assigns each output element to
// exactly one thread with a fixed reduction order, so results do not depend
// on the thread count.

#include <cstddef>
#include <span>

namespace smamba::kernels {

struct ConvGeometry {
  std::size_t n = 1, h = 0, w = 0, cin = 0, cout = 0;
  std::size_t k = 1, stride = 1, pad = 0;
  std::size_t out_h() const { return (h + 2 * pad - k) / stride + 1; }
  std::size_t out_w() const { return (w + 2 * pad - k) / stride + 1; }
};

// NHWC input, k x k x Cin x Cout kernel.
void conv2d_forward(const ConvGeometry& g, std::span<const double> in,
                    std::span<const double> ker, std::span<const double> bias,
                    std::span<double> out);
void conv2d_backward_input(const ConvGeometry& g, std::span<const double> grad_out,
                           std::span<const double> ker, std::span<double> grad_in);
// Accumulates into grad_ker and grad_bias (either may be empty to skip).
void conv2d_backward_params(const ConvGeometry& g, std::span<const double> in,
                            std::span<const double> grad_out, std::span<double> grad_ker,
                            std::span<double> grad_bias);

// C (m x p) = A (m x k) * B (k x p), overwriting C.
void gemm_nn(std::size_t m, std::size_t k, std::size_t p, std::span<const double> a,
             std::span<const double> b, std::span<double> c);
// C (m x k) += G (m x p) * B^T where B is (k x p).
void gemm_nt_acc(std::size_t m, std::size_t k, std::size_t p, std::span<const double> g,
                 std::span<const double> b, std::span<double> c);
// C (k x p) += A^T (k x m) * G (m x p) where A is (m x k).
void gemm_tn_acc(std::size_t m, std::size_t k, std::size_t p, std::span<const double> a,
                 std::span<const double> g, std::span<double> c);

// Selective scan over one sequence.
//   u, delta: L x E; a: E x N (already negative); b, c: L x N; d: E.
//   y: L x E. states (optional, L x E x N) receives h_t for every step.
struct ScanDims {
  std::size_t len = 0, channels = 0, state = 0;
};

void scan_forward_seq(const ScanDims& dims, std::span<const double> u,
                      std::span<const double> delta, std::span<const double> a,
                      std::span<const double> b, std::span<const double> c,
                      std::span<const double> d, std::span<double> y,
                      std::span<double> states);

// Chunk-parallel evaluation: local chunk states are composed through the
// cumulative decay, then each chunk is replayed from its true start state.
// With chunk >= len this performs exactly the sequential recurrence.
void scan_forward_chunked(const ScanDims& dims, std::size_t chunk, std::span<const double> u,
                          std::span<const double> delta, std::span<const double> a,
                          std::span<const double> b, std::span<const double> c,
                          std::span<const double> d, std::span<double> y);

// Reverse recurrence. Gradients are accumulated (not overwritten); any
// output span may be empty to skip it.
void scan_backward(const ScanDims& dims, std::span<const double> u,
                   std::span<const double> delta, std::span<const double> a,
                   std::span<const double> b, std::span<const double> c,
                   std::span<const double> d, std::span<const double> states,
                   std::span<const double> grad_y, std::span<double> grad_u,
                   std::span<double> grad_delta, std::span<double> grad_a,
                   std::span<double> grad_b, std::span<double> grad_c,
                   std::span<double> grad_d);

// Number of threads the parallel kernels may use (honours SMAMBA_THREADS).
int max_threads();
void set_max_threads(int n);

namespace reference {

void conv2d_forward(const ConvGeometry& g, std::span<const double> in,
                    std::span<const double> ker, std::span<const double> bias,
                    std::span<double> out);
void conv2d_backward_input(const ConvGeometry& g, std::span<const double> grad_out,
                           std::span<const double> ker, std::span<double> grad_in);
void conv2d_backward_params(const ConvGeometry& g, std::span<const double> in,
                            std::span<const double> grad_out, std::span<double> grad_ker,
                            std::span<double> grad_bias);
void gemm_nn(std::size_t m, std::size_t k, std::size_t p, std::span<const double> a,
             std::span<const double> b, std::span<double> c);

}  // namespace reference

}  // namespace smamba::kernels
