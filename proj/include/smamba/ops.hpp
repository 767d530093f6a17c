#pragma once

// Differentiable tensor operations. Spatial maps are H x W x C (a leading
// batch axis N is accepted by the convolutions); "last axis" ops work on
// rows of the trailing dimension.

#include <cstddef>
#include <vector>

#include "smamba/tensor.hpp"

namespace smamba::ops {

// Elementwise with numpy-style broadcasting from size-1 (or missing
// leading) axes.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double s);
Tensor add_scalar(const Tensor& x, double s);

Tensor silu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor softplus(const Tensor& x);
Tensor gelu(const Tensor& x);  // erf form
Tensor exp(const Tensor& x);

Tensor layer_norm(const Tensor& x, const Tensor& gamma = {}, const Tensor& beta = {},
                  double eps = 1e-5);
Tensor softmax(const Tensor& x);

// a: [..., M, K]; b: [K, P] (shared) or [..., K, P] (same batch).
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose_last2(const Tensor& x);
// x: [..., Din], w: [Din, Dout], b: [Dout] or undefined.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);

// x: [N,] H x W x Cin, ker: k x k x Cin x Cout, bias: Cout or undefined.
Tensor conv2d(const Tensor& x, const Tensor& ker, const Tensor& bias, std::size_t stride,
              std::size_t pad);
// Odd k, zero padding (k-1)/2: output spatial size equals input.
Tensor conv2d_same(const Tensor& x, const Tensor& ker, const Tensor& bias);
// Non-overlapping transposed convolution, kernel side == stride.
Tensor conv_transpose2d(const Tensor& x, const Tensor& ker, const Tensor& bias);
// x: L x E, w: E x K, b: E. Causal left padding of K-1 zeros.
Tensor depthwise_causal_conv1d(const Tensor& x, const Tensor& w, const Tensor& b);

// H x W x C -> 1 x 1 x C.
Tensor global_max_pool(const Tensor& x);
Tensor global_avg_pool(const Tensor& x);
// Non-overlapping mean pool, window divides H and W.
Tensor avg_pool2d(const Tensor& x, std::size_t window);
// Bilinear resample, half-pixel centres (align_corners = false), edge clamp.
Tensor upsample_bilinear(const Tensor& x, std::size_t out_h, std::size_t out_w);

Tensor concat(const std::vector<Tensor>& parts, int axis);
Tensor slice(const Tensor& x, int axis, std::size_t begin, std::size_t end);
Tensor reshape(const Tensor& x, Shape shape);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

// Per-element binary cross entropy from logits against a constant target,
// max(x,0) - x*g + log(1 + exp(-|x|)).
Tensor bce_with_logits(const Tensor& logits, const Tensor& target);

// Selective scan, u/delta: L x E, a: E x N (negative), b/c: L x N, d: E.
// chunk == 0 runs the sequential recurrence; chunk > 0 the chunk-parallel
// forward. Backward always uses the sequential reverse recurrence.
Tensor selective_scan(const Tensor& u, const Tensor& delta, const Tensor& a, const Tensor& b,
                      const Tensor& c, const Tensor& d, std::size_t chunk = 0);

}  // namespace smamba::ops
