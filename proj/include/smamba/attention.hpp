#pragma once

#include <cstddef>
#include <string>

#include "smamba/params.hpp"
#include "smamba/tensor.hpp"

namespace smamba {

struct AttentionParams {
  std::size_t heads = 1;
  Tensor wq, bq, wk, bk, wv, bv, wo, bo;  // dim x dim weights, dim biases
};

struct LayerNormParams {
  Tensor gamma, beta;
};

struct MlpParams {
  Tensor w1, b1, w2, b2;
};

AttentionParams init_attention(std::size_t dim, std::size_t heads, CounterRng& rng);
LayerNormParams init_layer_norm(std::size_t dim);
MlpParams init_mlp(std::size_t din, std::size_t hidden, std::size_t dout, CounterRng& rng);

void register_attention(ParamSet& set, const std::string& prefix, const AttentionParams& p,
                        ParamGroup group);
void register_layer_norm(ParamSet& set, const std::string& prefix, const LayerNormParams& p,
                         ParamGroup group);
void register_mlp(ParamSet& set, const std::string& prefix, const MlpParams& p, ParamGroup group);

// Multi-head scaled dot-product attention. q_in: Tq x dim, k_in/v_in: Tk x dim.
Tensor attention(const Tensor& q_in, const Tensor& k_in, const Tensor& v_in,
                 const AttentionParams& p);

Tensor apply_layer_norm(const Tensor& x, const LayerNormParams& p);
// fc2(gelu(fc1 x))
Tensor apply_mlp(const Tensor& x, const MlpParams& p);

// Fixed 2-D sinusoidal position code, (gh*gw) x dim, row-major over the
// grid. The first half of the channels encodes y, the second half x.
Tensor sinusoidal_position_2d(std::size_t gh, std::size_t gw, std::size_t dim);

}  // namespace smamba
