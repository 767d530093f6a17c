#include "smamba/attention.hpp"

#include <cmath>
#include <vector>

#include "smamba/ops.hpp"

namespace smamba {

AttentionParams init_attention(std::size_t dim, std::size_t heads, CounterRng& rng) {
  if (heads == 0 || dim % heads != 0) throw ShapeError("attention: dim must be divisible by heads");
  AttentionParams p;
  p.heads = heads;
  p.wq = fan_in_init({dim, dim}, rng);
  p.wk = fan_in_init({dim, dim}, rng);
  p.wv = fan_in_init({dim, dim}, rng);
  p.wo = fan_in_init({dim, dim}, rng);
  p.bq = zeros_init({dim});
  p.bk = zeros_init({dim});
  p.bv = zeros_init({dim});
  p.bo = zeros_init({dim});
  return p;
}

LayerNormParams init_layer_norm(std::size_t dim) {
  return {Tensor({dim}, 1.0), Tensor({dim}, 0.0)};
}

MlpParams init_mlp(std::size_t din, std::size_t hidden, std::size_t dout, CounterRng& rng) {
  return {fan_in_init({din, hidden}, rng), zeros_init({hidden}), fan_in_init({hidden, dout}, rng),
          zeros_init({dout})};
}

void register_attention(ParamSet& set, const std::string& prefix, const AttentionParams& p,
                        ParamGroup group) {
  set.add(prefix + ".wq", p.wq, group);
  set.add(prefix + ".bq", p.bq, group);
  set.add(prefix + ".wk", p.wk, group);
  set.add(prefix + ".bk", p.bk, group);
  set.add(prefix + ".wv", p.wv, group);
  set.add(prefix + ".bv", p.bv, group);
  set.add(prefix + ".wo", p.wo, group);
  set.add(prefix + ".bo", p.bo, group);
}

void register_layer_norm(ParamSet& set, const std::string& prefix, const LayerNormParams& p,
                         ParamGroup group) {
  set.add(prefix + ".gamma", p.gamma, group);
  set.add(prefix + ".beta", p.beta, group);
}

void register_mlp(ParamSet& set, const std::string& prefix, const MlpParams& p, ParamGroup group) {
  set.add(prefix + ".w1", p.w1, group);
  set.add(prefix + ".b1", p.b1, group);
  set.add(prefix + ".w2", p.w2, group);
  set.add(prefix + ".b2", p.b2, group);
}

Tensor attention(const Tensor& q_in, const Tensor& k_in, const Tensor& v_in,
                 const AttentionParams& p) {
  const Tensor q = ops::linear(q_in, p.wq, p.bq);
  const Tensor k = ops::linear(k_in, p.wk, p.bk);
  const Tensor v = ops::linear(v_in, p.wv, p.bv);
  const std::size_t dim = q.dim(1);
  const std::size_t dh = dim / p.heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Tensor> outs;
  outs.reserve(p.heads);
  for (std::size_t h = 0; h < p.heads; ++h) {
    Tensor qh = p.heads == 1 ? q : ops::slice(q, 1, h * dh, (h + 1) * dh);
    Tensor kh = p.heads == 1 ? k : ops::slice(k, 1, h * dh, (h + 1) * dh);
    Tensor vh = p.heads == 1 ? v : ops::slice(v, 1, h * dh, (h + 1) * dh);
    Tensor logits = ops::scale(ops::matmul(qh, ops::transpose_last2(kh)), scale);
    outs.push_back(ops::matmul(ops::softmax(logits), vh));
  }
  const Tensor merged = outs.size() == 1 ? outs.front() : ops::concat(outs, 1);
  return ops::linear(merged, p.wo, p.bo);
}

Tensor apply_layer_norm(const Tensor& x, const LayerNormParams& p) {
  return ops::layer_norm(x, p.gamma, p.beta);
}

Tensor apply_mlp(const Tensor& x, const MlpParams& p) {
  return ops::linear(ops::gelu(ops::linear(x, p.w1, p.b1)), p.w2, p.b2);
}

Tensor sinusoidal_position_2d(std::size_t gh, std::size_t gw, std::size_t dim) {
  if (dim % 4 != 0) throw ShapeError("position code: dim must be a multiple of 4");
  const std::size_t half = dim / 2;
  const std::size_t freqs = half / 2;
  Tensor pe({gh * gw, dim});
  auto out = pe.mutable_data();
  auto encode = [&](double pos, std::size_t offset, std::size_t row) {
    for (std::size_t i = 0; i < freqs; ++i) {
      const double omega = std::pow(10000.0, -static_cast<double>(i) / static_cast<double>(freqs));
      out[row * dim + offset + 2 * i] = std::sin(pos * omega);
      out[row * dim + offset + 2 * i + 1] = std::cos(pos * omega);
    }
  };
  for (std::size_t y = 0; y < gh; ++y)
    for (std::size_t x = 0; x < gw; ++x) {
      encode(static_cast<double>(y), 0, y * gw + x);
      encode(static_cast<double>(x), half, y * gw + x);
    }
  return pe;
}

}  // namespace smamba
