#include "smamba/encoder.hpp"

#include <string>

#include "smamba/ops.hpp"

namespace smamba {

EncoderParams init_encoder(const ModelConfig& cfg, CounterRng& backbone_rng, CounterRng& rng) {
  EncoderParams p;
  p.patch = cfg.patch;
  p.dim = cfg.dim;
  p.patch_w = fan_in_init({cfg.patch, cfg.patch, 3, cfg.dim}, backbone_rng);
  p.patch_b = uniform_init({cfg.dim}, 0.02, backbone_rng);
  for (std::size_t i = 0; i < cfg.depth; ++i) {
    VitBlockParams b;
    b.ln1 = init_layer_norm(cfg.dim);
    b.ln2 = init_layer_norm(cfg.dim);
    b.attn = init_attention(cfg.dim, cfg.heads, backbone_rng);
    b.mlp = init_mlp(cfg.dim, cfg.mlp_ratio * cfg.dim, cfg.dim, backbone_rng);
    p.blocks.push_back(std::move(b));
  }
  for (std::size_t i = 0; i < cfg.depth; ++i) {
    if (!cfg.injects_at(i)) {
      p.adapters.emplace_back();
      continue;
    }
    AdapterParams a;
    a.enhance = init_attention(cfg.dim, 1, rng);
    a.inject = init_attention(cfg.dim, 1, rng);
    a.down_w = fan_in_init({cfg.dim, cfg.adapter_bottleneck}, rng);
    a.down_b = zeros_init({cfg.adapter_bottleneck});
    a.up_w = fan_in_init({cfg.adapter_bottleneck, cfg.dim}, rng);
    a.up_b = zeros_init({cfg.dim});
    a.gamma = zeros_init({1});
    p.adapters.push_back(std::move(a));
  }
  p.prior_proj_w = fan_in_init({cfg.prior_channels(), cfg.dim}, rng);
  p.prior_proj_b = zeros_init({cfg.dim});
  p.head_w = zeros_init({cfg.dim, 1});
  p.head_b = zeros_init({1});
  return p;
}

void register_encoder(ParamSet& set, const EncoderParams& p) {
  set.add("backbone.patch.w", p.patch_w, ParamGroup::Backbone);
  set.add("backbone.patch.b", p.patch_b, ParamGroup::Backbone);
  for (std::size_t i = 0; i < p.blocks.size(); ++i) {
    const std::string base = "backbone.block." + std::to_string(i);
    register_layer_norm(set, base + ".ln1", p.blocks[i].ln1, ParamGroup::Backbone);
    register_attention(set, base + ".attn", p.blocks[i].attn, ParamGroup::Backbone);
    register_layer_norm(set, base + ".ln2", p.blocks[i].ln2, ParamGroup::Backbone);
    register_mlp(set, base + ".mlp", p.blocks[i].mlp, ParamGroup::Backbone);
  }
  set.add("adapter.prior_proj.w", p.prior_proj_w, ParamGroup::Adapter);
  set.add("adapter.prior_proj.b", p.prior_proj_b, ParamGroup::Adapter);
  for (std::size_t i = 0; i < p.adapters.size(); ++i) {
    if (!p.adapters[i]) continue;
    const auto& a = *p.adapters[i];
    const std::string base = "adapter." + std::to_string(i);
    register_attention(set, base + ".enhance", a.enhance, ParamGroup::Adapter);
    register_attention(set, base + ".inject", a.inject, ParamGroup::Adapter);
    set.add(base + ".down.w", a.down_w, ParamGroup::Adapter);
    set.add(base + ".down.b", a.down_b, ParamGroup::Adapter);
    set.add(base + ".up.w", a.up_w, ParamGroup::Adapter);
    set.add(base + ".up.b", a.up_b, ParamGroup::Adapter);
    set.add(base + ".gamma", a.gamma, ParamGroup::Adapter);
  }
  set.add("head.w", p.head_w, ParamGroup::Head);
  set.add("head.b", p.head_b, ParamGroup::Head);
}

namespace {

void check_grid(const Tensor& image, std::size_t patch) {
  if (image.rank() != 3 || image.dim(2) != 3)
    throw ShapeError("encoder: expected H x W x 3 image, got " + shape_str(image.shape()));
  if (image.dim(0) % patch != 0 || image.dim(1) % patch != 0)
    throw ShapeError("encoder: image " + std::to_string(image.dim(0)) + "x" +
                     std::to_string(image.dim(1)) + " not divisible by patch " +
                     std::to_string(patch));
}

}  // namespace

Tensor patch_embed(const Tensor& image, const EncoderParams& p) {
  check_grid(image, p.patch);
  const std::size_t gh = image.dim(0) / p.patch;
  const std::size_t gw = image.dim(1) / p.patch;
  const Tensor grid = ops::conv2d(image, p.patch_w, p.patch_b, p.patch, 0);
  return ops::add(ops::reshape(grid, {gh * gw, p.dim}), sinusoidal_position_2d(gh, gw, p.dim));
}

Tensor vit_block(const Tensor& tokens, const VitBlockParams& p) {
  const Tensor n1 = apply_layer_norm(tokens, p.ln1);
  const Tensor x = ops::add(tokens, attention(n1, n1, n1, p.attn));
  return ops::add(x, apply_mlp(apply_layer_norm(x, p.ln2), p.mlp));
}

AdapterOutput adapter_inject(const Tensor& vit_tokens, const Tensor& prior_tokens,
                             const AdapterParams& p) {
  const Tensor vit_n = ops::layer_norm(vit_tokens);
  const Tensor prior = ops::add(
      prior_tokens, attention(ops::layer_norm(prior_tokens), vit_n, vit_n, p.enhance));
  const Tensor prior_n = ops::layer_norm(prior);
  const Tensor mixed = attention(vit_n, prior_n, prior_n, p.inject);
  const Tensor bottleneck =
      ops::linear(ops::gelu(ops::linear(mixed, p.down_w, p.down_b)), p.up_w, p.up_b);
  return {ops::add(vit_tokens, ops::mul(bottleneck, p.gamma)), prior};
}

Tensor prior_tokenize(const Tensor& m_d, const EncoderParams& p) {
  if (m_d.rank() != 3) throw ShapeError("prior_tokenize: M^D must be H x W x C");
  const Tensor pooled = ops::avg_pool2d(m_d, p.patch);
  const std::size_t t = pooled.dim(0) * pooled.dim(1);
  return ops::linear(ops::reshape(pooled, {t, m_d.dim(2)}), p.prior_proj_w, p.prior_proj_b);
}

Tensor encoder_mask_head(const Tensor& embeddings, const EncoderParams& p, std::size_t h,
                         std::size_t w) {
  if (embeddings.rank() != 3) throw ShapeError("mask head: embeddings must be gh x gw x dim");
  const Tensor logits = ops::linear(embeddings, p.head_w, p.head_b);  // gh x gw x 1
  return ops::reshape(ops::upsample_bilinear(logits, h, w), {h, w});
}

EncoderOutput encoder_forward(const Tensor& image, const MambaPriorParams& prior,
                              const EncoderParams& p) {
  check_grid(image, p.patch);
  const std::size_t h = image.dim(0), w = image.dim(1);
  const std::size_t gh = h / p.patch, gw = w / p.patch;
  EncoderOutput out;
  out.prior = mamba_prior_forward(image, prior);
  Tensor prior_tokens = prior_tokenize(out.prior, p);
  Tensor tokens = patch_embed(image, p);
  for (std::size_t i = 0; i < p.blocks.size(); ++i) {
    if (p.adapters[i]) {
      auto step = adapter_inject(tokens, prior_tokens, *p.adapters[i]);
      tokens = step.vit;
      prior_tokens = step.prior;
    }
    tokens = vit_block(tokens, p.blocks[i]);
  }
  out.embeddings = ops::reshape(tokens, {gh, gw, p.dim});
  out.pseudo_mask_logits = encoder_mask_head(out.embeddings, p, h, w);
  return out;
}

Tensor backbone_forward(const Tensor& image, const EncoderParams& p) {
  Tensor tokens = patch_embed(image, p);
  for (const auto& b : p.blocks) tokens = vit_block(tokens, b);
  return ops::reshape(tokens, {image.dim(0) / p.patch, image.dim(1) / p.patch, p.dim});
}

}  // namespace smamba
