#include "smamba/decoder.hpp"

#include <algorithm>
#include <bit>
#include <string>

#include "smamba/ops.hpp"

namespace smamba {

DecoderParams init_decoder(const ModelConfig& cfg, CounterRng& rng) {
  DecoderParams p;
  p.dim = cfg.dim;
  p.patch = cfg.patch;
  const std::size_t hidden = std::max<std::size_t>(4, cfg.dim / 4);
  const int downs = std::countr_zero(cfg.patch);
  std::size_t cin = 1;
  for (int i = 0; i < downs; ++i) {
    p.prompt.conv_w.push_back(fan_in_init({2, 2, cin, hidden}, rng));
    p.prompt.conv_b.push_back(zeros_init({hidden}));
    cin = hidden;
  }
  p.prompt.out_w = fan_in_init({1, 1, hidden, cfg.dim}, rng);
  p.prompt.out_b = zeros_init({cfg.dim});

  p.mask_token = uniform_init({1, cfg.dim}, 1.0, rng);
  for (std::size_t i = 0; i < cfg.decoder_depth; ++i) {
    TwoWayBlockParams b;
    b.ln_self = init_layer_norm(cfg.dim);
    b.ln_t2i = init_layer_norm(cfg.dim);
    b.ln_t2i_img = init_layer_norm(cfg.dim);
    b.ln_mlp = init_layer_norm(cfg.dim);
    b.ln_i2t_img = init_layer_norm(cfg.dim);
    b.ln_i2t_tok = init_layer_norm(cfg.dim);
    b.self_attn = init_attention(cfg.dim, cfg.decoder_heads, rng);
    b.token_to_image = init_attention(cfg.dim, cfg.decoder_heads, rng);
    b.image_to_token = init_attention(cfg.dim, cfg.decoder_heads, rng);
    b.mlp = init_mlp(cfg.dim, cfg.decoder_mlp_ratio * cfg.dim, cfg.dim, rng);
    p.blocks.push_back(std::move(b));
  }
  const std::size_t c1 = cfg.dim / 4, c2 = cfg.dim / 8;
  p.up1_w = fan_in_init({2, 2, cfg.dim, c1}, rng);
  p.up1_b = zeros_init({c1});
  p.up_ln = init_layer_norm(c1);
  p.up2_w = fan_in_init({2, 2, c1, c2}, rng);
  p.up2_b = zeros_init({c2});
  p.hyper_a = init_mlp(cfg.dim, cfg.dim, cfg.dim, rng);
  p.hyper_w = zeros_init({cfg.dim, c2});
  p.hyper_b = zeros_init({c2});
  return p;
}

void register_decoder(ParamSet& set, const DecoderParams& p) {
  for (std::size_t i = 0; i < p.prompt.conv_w.size(); ++i) {
    set.add("decoder.prompt.conv." + std::to_string(i) + ".w", p.prompt.conv_w[i], ParamGroup::Decoder);
    set.add("decoder.prompt.conv." + std::to_string(i) + ".b", p.prompt.conv_b[i], ParamGroup::Decoder);
  }
  set.add("decoder.prompt.out.w", p.prompt.out_w, ParamGroup::Decoder);
  set.add("decoder.prompt.out.b", p.prompt.out_b, ParamGroup::Decoder);
  set.add("decoder.mask_token", p.mask_token, ParamGroup::Decoder);
  for (std::size_t i = 0; i < p.blocks.size(); ++i) {
    const auto& b = p.blocks[i];
    const std::string base = "decoder.block." + std::to_string(i);
    register_layer_norm(set, base + ".ln_self", b.ln_self, ParamGroup::Decoder);
    register_attention(set, base + ".self_attn", b.self_attn, ParamGroup::Decoder);
    register_layer_norm(set, base + ".ln_t2i", b.ln_t2i, ParamGroup::Decoder);
    register_layer_norm(set, base + ".ln_t2i_img", b.ln_t2i_img, ParamGroup::Decoder);
    register_attention(set, base + ".token_to_image", b.token_to_image, ParamGroup::Decoder);
    register_layer_norm(set, base + ".ln_mlp", b.ln_mlp, ParamGroup::Decoder);
    register_mlp(set, base + ".mlp", b.mlp, ParamGroup::Decoder);
    register_layer_norm(set, base + ".ln_i2t_img", b.ln_i2t_img, ParamGroup::Decoder);
    register_layer_norm(set, base + ".ln_i2t_tok", b.ln_i2t_tok, ParamGroup::Decoder);
    register_attention(set, base + ".image_to_token", b.image_to_token, ParamGroup::Decoder);
  }
  set.add("decoder.up1.w", p.up1_w, ParamGroup::Decoder);
  set.add("decoder.up1.b", p.up1_b, ParamGroup::Decoder);
  register_layer_norm(set, "decoder.up_ln", p.up_ln, ParamGroup::Decoder);
  set.add("decoder.up2.w", p.up2_w, ParamGroup::Decoder);
  set.add("decoder.up2.b", p.up2_b, ParamGroup::Decoder);
  register_mlp(set, "decoder.hyper", p.hyper_a, ParamGroup::Decoder);
  set.add("decoder.hyper_out.w", p.hyper_w, ParamGroup::Decoder);
  set.add("decoder.hyper_out.b", p.hyper_b, ParamGroup::Decoder);
}

Tensor encode_mask_prompt(const Tensor& pseudo_logits, const DecoderParams& p) {
  if (pseudo_logits.rank() != 2)
    throw ShapeError("encode_mask_prompt: expected H x W logits, got " + shape_str(pseudo_logits.shape()));
  const std::size_t h = pseudo_logits.dim(0), w = pseudo_logits.dim(1);
  if (h % p.patch != 0 || w % p.patch != 0)
    throw ShapeError("encode_mask_prompt: mask size not divisible by patch");
  Tensor x = ops::reshape(ops::sigmoid(pseudo_logits), {h, w, 1});
  for (std::size_t i = 0; i < p.prompt.conv_w.size(); ++i)
    x = ops::gelu(ops::conv2d(x, p.prompt.conv_w[i], p.prompt.conv_b[i], 2, 0));
  return ops::conv2d(x, p.prompt.out_w, p.prompt.out_b, 1, 0);
}

TwoWayState two_way_block(const TwoWayState& in, const Tensor& tok_pe, const Tensor& img_pe,
                          const TwoWayBlockParams& p) {
  Tensor t = in.tokens;
  Tensor img = in.image;

  const Tensor ts = ops::add(apply_layer_norm(t, p.ln_self), tok_pe);
  t = ops::add(t, attention(ts, ts, apply_layer_norm(t, p.ln_self), p.self_attn));

  const Tensor img_n = apply_layer_norm(img, p.ln_t2i_img);
  t = ops::add(t, attention(ops::add(apply_layer_norm(t, p.ln_t2i), tok_pe), ops::add(img_n, img_pe),
                            img_n, p.token_to_image));

  t = ops::add(t, apply_mlp(apply_layer_norm(t, p.ln_mlp), p.mlp));

  const Tensor tok_n = apply_layer_norm(t, p.ln_i2t_tok);
  img = ops::add(img, attention(ops::add(apply_layer_norm(img, p.ln_i2t_img), img_pe),
                                ops::add(tok_n, tok_pe), tok_n, p.image_to_token));
  return {t, img};
}

Tensor decode(const Tensor& image_emb, const Tensor& prompt_emb, const DecoderParams& p,
              DecoderTrace* trace) {
  if (image_emb.rank() != 3 || image_emb.shape() != prompt_emb.shape() || image_emb.dim(2) != p.dim)
    throw ShapeError("decode: image and prompt embeddings must both be gh x gw x " + std::to_string(p.dim));
  const std::size_t gh = image_emb.dim(0), gw = image_emb.dim(1);
  const Tensor img_pe = sinusoidal_position_2d(gh, gw, p.dim);
  TwoWayState s{p.mask_token, ops::reshape(ops::add(image_emb, prompt_emb), {gh * gw, p.dim})};
  for (const auto& b : p.blocks) s = two_way_block(s, p.mask_token, img_pe, b);

  Tensor up = ops::conv_transpose2d(ops::reshape(s.image, {gh, gw, p.dim}), p.up1_w, p.up1_b);
  up = ops::gelu(apply_layer_norm(up, p.up_ln));
  up = ops::gelu(ops::conv_transpose2d(up, p.up2_w, p.up2_b));
  if (trace) trace->upscaled = up;

  const Tensor hyper = ops::linear(ops::gelu(apply_mlp(s.tokens, p.hyper_a)), p.hyper_w, p.hyper_b);
  const std::size_t uh = up.dim(0), uw = up.dim(1), uc = up.dim(2);
  const Tensor low = ops::matmul(ops::reshape(up, {uh * uw, uc}), ops::transpose_last2(hyper));
  const std::size_t h = gh * p.patch, w = gw * p.patch;
  return ops::reshape(ops::upsample_bilinear(ops::reshape(low, {uh, uw, 1}), h, w), {h, w});
}

}  // namespace smamba
