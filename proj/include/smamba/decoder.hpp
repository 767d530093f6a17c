#pragma once

// Prompt-free SAM-style mask decoder: the pseudo mask is encoded as a dense
// prompt, a single mask token and the image tokens exchange information
// through two-way attention blocks, and the refined token acts as a
// per-pixel linear classifier over upscaled image features.

#include <cstddef>
#include <vector>

#include "smamba/attention.hpp"
#include "smamba/config.hpp"
#include "smamba/params.hpp"
#include "smamba/tensor.hpp"

namespace smamba {

struct PromptEncoderParams {
  std::vector<Tensor> conv_w, conv_b;  // log2(patch) stride-2 2x2 convs
  Tensor out_w, out_b;                 // 1x1 conv to dim
};

struct TwoWayBlockParams {
  LayerNormParams ln_self, ln_t2i, ln_mlp, ln_i2t_img, ln_i2t_tok, ln_t2i_img;
  AttentionParams self_attn, token_to_image, image_to_token;
  MlpParams mlp;
};

struct DecoderParams {
  std::size_t dim = 0;
  std::size_t patch = 8;
  PromptEncoderParams prompt;
  Tensor mask_token;  // 1 x dim
  std::vector<TwoWayBlockParams> blocks;
  Tensor up1_w, up1_b;  // 2 x 2 x dim x dim/4
  LayerNormParams up_ln;
  Tensor up2_w, up2_b;  // 2 x 2 x dim/4 x dim/8
  MlpParams hyper_a;    // dim -> dim -> dim
  Tensor hyper_w, hyper_b;  // dim -> dim/8, zero-initialized
};

DecoderParams init_decoder(const ModelConfig& cfg, CounterRng& rng);
void register_decoder(ParamSet& set, const DecoderParams& p);

// Pseudo-mask logits H x W -> gh x gw x dim dense prompt.
Tensor encode_mask_prompt(const Tensor& pseudo_logits, const DecoderParams& p);

struct TwoWayState {
  Tensor tokens;  // 1 x dim
  Tensor image;   // T x dim
};
// tok_pe / img_pe are added to queries and keys, never to values.
TwoWayState two_way_block(const TwoWayState& in, const Tensor& tok_pe, const Tensor& img_pe,
                          const TwoWayBlockParams& p);

struct DecoderTrace {
  Tensor upscaled;  // 4gh x 4gw x dim/8
};

// image_emb, prompt_emb: gh x gw x dim -> H x W logits (H = gh * patch).
Tensor decode(const Tensor& image_emb, const Tensor& prompt_emb, const DecoderParams& p,
              DecoderTrace* trace = nullptr);

}  // namespace smamba
