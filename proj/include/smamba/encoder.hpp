#pragma once

// Toy-scale frozen ViT encoder with prior-injecting adapters and the side
// mask head that produces the pseudo mask.

#include <cstddef>
#include <optional>
#include <vector>

#include "smamba/attention.hpp"
#include "smamba/config.hpp"
#include "smamba/mamba_prior.hpp"
#include "smamba/params.hpp"
#include "smamba/tensor.hpp"

namespace smamba {

struct VitBlockParams {
  LayerNormParams ln1, ln2;
  AttentionParams attn;
  MlpParams mlp;
};

struct AdapterParams {
  AttentionParams enhance;  // q = prior tokens, kv = ViT tokens
  AttentionParams inject;   // q = ViT tokens, kv = enhanced prior tokens
  Tensor down_w, down_b;    // dim -> r
  Tensor up_w, up_b;        // r -> dim
  Tensor gamma;             // scalar gate, starts at 0
};

struct EncoderParams {
  std::size_t patch = 8;
  std::size_t dim = 64;
  Tensor patch_w, patch_b;  // patch x patch x 3 x dim (frozen)
  std::vector<VitBlockParams> blocks;
  std::vector<std::optional<AdapterParams>> adapters;  // one slot per block
  Tensor prior_proj_w, prior_proj_b;  // 6*C0 -> dim
  Tensor head_w, head_b;              // dim -> 1, zero-initialized
};

// Backbone weights come from `backbone_rng` so they are identical across
// training seeds; trainable parts draw from `rng`.
EncoderParams init_encoder(const ModelConfig& cfg, CounterRng& backbone_rng, CounterRng& rng);
void register_encoder(ParamSet& set, const EncoderParams& p);

// H x W x 3 -> T x dim, T = (H/patch)(W/patch), with the position code added.
Tensor patch_embed(const Tensor& image, const EncoderParams& p);
Tensor vit_block(const Tensor& tokens, const VitBlockParams& p);

struct AdapterOutput {
  Tensor vit;
  Tensor prior;
};
AdapterOutput adapter_inject(const Tensor& vit_tokens, const Tensor& prior_tokens,
                             const AdapterParams& p);

// M^D: H x W x 6C0 -> T x dim (patch-window mean, then projection).
Tensor prior_tokenize(const Tensor& m_d, const EncoderParams& p);

// Grid embeddings gh x gw x dim -> H x W pseudo-mask logits.
Tensor encoder_mask_head(const Tensor& embeddings, const EncoderParams& p, std::size_t h,
                         std::size_t w);

struct EncoderOutput {
  Tensor embeddings;          // gh x gw x dim
  Tensor pseudo_mask_logits;  // H x W
  Tensor prior;               // M^D, H x W x 6C0
};

EncoderOutput encoder_forward(const Tensor& image, const MambaPriorParams& prior,
                              const EncoderParams& p);

// Patch embedding and frozen blocks only, no prior, no adapters.
Tensor backbone_forward(const Tensor& image, const EncoderParams& p);

}  // namespace smamba
