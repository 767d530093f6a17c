#pragma once

// The assembled SAM-Mamba model: Mamba-Prior, adapter-injected frozen ViT
// encoder with side head, and the prompt-driven mask decoder.

#include <cstdint>
#include <string>
#include <vector>

#include "smamba/config.hpp"
#include "smamba/decoder.hpp"
#include "smamba/encoder.hpp"
#include "smamba/image.hpp"
#include "smamba/mamba_prior.hpp"
#include "smamba/params.hpp"

namespace smamba {

struct SamMamba {
  ModelConfig cfg;
  MambaPriorParams prior;
  EncoderParams encoder;
  DecoderParams decoder;
  ParamSet params;
};

// Backbone weights are drawn from cfg.backbone_seed; every trainable tensor
// from `seed`.
SamMamba build_model(const ModelConfig& cfg, std::uint64_t seed);

struct ModelOutput {
  EncoderOutput enc;
  Tensor prompt;          // dense prompt embedding
  Tensor decoder_logits;  // undefined when the decoder was not run
  DecoderTrace dec_trace;
};

// run_decoder = false stops after the encoder (stage 1).
ModelOutput model_forward(const SamMamba& m, const Tensor& image, bool run_decoder);

// Groups updated in a stage. Stage 1: prior, adapters, head. Stage 2:
// prior, adapters, decoder, plus the head when auxiliary supervision is on.
std::vector<ParamGroup> trainable_groups(int stage, bool aux_sup);
bool is_trainable(ParamGroup g, int stage, bool aux_sup);

// Marks exactly the tensors of `stage` as requiring grad (stage 0 freezes
// everything) and returns them in registration order.
std::vector<const NamedParam*> set_trainable(SamMamba& m, int stage, bool aux_sup);

struct FreezeRow {
  std::string name;
  ParamGroup group;
  std::size_t numel;
  bool stage1, stage2;
};
std::vector<FreezeRow> freeze_ledger(const SamMamba& m, bool aux_sup);
std::string freeze_ledger_tsv(const std::vector<FreezeRow>& rows);

std::size_t trainable_count(const SamMamba& m);  // prior + adapter + head + decoder values

Tensor image_tensor(const RgbImage& img);
Plane sigmoid_plane(const Tensor& logits);

struct Prediction {
  Plane refined;  // sigmoid of decoder logits
  Plane pseudo;   // sigmoid of encoder side output
};
// Resizes to `input_size` when needed and maps the probabilities back to the
// original size. input_size 0 runs at the image's own size.
Prediction predict(const SamMamba& m, const RgbImage& img, std::size_t input_size);

}  // namespace smamba
