#include "smamba/model.hpp"

#include <algorithm>
#include <cmath>

#include "smamba/data.hpp"
#include "smamba/ops.hpp"

namespace smamba {

SamMamba build_model(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  SamMamba m;
  m.cfg = cfg;
  CounterRng backbone_rng(mix64(cfg.backbone_seed));
  CounterRng root(mix64(seed ^ 0x736D616D6261ULL));
  CounterRng prior_rng = root.fork(1), enc_rng = root.fork(2), dec_rng = root.fork(3);
  m.prior = init_mamba_prior(cfg, prior_rng);
  m.encoder = init_encoder(cfg, backbone_rng, enc_rng);
  m.decoder = init_decoder(cfg, dec_rng);
  register_mamba_prior(m.params, m.prior);
  register_encoder(m.params, m.encoder);
  register_decoder(m.params, m.decoder);
  // Initial values are float-representable so a 32-bit checkpoint of an
  // untrained model reloads exactly.
  for (const auto& p : m.params.all()) {
    Tensor t = p.value;
    for (auto& x : t.mutable_data()) x = static_cast<double>(static_cast<float>(x));
  }
  return m;
}

ModelOutput model_forward(const SamMamba& m, const Tensor& image, bool run_decoder) {
  ModelOutput out;
  out.enc = encoder_forward(image, m.prior, m.encoder);
  if (!run_decoder) return out;
  const Tensor pseudo =
      m.cfg.prompt_stop_grad ? out.enc.pseudo_mask_logits.detach() : out.enc.pseudo_mask_logits;
  out.prompt = encode_mask_prompt(pseudo, m.decoder);
  out.decoder_logits = decode(out.enc.embeddings, out.prompt, m.decoder, &out.dec_trace);
  return out;
}

std::vector<ParamGroup> trainable_groups(int stage, bool aux_sup) {
  if (stage == 1) return {ParamGroup::Prior, ParamGroup::Adapter, ParamGroup::Head};
  if (stage == 2) {
    if (aux_sup) return {ParamGroup::Prior, ParamGroup::Adapter, ParamGroup::Head, ParamGroup::Decoder};
    return {ParamGroup::Prior, ParamGroup::Adapter, ParamGroup::Decoder};
  }
  return {};
}

bool is_trainable(ParamGroup g, int stage, bool aux_sup) {
  const auto groups = trainable_groups(stage, aux_sup);
  return std::find(groups.begin(), groups.end(), g) != groups.end();
}

std::vector<const NamedParam*> set_trainable(SamMamba& m, int stage, bool aux_sup) {
  std::vector<const NamedParam*> out;
  for (const auto& p : m.params.all()) {
    const bool on = is_trainable(p.group, stage, aux_sup);
    Tensor t = p.value;
    t.set_requires_grad(on);
    if (on) out.push_back(&p);
  }
  return out;
}

std::vector<FreezeRow> freeze_ledger(const SamMamba& m, bool aux_sup) {
  std::vector<FreezeRow> rows;
  for (const auto& p : m.params.all())
    rows.push_back({p.name, p.group, p.value.numel(), is_trainable(p.group, 1, aux_sup),
                    is_trainable(p.group, 2, aux_sup)});
  return rows;
}

std::string freeze_ledger_tsv(const std::vector<FreezeRow>& rows) {
  std::string out = "name\tgroup\tnumel\tstage1\tstage2\n";
  for (const auto& r : rows)
    out += r.name + "\t" + std::string(group_name(r.group)) + "\t" + std::to_string(r.numel) + "\t" +
           (r.stage1 ? "train" : "frozen") + "\t" + (r.stage2 ? "train" : "frozen") + "\n";
  return out;
}

std::size_t trainable_count(const SamMamba& m) {
  return m.params.count_values(ParamGroup::Prior) + m.params.count_values(ParamGroup::Adapter) +
         m.params.count_values(ParamGroup::Head) + m.params.count_values(ParamGroup::Decoder);
}

Tensor image_tensor(const RgbImage& img) { return Tensor({img.h, img.w, 3}, img.v); }

Plane sigmoid_plane(const Tensor& logits) {
  Plane p(logits.dim(0), logits.dim(1));
  const auto d = logits.data();
  for (std::size_t i = 0; i < p.size(); ++i) p.v[i] = 1.0 / (1.0 + std::exp(-d[i]));
  return p;
}

Prediction predict(const SamMamba& m, const RgbImage& img, std::size_t input_size) {
  NoGradGuard guard;
  const bool resized = input_size != 0 && (img.h != input_size || img.w != input_size);
  const RgbImage in = resized ? resize_image(img, input_size, input_size) : img;
  const ModelOutput out = model_forward(m, image_tensor(in), true);
  Prediction p{sigmoid_plane(out.decoder_logits), sigmoid_plane(out.enc.pseudo_mask_logits)};
  if (resized) {
    p.refined = resize_plane(p.refined, img.h, img.w);
    p.pseudo = resize_plane(p.pseudo, img.h, img.w);
  }
  return p;
}

}  // namespace smamba
