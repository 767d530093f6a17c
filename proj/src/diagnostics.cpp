#include "smamba/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "smamba/data.hpp"
#include "smamba/objectives.hpp"
#include "smamba/ops.hpp"

namespace smamba {

RunConfig tiny_run_config() {
  RunConfig c;
  auto& m = c.model;
  m.c0 = 2;
  m.mamba_state = 4;
  m.patch = 4;
  m.dim = 8;
  m.depth = 1;
  m.heads = 2;
  m.mlp_ratio = 2;
  m.adapter_bottleneck = 4;
  m.decoder_depth = 1;
  m.decoder_heads = 2;
  m.decoder_mlp_ratio = 2;
  c.train.input_size = 16;
  c.train.epochs_stage1 = 2;
  c.train.epochs_stage2 = 2;
  c.train.lr = 1e-3;
  c.data.train_count = 8;
  c.data.test_seen_count = 4;
  c.data.test_unseen_count = 4;
  c.data.size = 32;
  return c;
}

const std::vector<std::string>& gradcheck_modules() {
  static const std::vector<std::string> names{"prior", "encoder", "decoder", "loss"};
  return names;
}

namespace {

Tensor random_tensor(Shape shape, CounterRng& rng, double lo, double hi) {
  Tensor t(std::move(shape));
  for (auto& v : t.mutable_data()) v = rng.uniform(lo, hi);
  return t;
}

Tensor weighted_sum(const Tensor& x, const Tensor& r) { return ops::sum(ops::mul(x, r)); }

std::vector<Tensor> group_params(const SamMamba& m, std::initializer_list<ParamGroup> groups) {
  std::vector<Tensor> out;
  for (const auto& p : m.params.all())
    if (std::find(groups.begin(), groups.end(), p.group) != groups.end()) out.push_back(p.value);
  return out;
}

Plane disk_mask(std::size_t n) {
  Plane g(n, n);
  const double c = 0.5 * static_cast<double>(n) - 0.3, r = 0.3 * static_cast<double>(n);
  for (std::size_t y = 0; y < n; ++y)
    for (std::size_t x = 0; x < n; ++x)
      g(y, x) = std::hypot(static_cast<double>(y) - c, static_cast<double>(x) - c) <= r ? 1.0 : 0.0;
  return g;
}

}  // namespace

GradcheckResult gradcheck_module(const std::string& module, const ModelConfig& cfg,
                                 std::size_t input_size, std::uint64_t seed) {
  SamMamba m = build_model(cfg, seed);
  set_trainable(m, 2, true);
  CounterRng rng = CounterRng(mix64(seed)).fork(0x6763);
  for (const auto& p : m.params.all()) {
    if (p.group == ParamGroup::Backbone) continue;
    Tensor t = p.value;
    auto d = t.mutable_data();
    if (std::all_of(d.begin(), d.end(), [](double v) { return v == 0.0; }))
      for (auto& v : d) v = rng.uniform(-0.5, 0.5);
  }
  const std::size_t n = input_size;
  const Tensor image = random_tensor({n, n, 3}, rng, 0.0, 1.0);

  if (module == "prior") {
    const Tensor r = random_tensor({n, n, cfg.prior_channels()}, rng, -1.0, 1.0);
    return gradcheck([&] { return weighted_sum(mamba_prior_forward(image, m.prior), r); },
                     group_params(m, {ParamGroup::Prior}));
  }
  if (module == "encoder") {
    const std::size_t g = n / cfg.patch;
    const Tensor r1 = random_tensor({g, g, cfg.dim}, rng, -1.0, 1.0);
    const Tensor r2 = random_tensor({n, n}, rng, -1.0, 1.0);
    return gradcheck(
        [&] {
          const EncoderOutput e = encoder_forward(image, m.prior, m.encoder);
          return ops::add(weighted_sum(e.embeddings, r1), weighted_sum(e.pseudo_mask_logits, r2));
        },
        group_params(m, {ParamGroup::Adapter, ParamGroup::Head}));
  }
  if (module == "decoder") {
    const std::size_t g = n / cfg.patch;
    Tensor emb = random_tensor({g, g, cfg.dim}, rng, -1.0, 1.0);
    Tensor pseudo = random_tensor({n, n}, rng, -2.0, 2.0);
    emb.set_requires_grad(true);
    pseudo.set_requires_grad(true);
    const Tensor r = random_tensor({n, n}, rng, -1.0, 1.0);
    auto params = group_params(m, {ParamGroup::Decoder});
    params.push_back(emb);
    params.push_back(pseudo);
    return gradcheck([&] { return weighted_sum(decode(emb, encode_mask_prompt(pseudo, m.decoder), m.decoder), r); },
                     params);
  }
  if (module == "loss") {
    Tensor logits = random_tensor({n, n}, rng, -3.0, 3.0);
    Tensor aux = random_tensor({n, n}, rng, -3.0, 3.0);
    logits.set_requires_grad(true);
    aux.set_requires_grad(true);
    const Plane g = disk_mask(n);
    LossConfig lc;
    lc.weight_kernel = 7;
    return gradcheck([&] { return ops::add(stage1_loss(g, logits, lc), stage2_loss(g, logits, aux, lc)); },
                     {logits, aux});
  }
  throw std::invalid_argument("unknown gradcheck module: " + module);
}

Plane minmax_normalize(const Plane& p) {
  Plane out(p.h, p.w);
  if (p.v.empty()) return out;
  const auto [lo, hi] = std::minmax_element(p.v.begin(), p.v.end());
  const double range = *hi - *lo;
  if (!(range > 0.0)) return out;
  for (std::size_t i = 0; i < p.v.size(); ++i) out.v[i] = (p.v[i] - *lo) / range;
  return out;
}

namespace {

Plane token_norms(const Tensor& t) {
  const std::size_t h = t.dim(0), w = t.dim(1), c = t.dim(2);
  Plane out(h, w);
  const auto d = t.data();
  for (std::size_t i = 0; i < h * w; ++i) {
    double s = 0.0;
    for (std::size_t k = 0; k < c; ++k) s += d[i * c + k] * d[i * c + k];
    out.v[i] = std::sqrt(s);
  }
  return out;
}

}  // namespace

Heatmaps compute_heatmaps(const SamMamba& m, const RgbImage& img) {
  NoGradGuard guard;
  const ModelOutput out = model_forward(m, image_tensor(img), true);
  const Tensor& md = out.enc.prior;
  const std::size_t c = md.dim(2);
  Plane prior(img.h, img.w);
  const auto d = md.data();
  for (std::size_t i = 0; i < prior.size(); ++i) {
    double s = 0.0;
    for (std::size_t k = 0; k < c; ++k) s += d[i * c + k];
    prior.v[i] = s / static_cast<double>(c);
  }
  Heatmaps h;
  h.prior = minmax_normalize(prior);
  h.embedding = minmax_normalize(resize_plane(token_norms(out.enc.embeddings), img.h, img.w));
  h.decoder = minmax_normalize(resize_plane(token_norms(out.dec_trace.upscaled), img.h, img.w));
  return h;
}

const std::vector<std::string>& heatmap_filenames() {
  static const std::vector<std::string> names{"prior_md_mean.pgm", "encoder_embedding_norm.pgm",
                                              "decoder_prelogit_norm.pgm"};
  return names;
}

}  // namespace smamba
