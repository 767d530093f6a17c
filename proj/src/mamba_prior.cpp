#include "smamba/mamba_prior.hpp"

#include <algorithm>
#include <string>

#include "smamba/ops.hpp"

namespace smamba {

MambaLayerConfig prior_mamba_config(const ModelConfig& cfg) {
  MambaLayerConfig m;
  m.d_model = 1;
  m.expand = cfg.mamba_expand;
  m.d_state = cfg.mamba_state;
  m.conv_width = cfg.mamba_conv;
  return m;
}

MambaPriorParams init_mamba_prior(const ModelConfig& cfg, CounterRng& rng) {
  MambaPriorParams p;
  p.c0 = cfg.c0;
  if (!cfg.use_msd) {
    p.stem_w = fan_in_init({3, 3, 3, cfg.prior_channels()}, rng);
    p.stem_b = zeros_init({cfg.prior_channels()});
    return p;
  }
  const std::size_t per_scale = 3 * cfg.c0 / cfg.msd_kernels.size();
  for (std::size_t k : cfg.msd_kernels) {
    ScaleConv s;
    s.k = k;
    s.w = fan_in_init({k, k, 3, per_scale}, rng);
    s.b = uniform_init({per_scale}, 0.1, rng);
    p.scales.push_back(std::move(s));
  }
  p.use_mamba = cfg.use_mamba;
  if (p.use_mamba) {
    const MambaLayerConfig mc = prior_mamba_config(cfg);
    p.mamba_s = init_mamba_layer(mc, rng);
    p.mamba_c = init_mamba_layer(mc, rng);
  }
  return p;
}

void register_mamba_prior(ParamSet& set, const MambaPriorParams& p) {
  if (!p.has_msd()) {
    set.add("prior.stem.w", p.stem_w, ParamGroup::Prior);
    set.add("prior.stem.b", p.stem_b, ParamGroup::Prior);
    return;
  }
  for (std::size_t i = 0; i < p.scales.size(); ++i) {
    const std::string base = "prior.msd." + std::to_string(i) + ".k" + std::to_string(p.scales[i].k);
    set.add(base + ".w", p.scales[i].w, ParamGroup::Prior);
    set.add(base + ".b", p.scales[i].b, ParamGroup::Prior);
  }
  if (p.use_mamba) {
    register_mamba_layer(set, "prior.mamba_s", p.mamba_s, ParamGroup::Prior);
    register_mamba_layer(set, "prior.mamba_c", p.mamba_c, ParamGroup::Prior);
  }
}

Tensor msd(const Tensor& image, const MambaPriorParams& p) {
  if (image.rank() != 3 || image.dim(2) != 3) throw ShapeError("msd: expected H x W x 3 image");
  if (!p.has_msd()) throw ShapeError("msd: model was built without multi-scale decomposition");
  std::size_t kmax = 0;
  for (const auto& s : p.scales) kmax = std::max(kmax, s.k);
  if (image.dim(0) < kmax || image.dim(1) < kmax)
    throw ShapeError("msd: image " + shape_str(image.shape()) + " smaller than kernel " +
                     std::to_string(kmax));
  std::vector<Tensor> blocks;
  blocks.reserve(p.scales.size());
  for (const auto& s : p.scales) blocks.push_back(ops::conv2d_same(image, s.w, s.b));
  return blocks.size() == 1 ? blocks.front() : ops::concat(blocks, 2);
}

std::pair<Tensor, Tensor> channel_pool(const Tensor& m_star) {
  return {ops::global_max_pool(m_star), ops::global_avg_pool(m_star)};
}

namespace {

Tensor scan_gate(const Tensor& pooled, const MambaLayerParams& layer) {
  const std::size_t c = pooled.numel();
  const Tensor seq = ops::reshape(pooled, {c, 1});
  return ops::reshape(mamba_layer(seq, layer), {1, 1, c});
}

}  // namespace

std::pair<Tensor, Tensor> channel_interaction(const Tensor& m_s, const Tensor& m_c,
                                              const MambaPriorParams& p) {
  if (m_s.numel() != m_c.numel() || m_s.numel() != 3 * p.c0)
    throw ShapeError("channel_interaction: pooled vectors must both have length 3*C0 = " +
                     std::to_string(3 * p.c0));
  return {scan_gate(m_s, p.mamba_s), scan_gate(m_c, p.mamba_c)};
}

Tensor fuse(const Tensor& m_star, const Tensor& g_s, const Tensor& g_c) {
  if (m_star.rank() != 3) throw ShapeError("fuse: M* must be H x W x C");
  const std::size_t c = m_star.dim(2);
  if (g_s.numel() != c || g_c.numel() != c)
    throw ShapeError("fuse: gate length does not match channel count " + std::to_string(c));
  const Tensor gs = ops::reshape(g_s, {1, 1, c});
  const Tensor gc = ops::reshape(g_c, {1, 1, c});
  return ops::concat({ops::mul(m_star, gs), ops::mul(m_star, gc)}, 2);
}

Tensor mamba_prior_forward(const Tensor& image, const MambaPriorParams& p, PriorTrace* trace) {
  if (!p.has_msd()) {
    Tensor out = ops::conv2d_same(image, p.stem_w, p.stem_b);
    if (trace) trace->m_d = out;
    return out;
  }
  Tensor m_star = msd(image, p);
  Tensor g_s, g_c;
  if (p.use_mamba) {
    auto [m_s, m_c] = channel_pool(m_star);
    std::tie(g_s, g_c) = channel_interaction(m_s, m_c, p);
  } else {
    g_s = Tensor({1, 1, m_star.dim(2)}, 1.0);
    g_c = g_s;
  }
  Tensor m_d = fuse(m_star, g_s, g_c);
  if (trace) *trace = PriorTrace{m_star, g_s, g_c, m_d};
  return m_d;
}

}  // namespace smamba
