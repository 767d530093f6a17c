#pragma once

// Mamba-Prior: multi-scale spatial decomposition of the raw image, global
// saliency (max) and context (mean) pooling over the pyramid channels, two
// independent Mamba layers scanning the pooled channel axis, and a gated
// fusion into the domain-prior map.

#include <cstddef>
#include <utility>
#include <vector>

#include "smamba/config.hpp"
#include "smamba/params.hpp"
#include "smamba/scan.hpp"
#include "smamba/tensor.hpp"

namespace smamba {

struct ScaleConv {
  std::size_t k = 3;
  Tensor w;  // k x k x 3 x channels
  Tensor b;  // channels
};

struct MambaPriorParams {
  std::size_t c0 = 0;
  std::vector<ScaleConv> scales;  // declared order; first block is the top of the pyramid
  MambaLayerParams mamba_s, mamba_c;
  bool use_mamba = false;
  // Adapter-only ablation: a 3x3 conv stem straight to 6*C0 channels.
  Tensor stem_w, stem_b;

  bool has_msd() const { return !scales.empty(); }
};

MambaLayerConfig prior_mamba_config(const ModelConfig& cfg);
MambaPriorParams init_mamba_prior(const ModelConfig& cfg, CounterRng& rng);
void register_mamba_prior(ParamSet& set, const MambaPriorParams& p);

// I: H x W x 3 -> M*: H x W x 3*C0, blocks concatenated in declared kernel
// order.
Tensor msd(const Tensor& image, const MambaPriorParams& p);

// M*: H x W x C -> (max, mean), each 1 x 1 x C.
std::pair<Tensor, Tensor> channel_pool(const Tensor& m_star);

// Each pooled 1 x 1 x C vector is scanned as C scalar tokens.
std::pair<Tensor, Tensor> channel_interaction(const Tensor& m_s, const Tensor& m_c,
                                              const MambaPriorParams& p);

// concat(g_s * M*, g_c * M*) with 1 x 1 x C gates broadcast over H x W.
Tensor fuse(const Tensor& m_star, const Tensor& g_s, const Tensor& g_c);

struct PriorTrace {
  Tensor m_star;
  Tensor gate_s, gate_c;
  Tensor m_d;
};

// Full composition, honouring the ablation toggles carried by `p`:
// no MSD -> stem only, MSD without Mamba -> identity gates.
Tensor mamba_prior_forward(const Tensor& image, const MambaPriorParams& p,
                           PriorTrace* trace = nullptr);

}  // namespace smamba
