#pragma once

// Run configuration: every architectural, optimisation and data knob in one
// record, stored as a flat `key = value` text file with [model], [train]
// and [data] sections.

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace smamba {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ModelConfig {
  // Mamba-Prior
  std::size_t c0 = 16;
  std::vector<std::size_t> msd_kernels{7, 5, 3};  // pyramid order, first = top
  bool use_msd = true;
  bool use_mamba = true;
  std::size_t mamba_expand = 2;
  std::size_t mamba_state = 16;
  std::size_t mamba_conv = 4;
  // Frozen ViT backbone
  std::size_t patch = 8;
  std::size_t dim = 64;
  std::size_t depth = 4;
  std::size_t heads = 4;
  std::size_t mlp_ratio = 4;
  std::vector<std::size_t> inject_at;  // empty = every block
  std::uint64_t backbone_seed = 20240601;
  // Adapter
  std::size_t adapter_bottleneck = 16;
  // Decoder
  std::size_t decoder_depth = 2;
  std::size_t decoder_heads = 2;
  std::size_t decoder_mlp_ratio = 2;
  bool prompt_stop_grad = true;

  std::size_t prior_channels() const { return 6 * c0; }
  bool injects_at(std::size_t block) const;
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

enum class Precision { F32, F64 };

struct TrainConfig {
  double lr = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::size_t epochs_stage1 = 60;
  std::size_t epochs_stage2 = 140;
  std::size_t batch = 4;
  std::uint64_t seed = 0;
  bool stage2_aux_sup = false;
  std::size_t input_size = 64;
  bool multiscale = true;
  Precision precision = Precision::F64;
  // Boundary-weighted loss
  std::size_t weight_kernel = 31;
  double weight_gain = 5.0;
  double smooth = 1.0;

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

struct DataConfig {
  std::size_t train_count = 200;
  std::size_t test_seen_count = 50;
  std::size_t test_unseen_count = 50;
  std::size_t size = 64;
  double contrast = 0.08;
  double boundary_blur = 1.5;
  double texture_amplitude = 0.06;
  double secondary_prob = 0.3;

  void validate() const;
  bool operator==(const DataConfig&) const = default;
};

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  DataConfig data;

  bool operator==(const RunConfig&) const = default;
};

// Unknown keys, unknown sections, malformed values and out-of-range values
// raise ConfigError naming the offending key.
RunConfig parse_run_config(const std::string& text);
RunConfig load_run_config(const std::string& path);
std::string serialize_run_config(const RunConfig& cfg);

// Named ablation presets; returns false for an unknown name.
//   adapter  adapter only, raw-image conv stem as prior
//   msd      adapter + multi-scale decomposition, identity gates
//   multi    alias of msd (multi-scale without Mamba)
//   full     adapter + multi-scale decomposition + Mamba
//   uni3/uni5/uni7  single-kernel decomposition + Mamba
bool apply_ablation(ModelConfig& cfg, const std::string& name);
const std::vector<std::string>& ablation_names();

}  // namespace smamba
