#pragma once

// Two-stage training: Adam over the stage's trainable groups, deterministic
// batch order and scale draws, and evaluation helpers.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "smamba/config.hpp"
#include "smamba/data.hpp"
#include "smamba/metrics.hpp"
#include "smamba/model.hpp"

namespace smamba {

struct AdamSlot {
  std::string name;
  std::vector<double> m, v;
};

struct AdamState {
  std::uint64_t t = 0;
  std::vector<AdamSlot> slots;  // one per trainable tensor, registration order

  void reset(const std::vector<const NamedParam*>& params);
};

// One Adam update with bias correction. grads[i] belongs to params[i] and
// state.slots[i]. A non-finite gradient raises NumericError naming the
// tensor before anything is modified.
void adam_step(const std::vector<const NamedParam*>& params,
               const std::vector<std::vector<double>>& grads, AdamState& state,
               const TrainConfig& cfg);

// Position inside a run. `stage` 0 means nothing trained yet. When `done`
// is set the stage has run all its epochs.
struct TrainCursor {
  int stage = 0;
  std::uint64_t epoch = 0;
  std::uint64_t step = 0;
  bool done = false;

  bool operator==(const TrainCursor&) const = default;
};

struct TrainState {
  TrainCursor cursor;
  AdamState adam;
};

// Stream that drives batch order and scale draws for (seed, stage, epoch).
CounterRng epoch_rng(std::uint64_t seed, int stage, std::uint64_t epoch);
std::vector<std::size_t> epoch_order(std::uint64_t seed, int stage, std::uint64_t epoch, std::size_t n);
std::size_t steps_per_epoch(std::size_t n, std::size_t batch);

struct LossRow {
  int stage = 0;
  std::uint64_t epoch = 0;
  std::uint64_t step = 0;
  double loss = 0.0;
};

struct TrainHooks {
  std::function<void(const LossRow&)> on_step;
  std::function<void(int stage, std::uint64_t epoch, double mean_loss)> on_epoch;
  // Stop (with the cursor pointing at the next step) after this many steps.
  std::optional<std::size_t> max_steps;
};

struct StageResult {
  std::vector<LossRow> rows;
  std::vector<double> epoch_means;  // only epochs fully run in this call
  bool finished = false;
};

void round_params_to_f32(SamMamba& m);

// Loss of one (already resized) sample for the given stage with graph
// recording on.
Tensor sample_loss(const SamMamba& m, const SamplePair& s, int stage, const TrainConfig& cfg);

// Runs (or resumes) `stage`. A cursor on a different stage starts the stage
// from epoch 0 with fresh Adam moments.
StageResult train_stage(SamMamba& m, const std::vector<SamplePair>& data, const TrainConfig& cfg,
                        int stage, TrainState& state, const TrainHooks& hooks = {});

std::string loss_tsv_header();
std::string loss_tsv_row(const LossRow& r);
std::string loss_tsv(const std::vector<LossRow>& rows);

enum class MaskSource { Pseudo, Refined };

std::vector<Plane> predict_all(const SamMamba& m, const std::vector<SamplePair>& data,
                               std::size_t input_size, MaskSource source);
MetricsReport evaluate_model(const SamMamba& m, const std::vector<SamplePair>& data,
                             std::size_t input_size, MaskSource source, const std::string& dataset_id);

}  // namespace smamba
