#include "smamba/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <exception>
#include <numeric>

#include "smamba/objectives.hpp"

namespace smamba {

void AdamState::reset(const std::vector<const NamedParam*>& params) {
  t = 0;
  slots.clear();
  for (const auto* p : params)
    slots.push_back({p->name, std::vector<double>(p->value.numel(), 0.0),
                     std::vector<double>(p->value.numel(), 0.0)});
}

namespace {

double to_f32(double x) { return static_cast<double>(static_cast<float>(x)); }

void round_vec(std::vector<double>& v) {
  for (auto& x : v) x = to_f32(x);
}

}  // namespace

void adam_step(const std::vector<const NamedParam*>& params,
               const std::vector<std::vector<double>>& grads, AdamState& state,
               const TrainConfig& cfg) {
  if (params.size() != grads.size() || params.size() != state.slots.size())
    throw ShapeError("adam_step: params, grads and state disagree in length");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads[i].size() != params[i]->value.numel() || state.slots[i].m.size() != grads[i].size())
      throw ShapeError("adam_step: size mismatch for " + params[i]->name);
    if (state.slots[i].name != params[i]->name)
      throw ShapeError("adam_step: state slot " + state.slots[i].name + " does not match " +
                       params[i]->name);
    for (double g : grads[i])
      if (!std::isfinite(g)) throw NumericError("non-finite gradient for parameter " + params[i]->name);
  }
  state.t += 1;
  const double t = static_cast<double>(state.t);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor value = params[i]->value;
    auto w = value.mutable_data();
    auto& m = state.slots[i].m;
    auto& v = state.slots[i].v;
    const auto& g = grads[i];
    for (std::size_t j = 0; j < g.size(); ++j) {
      m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g[j];
      v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g[j] * g[j];
      w[j] -= cfg.lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + cfg.adam_eps);
    }
    if (cfg.precision == Precision::F32) {
      for (auto& x : w) x = to_f32(x);
      round_vec(m);
      round_vec(v);
    }
  }
}

CounterRng epoch_rng(std::uint64_t seed, int stage, std::uint64_t epoch) {
  return CounterRng(mix64(seed ^ 0x7472616E6BULL)).fork(static_cast<std::uint64_t>(stage)).fork(epoch);
}

std::vector<std::size_t> epoch_order(std::uint64_t seed, int stage, std::uint64_t epoch, std::size_t n) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  CounterRng rng = epoch_rng(seed, stage, epoch).fork(0);
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  return order;
}

std::size_t steps_per_epoch(std::size_t n, std::size_t batch) { return (n + batch - 1) / batch; }

void round_params_to_f32(SamMamba& m) {
  for (const auto& p : m.params.all()) {
    Tensor t = p.value;
    for (auto& x : t.mutable_data()) x = to_f32(x);
  }
}

Tensor sample_loss(const SamMamba& m, const SamplePair& s, int stage, const TrainConfig& cfg) {
  const LossConfig lc = LossConfig::from(cfg);
  const ModelOutput out = model_forward(m, image_tensor(s.image), stage == 2);
  if (stage == 1) return stage1_loss(s.mask, out.enc.pseudo_mask_logits, lc);
  return stage2_loss(s.mask, out.decoder_logits,
                     cfg.stage2_aux_sup ? out.enc.pseudo_mask_logits : Tensor{}, lc);
}

StageResult train_stage(SamMamba& m, const std::vector<SamplePair>& data, const TrainConfig& cfg,
                        int stage, TrainState& state, const TrainHooks& hooks) {
  if (stage != 1 && stage != 2) throw std::invalid_argument("stage must be 1 or 2");
  if (data.empty()) throw std::invalid_argument("training set is empty");
  cfg.validate();

  const auto trainable = set_trainable(m, stage, cfg.stage2_aux_sup);
  if (state.cursor.stage != stage) {
    state.cursor = {stage, 0, 0, false};
    state.adam.reset(trainable);
  } else if (state.adam.slots.size() != trainable.size()) {
    throw std::invalid_argument("optimizer state does not match the stage's trainable set");
  }

  std::vector<Tensor> watched;
  for (const auto* p : trainable) watched.push_back(p->value);
  const DiffContext ctx(watched);

  const std::uint64_t epochs = stage == 1 ? cfg.epochs_stage1 : cfg.epochs_stage2;
  const std::size_t n = data.size();
  const std::size_t steps = steps_per_epoch(n, cfg.batch);

  // Inputs are brought to the configured side once; scales apply on top.
  std::vector<SamplePair> base;
  base.reserve(n);
  for (const auto& s : data)
    base.push_back(s.image.h == cfg.input_size && s.image.w == cfg.input_size
                       ? s
                       : resize_pair_to(s, cfg.input_size, cfg.input_size));

  StageResult result;
  std::size_t budget = hooks.max_steps.value_or(static_cast<std::size_t>(-1));
  auto& cur = state.cursor;
  double epoch_sum = 0.0;
  bool epoch_whole = cur.step == 0;

  while (!cur.done && cur.epoch < epochs) {
    if (budget == 0) return result;
    const auto order = epoch_order(cfg.seed, stage, cur.epoch, n);
    CounterRng step_rng = epoch_rng(cfg.seed, stage, cur.epoch).fork(1 + cur.step);
    const double scale = cfg.multiscale ? draw_scale(step_rng) : 1.0;

    const std::size_t lo = cur.step * cfg.batch;
    const std::size_t hi = std::min(n, lo + cfg.batch);
    const double inv = 1.0 / static_cast<double>(hi - lo);

    std::vector<std::vector<double>> grads(trainable.size());
    for (std::size_t i = 0; i < trainable.size(); ++i) grads[i].assign(trainable[i]->value.numel(), 0.0);
    double loss_sum = 0.0;
    for (std::size_t b = lo; b < hi; ++b) {
      const SamplePair& s0 = base[order[b]];
      const SamplePair scaled = scale == 1.0 ? s0 : resize_pair(s0, scale);
      const Tensor loss = sample_loss(m, scaled, stage, cfg);
      const double lv = loss.item();
      if (!std::isfinite(lv)) throw NumericError("non-finite training loss at sample " + s0.id);
      loss_sum += lv;
      const auto g = backward(loss, ctx);
      for (std::size_t i = 0; i < g.size(); ++i)
        for (std::size_t j = 0; j < g[i].size(); ++j) grads[i][j] += inv * g[i][j];
    }
    for (const auto& t : watched) t.impl()->grad.clear();
    adam_step(trainable, grads, state.adam, cfg);

    const LossRow row{stage, cur.epoch, cur.step, loss_sum * inv};
    result.rows.push_back(row);
    if (hooks.on_step) hooks.on_step(row);
    epoch_sum += row.loss;
    --budget;

    if (++cur.step == steps) {
      if (epoch_whole) {
        const double mean = epoch_sum / static_cast<double>(steps);
        result.epoch_means.push_back(mean);
        if (hooks.on_epoch) hooks.on_epoch(stage, cur.epoch, mean);
      }
      cur.step = 0;
      ++cur.epoch;
      epoch_sum = 0.0;
      epoch_whole = true;
    }
  }
  cur.done = true;
  result.finished = true;
  return result;
}

std::string loss_tsv_header() { return "stage\tepoch\tstep\tloss\n"; }

std::string loss_tsv_row(const LossRow& r) {
  char buf[128];
  std::snprintf(buf, sizeof buf, "%d\t%llu\t%llu\t%.17g\n", r.stage,
                static_cast<unsigned long long>(r.epoch), static_cast<unsigned long long>(r.step), r.loss);
  return buf;
}

std::string loss_tsv(const std::vector<LossRow>& rows) {
  std::string out = loss_tsv_header();
  for (const auto& r : rows) out += loss_tsv_row(r);
  return out;
}

std::vector<Plane> predict_all(const SamMamba& m, const std::vector<SamplePair>& data,
                               std::size_t input_size, MaskSource source) {
  std::vector<Plane> out(data.size());
  const long n = static_cast<long>(data.size());
  // An exception may not leave an OpenMP region; keep the first one and
  // rethrow after the loop.
  std::exception_ptr failure;
#pragma omp parallel for schedule(dynamic)
  for (long i = 0; i < n; ++i) {
    try {
      Prediction p = predict(m, data[i].image, input_size);
      out[i] = source == MaskSource::Refined ? std::move(p.refined) : std::move(p.pseudo);
    } catch (...) {
#pragma omp critical(smamba_predict_failure)
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);
  return out;
}

MetricsReport evaluate_model(const SamMamba& m, const std::vector<SamplePair>& data,
                             std::size_t input_size, MaskSource source, const std::string& dataset_id) {
  const auto preds = predict_all(m, data, input_size, source);
  std::vector<std::string> ids;
  std::vector<Plane> gts;
  for (const auto& s : data) {
    ids.push_back(s.id);
    gts.push_back(s.mask);
  }
  return evaluate_dataset(dataset_id, ids, preds, gts);
}

}  // namespace smamba
