// smamba: data generation, training, evaluation, inference, heatmaps,
// gradient checks and scan benchmarking from one binary.
//
// Exit codes: 0 ok, 2 usage / config / data, 3 numeric failure,
// 4 verification failure.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "smamba/checkpoint.hpp"
#include "smamba/config.hpp"
#include "smamba/data.hpp"
#include "smamba/diagnostics.hpp"
#include "smamba/kernels.hpp"
#include "smamba/metrics.hpp"
#include "smamba/model.hpp"
#include "smamba/rng.hpp"
#include "smamba/train.hpp"

namespace fs = std::filesystem;
using namespace smamba;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitNumeric = 3;
constexpr int kExitVerify = 4;

// Thrown for failures that map to exit code 4.
struct VerificationFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::vector<SamplePair> load_training_dir(const fs::path& dir) {
  const fs::path train = dir / split_name(Split::Train);
  return load_dir(fs::is_directory(train) ? train : dir);
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  write_file_atomic(path, text);
}

void require_patch_multiple(const RgbImage& img, std::size_t patch) {
  if (img.h % patch != 0 || img.w % patch != 0)
    throw std::invalid_argument("image size " + std::to_string(img.h) + "x" + std::to_string(img.w) +
                                " is not a multiple of the patch size " + std::to_string(patch));
}

// ---- gen-data -------------------------------------------------------------

struct GenArgs {
  std::string spec, out;
  std::uint64_t seed = 0;
};

int run_gen_data(const GenArgs& a) {
  const RunConfig cfg = load_run_config(a.spec);
  cfg.data.validate();
  std::error_code ec;
  fs::create_directories(a.out, ec);
  if (ec || !fs::is_directory(a.out)) throw PnmError(PnmErrorCode::Io, "cannot create output directory " + a.out);
  generate_dataset(cfg.data, a.seed, a.out);
  std::printf("wrote %zu train, %zu test-seen, %zu test-unseen pairs to %s\n", cfg.data.train_count,
              cfg.data.test_seen_count, cfg.data.test_unseen_count, a.out.c_str());
  return kExitOk;
}

// ---- train ----------------------------------------------------------------

struct TrainArgs {
  std::string config, data, out, stage = "both", ablation, loss_tsv, resume, backbone;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> max_steps;
  bool quiet = false;
};

int run_train(const TrainArgs& a) {
  RunConfig cfg;
  SamMamba model;
  TrainState state;
  if (!a.resume.empty()) {
    Restored r = load_checkpoint(a.resume);
    cfg = r.cfg;
    model = std::move(r.model);
    state = std::move(r.state);
    if (!a.ablation.empty() || a.seed || !a.backbone.empty())
      throw ConfigError("--ablation, --seed and --backbone cannot change a resumed run");
  } else {
    if (a.config.empty()) throw ConfigError("train needs --config (or --resume)");
    cfg = load_run_config(a.config);
    if (!a.ablation.empty() && !apply_ablation(cfg.model, a.ablation))
      throw ConfigError("unknown ablation '" + a.ablation + "'");
    if (a.seed) cfg.train.seed = *a.seed;
    cfg.model.validate();
    cfg.train.validate();
    model = build_model(cfg.model, cfg.train.seed);
    if (!a.backbone.empty()) {
      const std::size_t n = load_backbone(model, a.backbone);
      if (!a.quiet) std::printf("loaded %zu backbone tensors from %s\n", n, a.backbone.c_str());
    }
  }

  std::vector<int> stages;
  if (a.stage == "1") stages = {1};
  else if (a.stage == "2") stages = {2};
  else stages = {1, 2};
  // A resumed run continues the stage it stopped in.
  if (state.cursor.stage != 0) {
    std::vector<int> rest;
    for (int s : stages)
      if (s > state.cursor.stage || (s == state.cursor.stage && !state.cursor.done)) rest.push_back(s);
    stages = rest;
  }

  const auto data = load_training_dir(a.data);
  const fs::path tsv_path = a.loss_tsv.empty() ? fs::path(a.out + ".loss.tsv") : fs::path(a.loss_tsv);
  std::string tsv = loss_tsv_header();
  if (!a.resume.empty() && fs::exists(tsv_path)) tsv = read_file(tsv_path);

  TrainHooks hooks;
  hooks.max_steps = a.max_steps;
  hooks.on_step = [&](const LossRow& r) { tsv += loss_tsv_row(r); };
  hooks.on_epoch = [&](int stage, std::uint64_t epoch, double mean) {
    if (!a.quiet) std::printf("stage %d epoch %llu mean loss %.6f\n", stage, static_cast<unsigned long long>(epoch), mean);
    std::fflush(stdout);
  };

  bool stopped = false;
  try {
    for (int s : stages) {
      const StageResult r = train_stage(model, data, cfg.train, s, state, hooks);
      if (hooks.max_steps) *hooks.max_steps -= std::min(*hooks.max_steps, r.rows.size());
      if (!r.finished) {
        stopped = true;
        break;
      }
    }
  } catch (const NumericError&) {
    write_text(tsv_path, tsv);
    throw;
  }
  save_checkpoint(a.out, model, cfg, state);
  write_text(tsv_path, tsv);
  write_text(a.out + ".freeze.tsv", freeze_ledger_tsv(freeze_ledger(model, cfg.train.stage2_aux_sup)));
  if (!a.quiet)
    std::printf("%s checkpoint %s (stage %d, epoch %llu, step %llu)\n", stopped ? "paused" : "wrote", a.out.c_str(),
                state.cursor.stage, static_cast<unsigned long long>(state.cursor.epoch),
                static_cast<unsigned long long>(state.cursor.step));
  return kExitOk;
}

// ---- eval -----------------------------------------------------------------

struct EvalArgs {
  std::string ckpt, data, report, pred_dir, mask_dir, source = "refined";
  std::optional<double> threshold;
};

std::map<std::string, fs::path> pgm_files(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw std::invalid_argument("not a directory: " + dir.string());
  std::map<std::string, fs::path> out;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".pgm") out[e.path().stem().string()] = e.path();
  return out;
}

int run_eval(const EvalArgs& a) {
  MetricsReport report;
  if (!a.ckpt.empty()) {
    if (a.data.empty()) throw ConfigError("eval --ckpt needs --data");
    const Restored r = load_checkpoint(a.ckpt);
    const auto data = load_dir(a.data);
    const MaskSource src = a.source == "pseudo" ? MaskSource::Pseudo : MaskSource::Refined;
    const auto preds = predict_all(r.model, data, r.cfg.train.input_size, src);
    std::vector<std::string> ids;
    std::vector<Plane> gts;
    for (const auto& s : data) {
      ids.push_back(s.id);
      gts.push_back(s.mask);
    }
    report = evaluate_dataset(fs::path(a.data).filename().string(), ids, preds, gts, a.threshold);
  } else {
    if (a.pred_dir.empty() || a.mask_dir.empty()) throw ConfigError("eval needs --ckpt or both --pred-dir and --mask-dir");
    const auto preds = pgm_files(a.pred_dir);
    const auto masks = pgm_files(a.mask_dir);
    std::string missing;
    for (const auto& [id, p] : masks)
      if (!preds.count(id)) missing += (missing.empty() ? "" : ", ") + id;
    for (const auto& [id, p] : preds)
      if (!masks.count(id)) missing += (missing.empty() ? "" : ", ") + id;
    if (!missing.empty()) throw std::invalid_argument("missing prediction/mask partner for: " + missing);
    if (masks.empty()) throw std::invalid_argument("no masks in " + a.mask_dir);
    std::vector<std::string> ids;
    std::vector<Plane> p, g;
    for (const auto& [id, path] : masks) {
      ids.push_back(id);
      Plane m = load_pgm(path);
      for (double& v : m.v) v = v >= 128.0 / 255.0 ? 1.0 : 0.0;
      g.push_back(std::move(m));
      p.push_back(load_pgm(preds.at(id)));
    }
    report = evaluate_dataset(fs::path(a.mask_dir).filename().string(), ids, p, g, a.threshold);
  }
  if (!a.report.empty()) write_text(a.report, report_tsv(report));
  std::fputs(report_text(report).c_str(), stdout);
  return kExitOk;
}

// ---- infer / heatmap ------------------------------------------------------

struct InferArgs {
  std::string ckpt, image, out, also_pseudo;
};

int run_infer(const InferArgs& a) {
  const Restored r = load_checkpoint(a.ckpt);
  const RgbImage img = load_ppm(a.image);
  require_patch_multiple(img, r.cfg.model.patch);
  const Prediction p = predict(r.model, img, 0);
  save_pgm(a.out, p.refined);
  if (!a.also_pseudo.empty()) save_pgm(a.also_pseudo, p.pseudo);
  std::printf("wrote %s (%zux%zu)\n", a.out.c_str(), p.refined.h, p.refined.w);
  return kExitOk;
}

struct HeatmapArgs {
  std::string ckpt, image, out_dir;
};

int run_heatmap(const HeatmapArgs& a) {
  const Restored r = load_checkpoint(a.ckpt);
  const RgbImage img = load_ppm(a.image);
  require_patch_multiple(img, r.cfg.model.patch);
  const Heatmaps h = compute_heatmaps(r.model, img);
  fs::create_directories(a.out_dir);
  const Plane* maps[] = {&h.prior, &h.embedding, &h.decoder};
  for (std::size_t i = 0; i < 3; ++i) {
    const fs::path path = fs::path(a.out_dir) / heatmap_filenames()[i];
    save_pgm(path, *maps[i]);
    std::printf("wrote %s\n", path.c_str());
  }
  return kExitOk;
}

// ---- gradcheck ------------------------------------------------------------

struct GradArgs {
  std::string module = "all", config;
  std::uint64_t seed = 7;
  double tolerance = 1e-4;
};

int run_gradcheck(const GradArgs& a) {
  const RunConfig cfg = a.config.empty() ? tiny_run_config() : load_run_config(a.config);
  std::vector<std::string> modules;
  if (a.module == "all") modules = gradcheck_modules();
  else modules = {a.module};
  std::string failed;
  std::printf("module\tmax_rel_error\tcoordinates\tseconds\n");
  for (const auto& name : modules) {
    const auto t0 = std::chrono::steady_clock::now();
    const GradcheckResult r = gradcheck_module(name, cfg.model, cfg.train.input_size, a.seed);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("%s\t%.3e\t%zu\t%.2f\n", name.c_str(), r.max_rel_error, r.coordinates, secs);
    std::fflush(stdout);
    if (!(r.max_rel_error < a.tolerance)) failed += (failed.empty() ? "" : ", ") + name;
  }
  if (!failed.empty()) throw VerificationFailure("gradient check above tolerance for: " + failed);
  return kExitOk;
}

// ---- scan-bench -----------------------------------------------------------

struct ScanArgs {
  std::size_t len = 1024, channels = 8, state = 16;
  std::vector<std::size_t> chunks;
  std::uint64_t seed = 1;
  double min_seconds = 0.2;
};

int run_scan_bench(const ScanArgs& a) {
  const kernels::ScanDims dims{a.len, a.channels, a.state};
  CounterRng rng(mix64(a.seed));
  auto fill = [&](std::size_t n, double lo, double hi) {
    std::vector<double> v(n);
    for (auto& x : v) x = rng.uniform(lo, hi);
    return v;
  };
  const auto u = fill(a.len * a.channels, -1, 1), delta = fill(a.len * a.channels, 0.001, 0.2);
  const auto A = fill(a.channels * a.state, -2, -0.05), B = fill(a.len * a.state, -1, 1);
  const auto C = fill(a.len * a.state, -1, 1), D = fill(a.channels, -1, 1);
  std::vector<std::size_t> chunks = a.chunks;
  if (chunks.empty()) chunks = {1, 2, 3, 7, 64, a.len};

  std::vector<double> y_seq(a.len * a.channels), states(a.len * a.channels * a.state);
  kernels::scan_forward_seq(dims, u, delta, A, B, C, D, y_seq, states);

  auto rate = [&](auto&& fn) {
    std::size_t reps = 0;
    const auto t0 = std::chrono::steady_clock::now();
    double secs = 0;
    do {
      fn();
      ++reps;
      secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    } while (secs < a.min_seconds);
    return static_cast<double>(reps * a.len) / secs;
  };

  std::printf("L\tE\tN\tchunk\tthreads\tmax_abs_diff\tseq_tokens_per_s\tchunked_tokens_per_s\n");
  for (std::size_t chunk : chunks) {
    if (chunk == 0) throw std::invalid_argument("chunk must be positive");
    std::vector<double> y(a.len * a.channels);
    kernels::scan_forward_chunked(dims, chunk, u, delta, A, B, C, D, y);
    double diff = 0;
    for (std::size_t i = 0; i < y.size(); ++i) diff = std::max(diff, std::abs(y[i] - y_seq[i]));
    if (chunk >= a.len ? y != y_seq : !(diff <= 1e-10))
      throw VerificationFailure("chunked scan (chunk " + std::to_string(chunk) + ") disagrees with the sequential scan");
    const double seq = rate([&] { kernels::scan_forward_seq(dims, u, delta, A, B, C, D, y_seq, states); });
    const double chk = rate([&] { kernels::scan_forward_chunked(dims, chunk, u, delta, A, B, C, D, y); });
    std::printf("%zu\t%zu\t%zu\t%zu\t%d\t%.3e\t%.0f\t%.0f\n", a.len, a.channels, a.state, chunk,
                kernels::max_threads(), diff, seq, chk);
  }
  return kExitOk;
}

template <typename Fn>
int guarded(Fn&& fn) {
  try {
    return fn();
  } catch (const VerificationFailure& e) {
    std::fprintf(stderr, "verification failed: %s\n", e.what());
    return kExitVerify;
  } catch (const NumericError& e) {
    std::fprintf(stderr, "numeric failure: %s\n", e.what());
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitUsage;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"SAM-Mamba toy-scale polyp segmentation pipeline"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every subcommand");

  int exit_code = kExitOk;

  GenArgs gen;
  auto* c_gen = app.add_subcommand("gen-data", "Generate the synthetic dataset (PPM/PGM pairs + manifest)");
  c_gen->add_option("--spec", gen.spec, "Run config whose [data] section describes the dataset")->required();
  c_gen->add_option("--out", gen.out, "Output directory")->required();
  c_gen->add_option("--seed", gen.seed, "Master seed")->required();
  c_gen->callback([&] { exit_code = guarded([&] { return run_gen_data(gen); }); });

  TrainArgs tr;
  auto* c_train = app.add_subcommand("train", "Two-stage training; writes checkpoint and loss TSV");
  c_train->add_option("--config", tr.config, "Run config file");
  c_train->add_option("--data", tr.data, "Dataset directory (uses <dir>/train when present)")->required();
  c_train->add_option("--out", tr.out, "Checkpoint path")->required();
  c_train->add_option("--stage", tr.stage, "Stages to run")->check(CLI::IsMember({"1", "2", "both"}));
  c_train->add_option("--ablation", tr.ablation, "Ablation preset")->check(CLI::IsMember(ablation_names()));
  c_train->add_option("--seed", tr.seed, "Override the config seed");
  c_train->add_option("--loss-tsv", tr.loss_tsv, "Loss curve path (default <out>.loss.tsv)");
  c_train->add_option("--resume", tr.resume, "Continue from a checkpoint");
  c_train->add_option("--backbone", tr.backbone, "Take the frozen backbone weights from this checkpoint");
  c_train->add_option("--max-steps", tr.max_steps, "Stop after this many optimizer steps");
  c_train->add_flag("--quiet", tr.quiet, "Only report errors");
  c_train->callback([&] { exit_code = guarded([&] { return run_train(tr); }); });

  EvalArgs ev;
  auto* c_eval = app.add_subcommand("eval", "Six-metric evaluation report");
  c_eval->add_option("--ckpt", ev.ckpt, "Checkpoint to evaluate");
  c_eval->add_option("--data", ev.data, "Directory of <id>.ppm / <id>.pgm pairs");
  c_eval->add_option("--pred-dir", ev.pred_dir, "Directory of predicted <id>.pgm maps");
  c_eval->add_option("--mask-dir", ev.mask_dir, "Directory of ground-truth <id>.pgm masks");
  c_eval->add_option("--report", ev.report, "TSV report path");
  c_eval->add_option("--source", ev.source, "Mask evaluated from a checkpoint")->check(CLI::IsMember({"refined", "pseudo"}));
  c_eval->add_option("--threshold", ev.threshold, "Single binarization threshold instead of the sweep")
      ->check(CLI::Range(0.0, 1.0));
  c_eval->callback([&] { exit_code = guarded([&] { return run_eval(ev); }); });

  InferArgs inf;
  auto* c_infer = app.add_subcommand("infer", "Predict a mask for one image");
  c_infer->add_option("--ckpt", inf.ckpt, "Checkpoint")->required();
  c_infer->add_option("--image", inf.image, "Input PPM")->required();
  c_infer->add_option("--out", inf.out, "Refined mask PGM")->required();
  c_infer->add_option("--also-pseudo", inf.also_pseudo, "Also write the encoder pseudo mask");
  c_infer->callback([&] { exit_code = guarded([&] { return run_infer(inf); }); });

  HeatmapArgs hm;
  auto* c_heat = app.add_subcommand("heatmap", "Export feature-magnitude maps as PGM");
  c_heat->add_option("--ckpt", hm.ckpt, "Checkpoint")->required();
  c_heat->add_option("--image", hm.image, "Input PPM")->required();
  c_heat->add_option("--out-dir", hm.out_dir, "Output directory")->required();
  c_heat->callback([&] { exit_code = guarded([&] { return run_heatmap(hm); }); });

  GradArgs gc;
  auto* c_grad = app.add_subcommand("gradcheck", "Finite-difference gradient check per module");
  std::vector<std::string> module_choices = gradcheck_modules();
  module_choices.push_back("all");
  c_grad->add_option("--module", gc.module, "Module to check")->check(CLI::IsMember(module_choices));
  c_grad->add_option("--config", gc.config, "Run config (default: built-in tiny config)");
  c_grad->add_option("--seed", gc.seed, "Seed for weights and probes");
  c_grad->add_option("--tolerance", gc.tolerance, "Maximum accepted relative error");
  c_grad->callback([&] { exit_code = guarded([&] { return run_gradcheck(gc); }); });

  ScanArgs sb;
  auto* c_scan = app.add_subcommand("scan-bench", "Sequential vs chunked selective scan throughput");
  c_scan->add_option("--L", sb.len, "Sequence length")->check(CLI::PositiveNumber);
  c_scan->add_option("--E", sb.channels, "Channels")->check(CLI::PositiveNumber);
  c_scan->add_option("--N", sb.state, "State size")->check(CLI::PositiveNumber);
  c_scan->add_option("--chunk", sb.chunks, "Chunk length (repeatable)");
  c_scan->add_option("--seed", sb.seed, "Seed for the random inputs");
  c_scan->add_option("--min-seconds", sb.min_seconds, "Timing window per measurement");
  c_scan->callback([&] { exit_code = guarded([&] { return run_scan_bench(sb); }); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitUsage;
  }
  return exit_code;
}
