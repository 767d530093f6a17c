#include "smamba/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

namespace smamba {

bool ModelConfig::injects_at(std::size_t block) const {
  return inject_at.empty() || std::find(inject_at.begin(), inject_at.end(), block) != inject_at.end();
}

void ModelConfig::validate() const {
  if (c0 == 0) throw ConfigError("model.c0 must be positive");
  if (use_mamba && !use_msd) throw ConfigError("model.use_mamba requires model.use_msd");
  if (use_msd) {
    if (msd_kernels.empty()) throw ConfigError("model.msd_kernels must not be empty");
    if ((3 * c0) % msd_kernels.size() != 0)
      throw ConfigError("model.msd_kernels: 3*c0 must divide evenly among the kernels");
    for (std::size_t k : msd_kernels)
      if (k % 2 == 0) throw ConfigError("model.msd_kernels: kernel sizes must be odd");
  }
  if (patch < 4 || (patch & (patch - 1)) != 0) throw ConfigError("model.patch must be a power of two >= 4");
  if (dim == 0 || heads == 0 || dim % heads != 0) throw ConfigError("model.dim must be divisible by model.heads");
  if (decoder_heads == 0 || dim % decoder_heads != 0)
    throw ConfigError("model.dim must be divisible by model.decoder_heads");
  if (dim < 8 || dim % 8 != 0) throw ConfigError("model.dim must be a positive multiple of 8");
  if (depth == 0) throw ConfigError("model.depth must be positive");
  for (std::size_t b : inject_at)
    if (b >= depth) throw ConfigError("model.inject_at: block index out of range");
  if (adapter_bottleneck == 0) throw ConfigError("model.adapter_bottleneck must be positive");
  if (mamba_expand == 0 || mamba_state == 0 || mamba_conv == 0)
    throw ConfigError("model.mamba_* must be positive");
}

void TrainConfig::validate() const {
  if (!(lr > 0)) throw ConfigError("train.lr must be > 0");
  if (batch == 0) throw ConfigError("train.batch must be positive");
  if (weight_kernel % 2 == 0) throw ConfigError("train.weight_kernel must be odd");
  if (!(smooth > 0)) throw ConfigError("train.smooth must be > 0");
  if (input_size < 16) throw ConfigError("train.input_size too small");
}

void DataConfig::validate() const {
  if (!(contrast > 0)) throw ConfigError("data.contrast must be > 0");
  if (size < 32) throw ConfigError("data.size must be >= 32");
}

namespace {

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string fmt_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

double parse_double(const std::string& key, const std::string& v) {
  double out = 0;
  auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size())
    throw ConfigError("invalid number for key '" + key + "': " + v);
  return out;
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size())
    throw ConfigError("invalid integer for key '" + key + "': " + v);
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("invalid boolean for key '" + key + "': " + v);
}

std::vector<std::size_t> parse_list(const std::string& key, const std::string& v) {
  std::vector<std::size_t> out;
  if (v.empty() || v == "all") return out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_u64(key, trim(item)));
  return out;
}

std::string fmt_list(const std::vector<std::size_t>& v, const char* empty) {
  if (v.empty()) return empty;
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

struct Field {
  const char* section;
  const char* key;
  std::function<void(RunConfig&, const std::string&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define SIZE_FIELD(sec, member, name)                                                              \
  Field{sec, name, [](RunConfig& c, const std::string& k, const std::string& v) { c.member = parse_u64(k, v); }, \
        [](const RunConfig& c) { return std::to_string(c.member); }}
#define DOUBLE_FIELD(sec, member, name)                                                               \
  Field{sec, name, [](RunConfig& c, const std::string& k, const std::string& v) { c.member = parse_double(k, v); }, \
        [](const RunConfig& c) { return fmt_double(c.member); }}
#define BOOL_FIELD(sec, member, name)                                                                \
  Field{sec, name, [](RunConfig& c, const std::string& k, const std::string& v) { c.member = parse_bool(k, v); }, \
        [](const RunConfig& c) { return std::string(c.member ? "true" : "false"); }}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      SIZE_FIELD("model", model.c0, "c0"),
      Field{"model", "msd_kernels",
            [](RunConfig& c, const std::string& k, const std::string& v) { c.model.msd_kernels = parse_list(k, v); },
            [](const RunConfig& c) { return fmt_list(c.model.msd_kernels, ""); }},
      BOOL_FIELD("model", model.use_msd, "use_msd"),
      BOOL_FIELD("model", model.use_mamba, "use_mamba"),
      SIZE_FIELD("model", model.mamba_expand, "mamba_expand"),
      SIZE_FIELD("model", model.mamba_state, "mamba_state"),
      SIZE_FIELD("model", model.mamba_conv, "mamba_conv"),
      SIZE_FIELD("model", model.patch, "patch"),
      SIZE_FIELD("model", model.dim, "dim"),
      SIZE_FIELD("model", model.depth, "depth"),
      SIZE_FIELD("model", model.heads, "heads"),
      SIZE_FIELD("model", model.mlp_ratio, "mlp_ratio"),
      Field{"model", "inject_at",
            [](RunConfig& c, const std::string& k, const std::string& v) { c.model.inject_at = parse_list(k, v); },
            [](const RunConfig& c) { return fmt_list(c.model.inject_at, "all"); }},
      SIZE_FIELD("model", model.backbone_seed, "backbone_seed"),
      SIZE_FIELD("model", model.adapter_bottleneck, "adapter_bottleneck"),
      SIZE_FIELD("model", model.decoder_depth, "decoder_depth"),
      SIZE_FIELD("model", model.decoder_heads, "decoder_heads"),
      SIZE_FIELD("model", model.decoder_mlp_ratio, "decoder_mlp_ratio"),
      BOOL_FIELD("model", model.prompt_stop_grad, "prompt_stop_grad"),

      DOUBLE_FIELD("train", train.lr, "lr"),
      DOUBLE_FIELD("train", train.beta1, "beta1"),
      DOUBLE_FIELD("train", train.beta2, "beta2"),
      DOUBLE_FIELD("train", train.adam_eps, "adam_eps"),
      SIZE_FIELD("train", train.epochs_stage1, "epochs_stage1"),
      SIZE_FIELD("train", train.epochs_stage2, "epochs_stage2"),
      SIZE_FIELD("train", train.batch, "batch"),
      SIZE_FIELD("train", train.seed, "seed"),
      BOOL_FIELD("train", train.stage2_aux_sup, "stage2_aux_sup"),
      SIZE_FIELD("train", train.input_size, "input_size"),
      BOOL_FIELD("train", train.multiscale, "multiscale"),
      Field{"train", "precision",
            [](RunConfig& c, const std::string& k, const std::string& v) {
              if (v == "f32") c.train.precision = Precision::F32;
              else if (v == "f64") c.train.precision = Precision::F64;
              else throw ConfigError("invalid value for key '" + k + "': " + v + " (expected f32|f64)");
            },
            [](const RunConfig& c) { return std::string(c.train.precision == Precision::F32 ? "f32" : "f64"); }},
      SIZE_FIELD("train", train.weight_kernel, "weight_kernel"),
      DOUBLE_FIELD("train", train.weight_gain, "weight_gain"),
      DOUBLE_FIELD("train", train.smooth, "smooth"),

      SIZE_FIELD("data", data.train_count, "train_count"),
      SIZE_FIELD("data", data.test_seen_count, "test_seen_count"),
      SIZE_FIELD("data", data.test_unseen_count, "test_unseen_count"),
      SIZE_FIELD("data", data.size, "size"),
      DOUBLE_FIELD("data", data.contrast, "contrast"),
      DOUBLE_FIELD("data", data.boundary_blur, "boundary_blur"),
      DOUBLE_FIELD("data", data.texture_amplitude, "texture_amplitude"),
      DOUBLE_FIELD("data", data.secondary_prob, "secondary_prob"),
  };
  return table;
}

#undef SIZE_FIELD
#undef DOUBLE_FIELD
#undef BOOL_FIELD

}  // namespace

RunConfig parse_run_config(const std::string& text) {
  RunConfig cfg;
  std::istringstream in(text);
  std::string line, section;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError("line " + std::to_string(lineno) + ": malformed section header");
      section = trim(line.substr(1, line.size() - 2));
      if (section != "model" && section != "train" && section != "data")
        throw ConfigError("unknown section '" + section + "'");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (section.empty()) throw ConfigError("key '" + key + "' appears before any section header");
    const auto& table = fields();
    auto it = std::find_if(table.begin(), table.end(),
                           [&](const Field& f) { return section == f.section && key == f.key; });
    if (it == table.end()) throw ConfigError("unknown key '" + section + "." + key + "'");
    it->set(cfg, section + "." + key, value);
  }
  cfg.model.validate();
  cfg.train.validate();
  cfg.data.validate();
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot read config file " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_run_config(ss.str());
}

std::string serialize_run_config(const RunConfig& cfg) {
  std::string out;
  std::string section;
  for (const auto& f : fields()) {
    if (section != f.section) {
      section = f.section;
      out += (out.empty() ? "[" : "\n[") + section + "]\n";
    }
    out += std::string(f.key) + " = " + f.get(cfg) + "\n";
  }
  return out;
}

bool apply_ablation(ModelConfig& cfg, const std::string& name) {
  if (name == "adapter") {
    cfg.use_msd = false;
    cfg.use_mamba = false;
  } else if (name == "msd" || name == "multi") {
    cfg.use_msd = true;
    cfg.use_mamba = false;
    cfg.msd_kernels = {7, 5, 3};
  } else if (name == "full") {
    cfg.use_msd = true;
    cfg.use_mamba = true;
    cfg.msd_kernels = {7, 5, 3};
  } else if (name == "uni3" || name == "uni5" || name == "uni7") {
    cfg.use_msd = true;
    cfg.use_mamba = true;
    cfg.msd_kernels = {static_cast<std::size_t>(name.back() - '0')};
  } else {
    return false;
  }
  return true;
}

const std::vector<std::string>& ablation_names() {
  static const std::vector<std::string> names{"adapter", "msd", "full", "uni3", "uni5", "uni7", "multi"};
  return names;
}

}  // namespace smamba
