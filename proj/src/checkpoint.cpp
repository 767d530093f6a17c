#include "smamba/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>

#include "smamba/data.hpp"

namespace smamba {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

class Writer {
 public:
  template <typename T>
  void pod(T v) {
    char b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T));
    out_.append(b, sizeof(T));
  }
  void str(const std::string& s) {
    pod<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
    out_ += s;
  }
  void tensor(const StoredTensor& t) {
    str(t.name);
    pod<std::uint32_t>(static_cast<std::uint32_t>(t.dims.size()));
    for (auto d : t.dims) pod(d);
    out_.append(reinterpret_cast<const char*>(t.data.data()), t.data.size() * sizeof(float));
  }
  std::string take() { return std::move(out_); }

 private:
  std::string out_;
};

class Reader {
 public:
  explicit Reader(const std::string& b) : b_(b) {}

  template <typename T>
  T pod(const char* what) {
    need(sizeof(T), what);
    T v;
    std::memcpy(&v, b_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string str(const char* what) {
    const auto n = pod<std::uint32_t>(what);
    need(n, what);
    std::string s = b_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  StoredTensor tensor() {
    StoredTensor t;
    t.name = str("tensor name");
    const auto rank = pod<std::uint32_t>("tensor rank");
    if (rank == 0 || rank > 8)
      throw CheckpointError(CheckpointErrorCode::Shape, "bad rank " + std::to_string(rank) + " for tensor " + t.name);
    std::uint64_t numel = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
      t.dims.push_back(pod<std::uint32_t>("tensor dims"));
      numel *= t.dims.back();
      if (t.dims.back() == 0 || numel > (std::uint64_t{1} << 32))
        throw CheckpointError(CheckpointErrorCode::Shape, "bad dims for tensor " + t.name);
    }
    need(numel * sizeof(float), "tensor data");
    t.data.resize(numel);
    std::memcpy(t.data.data(), b_.data() + pos_, numel * sizeof(float));
    pos_ += numel * sizeof(float);
    return t;
  }
  bool at_end() const { return pos_ == b_.size(); }

 private:
  void need(std::uint64_t n, const char* what) const {
    if (b_.size() - pos_ < n)
      throw CheckpointError(CheckpointErrorCode::Truncated, std::string("checkpoint truncated in ") + what);
  }

  const std::string& b_;
  std::size_t pos_ = 0;
};

StoredTensor store(const std::string& name, const Shape& shape, std::span<const double> values) {
  StoredTensor t;
  t.name = name;
  for (auto d : shape) t.dims.push_back(static_cast<std::uint32_t>(d));
  t.data.reserve(values.size());
  for (double v : values) t.data.push_back(static_cast<float>(v));
  return t;
}

void check_shape(const StoredTensor& t, const Shape& expected) {
  bool ok = t.dims.size() == expected.size();
  for (std::size_t i = 0; ok && i < expected.size(); ++i) ok = t.dims[i] == expected[i];
  if (!ok) {
    std::string got = "[";
    for (std::size_t i = 0; i < t.dims.size(); ++i) got += (i ? "," : "") + std::to_string(t.dims[i]);
    throw CheckpointError(CheckpointErrorCode::Shape, "shape mismatch for tensor " + t.name + ": stored " +
                                                          got + "], model expects " + shape_str(expected));
  }
}

std::vector<double> widen(const std::vector<float>& v) { return {v.begin(), v.end()}; }

}  // namespace

std::uint64_t run_rng_key(std::uint64_t seed) { return epoch_rng(seed, 0, 0).key(); }

std::string encode_checkpoint(const CheckpointData& c) {
  Writer w;
  w.pod<char>('S');
  w.pod<char>('M');
  w.pod<char>('C');
  w.pod<char>('K');
  w.pod<std::uint32_t>(kCheckpointVersion);
  w.str(c.config_text);
  w.pod<std::int32_t>(c.cursor.stage);
  w.pod<std::uint64_t>(c.cursor.epoch);
  w.pod<std::uint64_t>(c.cursor.step);
  w.pod<std::uint8_t>(c.cursor.done ? 1 : 0);
  w.pod<std::uint64_t>(c.rng_key);
  w.pod<std::uint64_t>(c.adam_t);
  w.pod<std::uint32_t>(static_cast<std::uint32_t>(c.params.size()));
  for (const auto& t : c.params) w.tensor(t);
  if (c.moment_m.size() != c.moment_v.size()) throw std::invalid_argument("moment lists differ in length");
  w.pod<std::uint32_t>(static_cast<std::uint32_t>(c.moment_m.size()));
  for (std::size_t i = 0; i < c.moment_m.size(); ++i) {
    w.tensor(c.moment_m[i]);
    w.tensor(c.moment_v[i]);
  }
  return w.take();
}

CheckpointData decode_checkpoint(const std::string& bytes) {
  if (bytes.size() < 4 || bytes.compare(0, 4, "SMCK") != 0)
    throw CheckpointError(CheckpointErrorCode::Magic, "not a checkpoint (bad magic)");
  Reader r(bytes);
  r.pod<std::uint32_t>("magic");
  const auto version = r.pod<std::uint32_t>("version");
  if (version != kCheckpointVersion)
    throw CheckpointError(CheckpointErrorCode::Version, "unsupported checkpoint version " + std::to_string(version));
  CheckpointData c;
  c.config_text = r.str("config");
  c.cursor.stage = r.pod<std::int32_t>("stage");
  c.cursor.epoch = r.pod<std::uint64_t>("epoch");
  c.cursor.step = r.pod<std::uint64_t>("step");
  c.cursor.done = r.pod<std::uint8_t>("done") != 0;
  c.rng_key = r.pod<std::uint64_t>("rng key");
  c.adam_t = r.pod<std::uint64_t>("adam step");
  const auto np = r.pod<std::uint32_t>("parameter count");
  for (std::uint32_t i = 0; i < np; ++i) c.params.push_back(r.tensor());
  const auto nm = r.pod<std::uint32_t>("moment count");
  for (std::uint32_t i = 0; i < nm; ++i) {
    c.moment_m.push_back(r.tensor());
    c.moment_v.push_back(r.tensor());
  }
  if (!r.at_end()) throw CheckpointError(CheckpointErrorCode::Truncated, "trailing bytes after checkpoint");
  return c;
}

CheckpointData snapshot(const SamMamba& m, const RunConfig& cfg, const TrainState& state) {
  CheckpointData c;
  c.config_text = serialize_run_config(cfg);
  c.cursor = state.cursor;
  c.rng_key = run_rng_key(cfg.train.seed);
  c.adam_t = state.adam.t;
  for (const auto& p : m.params.all()) c.params.push_back(store(p.name, p.value.shape(), p.value.data()));
  for (const auto& s : state.adam.slots) {
    const NamedParam* p = m.params.find(s.name);
    if (!p) throw std::invalid_argument("optimizer slot without parameter: " + s.name);
    c.moment_m.push_back(store(s.name, p->value.shape(), s.m));
    c.moment_v.push_back(store(s.name, p->value.shape(), s.v));
  }
  return c;
}

Restored restore(const CheckpointData& c) {
  Restored out;
  try {
    out.cfg = parse_run_config(c.config_text);
  } catch (const ConfigError& e) {
    throw CheckpointError(CheckpointErrorCode::Config, std::string("stored config invalid: ") + e.what());
  }
  if (c.rng_key != run_rng_key(out.cfg.train.seed))
    throw CheckpointError(CheckpointErrorCode::Config, "stored rng key does not match the stored seed");
  out.model = build_model(out.cfg.model, out.cfg.train.seed);

  const auto& all = out.model.params.all();
  if (c.params.size() > all.size()) {
    for (const auto& t : c.params)
      if (!out.model.params.find(t.name))
        throw CheckpointError(CheckpointErrorCode::Unknown, "checkpoint holds unknown tensor " + t.name);
  }
  for (std::size_t i = 0; i < all.size(); ++i) {
    if (i >= c.params.size())
      throw CheckpointError(CheckpointErrorCode::Missing, "checkpoint lacks tensor " + all[i].name);
    const StoredTensor& t = c.params[i];
    if (t.name != all[i].name) {
      if (!out.model.params.find(t.name))
        throw CheckpointError(CheckpointErrorCode::Unknown, "checkpoint holds unknown tensor " + t.name);
      throw CheckpointError(CheckpointErrorCode::Missing,
                            "checkpoint lacks tensor " + all[i].name + " at position " + std::to_string(i));
    }
    check_shape(t, all[i].value.shape());
    Tensor dst = all[i].value;
    std::copy(t.data.begin(), t.data.end(), dst.mutable_data().begin());
  }

  out.state.cursor = c.cursor;
  out.state.adam.t = c.adam_t;
  for (std::size_t i = 0; i < c.moment_m.size(); ++i) {
    const auto& tm = c.moment_m[i];
    const auto& tv = c.moment_v[i];
    const NamedParam* p = out.model.params.find(tm.name);
    if (!p || tv.name != tm.name)
      throw CheckpointError(CheckpointErrorCode::Unknown, "optimizer moments for unknown tensor " + tm.name);
    check_shape(tm, p->value.shape());
    check_shape(tv, p->value.shape());
    out.state.adam.slots.push_back({tm.name, widen(tm.data), widen(tv.data)});
  }
  return out;
}

void save_checkpoint(const std::filesystem::path& path, const SamMamba& m, const RunConfig& cfg,
                     const TrainState& state) {
  try {
    write_file_atomic(path, encode_checkpoint(snapshot(m, cfg, state)));
  } catch (const PnmError& e) {
    throw CheckpointError(CheckpointErrorCode::Io, e.what());
  }
}

Restored load_checkpoint(const std::filesystem::path& path) {
  std::string bytes;
  try {
    bytes = read_file(path);
  } catch (const PnmError& e) {
    throw CheckpointError(CheckpointErrorCode::Io, e.what());
  }
  return restore(decode_checkpoint(bytes));
}

std::size_t load_backbone(SamMamba& m, const CheckpointData& c) {
  std::size_t copied = 0;
  for (const auto& p : m.params.all()) {
    if (p.group != ParamGroup::Backbone) continue;
    const auto it = std::find_if(c.params.begin(), c.params.end(),
                                 [&](const StoredTensor& t) { return t.name == p.name; });
    if (it == c.params.end())
      throw CheckpointError(CheckpointErrorCode::Missing, "backbone source lacks tensor " + p.name);
    check_shape(*it, p.value.shape());
    Tensor dst = p.value;
    std::copy(it->data.begin(), it->data.end(), dst.mutable_data().begin());
    ++copied;
  }
  return copied;
}

std::size_t load_backbone(SamMamba& m, const std::filesystem::path& path) {
  std::string bytes;
  try {
    bytes = read_file(path);
  } catch (const PnmError& e) {
    throw CheckpointError(CheckpointErrorCode::Io, e.what());
  }
  return load_backbone(m, decode_checkpoint(bytes));
}

}  // namespace smamba
