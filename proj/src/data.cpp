#include "smamba/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <sstream>

namespace smamba {

namespace fs = std::filesystem;

std::string split_name(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::TestSeen: return "test-seen";
    case Split::TestUnseen: return "test-unseen";
  }
  return "train";
}

Split parse_split(const std::string& s) {
  if (s == "train") return Split::Train;
  if (s == "test-seen") return Split::TestSeen;
  if (s == "test-unseen") return Split::TestUnseen;
  throw std::invalid_argument("unknown split '" + s + "'");
}

void GenSpec::validate() const {
  if (!(contrast > 0)) throw std::invalid_argument("gen spec: contrast must be > 0");
  if (size < 32) throw std::invalid_argument("gen spec: size must be >= 32");
  if (boundary_blur < 0) throw std::invalid_argument("gen spec: boundary_blur must be >= 0");
}

GenSpec GenSpec::from(const DataConfig& d, Split split) {
  GenSpec g;
  g.n = split == Split::Train ? d.train_count
        : split == Split::TestSeen ? d.test_seen_count
                                   : d.test_unseen_count;
  g.size = d.size;
  g.contrast = d.contrast;
  g.boundary_blur = d.boundary_blur;
  g.texture_amplitude = d.texture_amplitude;
  g.secondary_prob = d.secondary_prob;
  g.split = split;
  return g;
}

double BlobShape::radius(double theta) const {
  double s = 1.0;
  for (int m = 0; m < 5; ++m) s += a[m] * std::cos((m + 1) * theta + phi[m]);
  return r0 * s;
}

double BlobShape::min_radius() const {
  double mn = radius(0.0);
  for (int i = 1; i < 720; ++i) mn = std::min(mn, radius(2.0 * std::numbers::pi * i / 720.0));
  return mn;
}

namespace {

BlobShape draw_blob(CounterRng& rng, double cx, double cy, double r0) {
  BlobShape b;
  b.cx = cx;
  b.cy = cy;
  b.r0 = r0;
  for (int m = 0; m < 5; ++m) {
    b.a[m] = rng.uniform(-0.2, 0.2);
    b.phi[m] = rng.uniform(0.0, 2.0 * std::numbers::pi);
  }
  return b;
}

void rasterize(const BlobShape& b, Plane& mask) {
  for (std::size_t y = 0; y < mask.h; ++y)
    for (std::size_t x = 0; x < mask.w; ++x) {
      const double dx = static_cast<double>(x) + 0.5 - b.cx;
      const double dy = static_cast<double>(y) + 0.5 - b.cy;
      if (std::hypot(dx, dy) < b.radius(std::atan2(dy, dx))) mask(y, x) = 1.0;
    }
}

// Lattice value noise in [-1, 1] keyed by (key, cell).
double lattice(std::uint64_t key, long ix, long iy) {
  const std::uint64_t h = mix64(key ^ mix64(static_cast<std::uint64_t>(ix) * 0x632BE59BD9B4E019ULL +
                                             static_cast<std::uint64_t>(iy)));
  return static_cast<double>(h >> 11) * 0x1.0p-53 * 2.0 - 1.0;
}

double value_noise(std::uint64_t key, double x, double y, double cell) {
  const double fx = x / cell, fy = y / cell;
  const long ix = static_cast<long>(std::floor(fx)), iy = static_cast<long>(std::floor(fy));
  const double tx = fx - ix, ty = fy - iy;
  const double sx = tx * tx * (3 - 2 * tx), sy = ty * ty * (3 - 2 * ty);
  const double v00 = lattice(key, ix, iy), v10 = lattice(key, ix + 1, iy);
  const double v01 = lattice(key, ix, iy + 1), v11 = lattice(key, ix + 1, iy + 1);
  return (v00 * (1 - sx) + v10 * sx) * (1 - sy) + (v01 * (1 - sx) + v11 * sx) * sy;
}

Plane gaussian_blur(const Plane& p, double sigma) {
  if (sigma <= 0) return p;
  const int r = static_cast<int>(std::ceil(3 * sigma));
  std::vector<double> k(2 * r + 1);
  double sum = 0;
  for (int i = -r; i <= r; ++i) sum += k[i + r] = std::exp(-(i * i) / (2 * sigma * sigma));
  for (double& v : k) v /= sum;
  const long h = static_cast<long>(p.h), w = static_cast<long>(p.w);
  Plane tmp(p.h, p.w), out(p.h, p.w);
  for (long y = 0; y < h; ++y)
    for (long x = 0; x < w; ++x) {
      double acc = 0;
      for (int i = -r; i <= r; ++i) acc += k[i + r] * p(y, std::clamp(x + i, 0L, w - 1));
      tmp(y, x) = acc;
    }
  for (long y = 0; y < h; ++y)
    for (long x = 0; x < w; ++x) {
      double acc = 0;
      for (int i = -r; i <= r; ++i) acc += k[i + r] * tmp(std::clamp(y + i, 0L, h - 1), x);
      out(y, x) = acc;
    }
  return out;
}

double quantize(double v) { return std::round(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0; }

std::uint64_t sample_key(std::uint64_t master_seed, Split split, std::size_t index) {
  return mix64(mix64(master_seed + kGoldenGamma * (static_cast<std::uint64_t>(split) + 1)) ^
               mix64(static_cast<std::uint64_t>(index) + 0x5851F42D4C957F2DULL));
}

bool try_shape(const GenSpec& spec, CounterRng& rng, Plane& mask) {
  const double s = static_cast<double>(spec.size);
  const bool unseen = spec.split == Split::TestUnseen;
  const double r0 = unseen ? rng.uniform(0.09, 0.22) * s : rng.uniform(0.12, 0.3) * s;
  const BlobShape main = draw_blob(rng, rng.uniform(0.3, 0.7) * s, rng.uniform(0.3, 0.7) * s, r0);
  if (main.min_radius() < 0.25 * main.r0) return false;
  mask = Plane(spec.size, spec.size);
  rasterize(main, mask);
  for (int extra = 0; extra < 2; ++extra) {
    if (rng.uniform() >= spec.secondary_prob) continue;
    const BlobShape b = draw_blob(rng, rng.uniform(0.15, 0.85) * s, rng.uniform(0.15, 0.85) * s,
                                  rng.uniform(0.05, 0.1) * s);
    if (b.min_radius() < 0.25 * b.r0) return false;
    rasterize(b, mask);
  }
  double fg = 0;
  for (double v : mask.v) fg += v;
  fg /= static_cast<double>(mask.size());
  return fg >= 0.02 && fg <= 0.5;
}

}  // namespace

SamplePair gen_sample(const GenSpec& spec, std::uint64_t master_seed, std::size_t index) {
  spec.validate();
  const std::uint64_t key = sample_key(master_seed, spec.split, index);
  SamplePair out;
  out.seed = key;
  out.split = spec.split;
  char id[32];
  std::snprintf(id, sizeof(id), "s%05zu", index);
  out.id = id;

  CounterRng base(key);
  bool ok = false;
  CounterRng rng;
  for (int attempt = 0; attempt < kMaxShapeRetries && !ok; ++attempt) {
    rng = base.fork(static_cast<std::uint64_t>(attempt));
    ok = try_shape(spec, rng, out.mask);
  }
  if (!ok)
    throw GenerationError("gen_synthetic: sample " + out.id + " stayed degenerate after " +
                          std::to_string(kMaxShapeRetries) + " retries");

  // Background: tissue-like base colour with procedural texture. The seen
  // family uses coarse lattice noise, the unseen family fine-grained noise.
  const bool unseen = spec.split == Split::TestUnseen;
  const double cell_a = unseen ? 4.0 : 16.0, cell_b = unseen ? 2.0 : 8.0;
  const std::uint64_t tex_key = rng.next_u64();
  const double base_rgb[3] = {0.72 + rng.uniform(-0.05, 0.05), 0.42 + rng.uniform(-0.05, 0.05),
                              0.38 + rng.uniform(-0.05, 0.05)};
  const double offset_rgb[3] = {1.0, 0.55 + rng.uniform(-0.1, 0.1), 0.45 + rng.uniform(-0.1, 0.1)};
  const Plane soft = gaussian_blur(out.mask, spec.boundary_blur);
  out.image = RgbImage(spec.size, spec.size);
  for (std::size_t y = 0; y < spec.size; ++y)
    for (std::size_t x = 0; x < spec.size; ++x) {
      const double fx = static_cast<double>(x), fy = static_cast<double>(y);
      const double tex = 0.7 * value_noise(tex_key, fx, fy, cell_a) +
                         0.3 * value_noise(tex_key ^ 0xA5A5A5A5ULL, fx, fy, cell_b);
      for (std::size_t c = 0; c < 3; ++c) {
        const double v = base_rgb[c] + spec.texture_amplitude * tex +
                         spec.contrast * soft(y, x) * offset_rgb[c];
        out.image(y, x, c) = quantize(v);
      }
    }
  return out;
}

std::vector<SamplePair> gen_synthetic(const GenSpec& spec, std::uint64_t master_seed) {
  spec.validate();
  std::vector<SamplePair> out(spec.n);
  const long n = static_cast<long>(spec.n);
#pragma omp parallel for schedule(dynamic)
  for (long i = 0; i < n; ++i) out[static_cast<std::size_t>(i)] = gen_sample(spec, master_seed, static_cast<std::size_t>(i));
  return out;
}

double background_autocorrelation(const SamplePair& s) {
  std::vector<double> lum(s.mask.size());
  for (std::size_t i = 0; i < lum.size(); ++i)
    lum[i] = (s.image.v[3 * i] + s.image.v[3 * i + 1] + s.image.v[3 * i + 2]) / 3.0;
  double mean = 0, n = 0;
  for (std::size_t i = 0; i < lum.size(); ++i)
    if (s.mask.v[i] == 0.0) {
      mean += lum[i];
      n += 1;
    }
  mean /= n;
  double num = 0, den = 0;
  for (std::size_t y = 0; y < s.mask.h; ++y)
    for (std::size_t x = 0; x < s.mask.w; ++x) {
      const std::size_t i = y * s.mask.w + x;
      if (s.mask.v[i] != 0.0) continue;
      den += (lum[i] - mean) * (lum[i] - mean);
      if (x + 1 < s.mask.w && s.mask.v[i + 1] == 0.0) num += (lum[i] - mean) * (lum[i + 1] - mean);
    }
  return den > 0 ? num / den : 0.0;
}

// ---- PGM / PPM ----------------------------------------------------------

namespace {

std::string pnm_header(const char* magic, std::size_t w, std::size_t h) {
  return std::string(magic) + "\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
}

unsigned char to_byte(double v) {
  return static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

struct PnmHeader {
  std::size_t w = 0, h = 0, offset = 0;
};

PnmHeader parse_header(const std::string& bytes, const char* magic) {
  if (bytes.size() < 2) throw PnmError(PnmErrorCode::MalformedHeader, "pnm: file too short for a header");
  if (bytes[0] != 'P' || bytes[1] < '1' || bytes[1] > '7')
    throw PnmError(PnmErrorCode::MalformedHeader, "pnm: missing P<n> magic");
  if (bytes.compare(0, 2, magic) != 0)
    throw PnmError(PnmErrorCode::Unsupported,
                   std::string("pnm: unsupported format ") + bytes.substr(0, 2) + ", expected " + magic);
  std::size_t pos = 2;
  auto next_token = [&]() -> std::string {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
    const std::size_t start = pos;
    while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
    return bytes.substr(start, pos - start);
  };
  auto number = [&](const char* what) -> std::size_t {
    const std::string tok = next_token();
    if (tok.empty() || tok.find_first_not_of("0123456789") != std::string::npos)
      throw PnmError(PnmErrorCode::MalformedHeader, std::string("pnm: bad ") + what + " field");
    return std::stoul(tok);
  };
  PnmHeader hd;
  hd.w = number("width");
  hd.h = number("height");
  const std::size_t maxval = number("maxval");
  if (hd.w == 0 || hd.h == 0) throw PnmError(PnmErrorCode::MalformedHeader, "pnm: zero dimension");
  if (maxval != 255) throw PnmError(PnmErrorCode::BadMaxval, "pnm: maxval " + std::to_string(maxval) + " != 255");
  if (pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[pos])))
    throw PnmError(PnmErrorCode::Truncated, "pnm: missing payload");
  hd.offset = pos + 1;
  return hd;
}

}  // namespace

std::string encode_pgm(const Plane& p) {
  std::string out = pnm_header("P5", p.w, p.h);
  for (double v : p.v) out.push_back(static_cast<char>(to_byte(v)));
  return out;
}

std::string encode_ppm(const RgbImage& img) {
  std::string out = pnm_header("P6", img.w, img.h);
  for (double v : img.v) out.push_back(static_cast<char>(to_byte(v)));
  return out;
}

Plane decode_pgm(const std::string& bytes) {
  const PnmHeader hd = parse_header(bytes, "P5");
  if (bytes.size() - hd.offset < hd.w * hd.h) throw PnmError(PnmErrorCode::Truncated, "pgm: truncated payload");
  Plane p(hd.h, hd.w);
  for (std::size_t i = 0; i < p.size(); ++i)
    p.v[i] = static_cast<unsigned char>(bytes[hd.offset + i]) / 255.0;
  return p;
}

RgbImage decode_ppm(const std::string& bytes) {
  const PnmHeader hd = parse_header(bytes, "P6");
  if (bytes.size() - hd.offset < hd.w * hd.h * 3) throw PnmError(PnmErrorCode::Truncated, "ppm: truncated payload");
  RgbImage img(hd.h, hd.w);
  for (std::size_t i = 0; i < img.v.size(); ++i)
    img.v[i] = static_cast<unsigned char>(bytes[hd.offset + i]) / 255.0;
  return img;
}

std::string read_file(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw PnmError(PnmErrorCode::Io, "cannot read " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void write_file_atomic(const fs::path& path, const std::string& bytes) {
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw PnmError(PnmErrorCode::Io, "cannot write " + tmp.string());
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw PnmError(PnmErrorCode::Io, "write failed for " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw PnmError(PnmErrorCode::Io, "cannot rename into " + path.string() + ": " + ec.message());
}

void save_pgm(const fs::path& path, const Plane& p) { write_file_atomic(path, encode_pgm(p)); }
void save_ppm(const fs::path& path, const RgbImage& img) { write_file_atomic(path, encode_ppm(img)); }
Plane load_pgm(const fs::path& path) { return decode_pgm(read_file(path)); }
RgbImage load_ppm(const fs::path& path) { return decode_ppm(read_file(path)); }

// ---- resizing -----------------------------------------------------------

namespace {

struct Tap {
  std::size_t i0, i1;
  double f;
};

std::vector<Tap> taps(std::size_t in, std::size_t out) {
  std::vector<Tap> t(out);
  const double ratio = static_cast<double>(in) / static_cast<double>(out);
  for (std::size_t o = 0; o < out; ++o) {
    double s = (static_cast<double>(o) + 0.5) * ratio - 0.5;
    s = std::clamp(s, 0.0, static_cast<double>(in - 1));
    const auto i0 = static_cast<std::size_t>(std::floor(s));
    t[o] = {i0, std::min(i0 + 1, in - 1), s - static_cast<double>(i0)};
  }
  return t;
}

}  // namespace

Plane resize_plane(const Plane& p, std::size_t h, std::size_t w) {
  if (h == p.h && w == p.w) return p;
  const auto ty = taps(p.h, h), tx = taps(p.w, w);
  Plane out(h, w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const auto& a = ty[y];
      const auto& b = tx[x];
      out(y, x) = (p(a.i0, b.i0) * (1 - b.f) + p(a.i0, b.i1) * b.f) * (1 - a.f) +
                  (p(a.i1, b.i0) * (1 - b.f) + p(a.i1, b.i1) * b.f) * a.f;
    }
  return out;
}

RgbImage resize_image(const RgbImage& img, std::size_t h, std::size_t w) {
  if (h == img.h && w == img.w) return img;
  const auto ty = taps(img.h, h), tx = taps(img.w, w);
  RgbImage out(h, w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < 3; ++c) {
        const auto& a = ty[y];
        const auto& b = tx[x];
        out(y, x, c) = (img(a.i0, b.i0, c) * (1 - b.f) + img(a.i0, b.i1, c) * b.f) * (1 - a.f) +
                       (img(a.i1, b.i0, c) * (1 - b.f) + img(a.i1, b.i1, c) * b.f) * a.f;
      }
  return out;
}

Plane resize_mask(const Plane& m, std::size_t h, std::size_t w) {
  Plane out = resize_plane(m, h, w);
  for (double& v : out.v) v = v >= 0.5 ? 1.0 : 0.0;
  return out;
}

SamplePair resize_pair_to(const SamplePair& s, std::size_t h, std::size_t w) {
  if (h < kMinResizedSide || w < kMinResizedSide)
    throw std::invalid_argument("resize: result " + std::to_string(h) + "x" + std::to_string(w) +
                                " smaller than the largest decomposition kernel");
  SamplePair out = s;
  out.image = resize_image(s.image, h, w);
  out.mask = resize_mask(s.mask, h, w);
  return out;
}

SamplePair resize_pair(const SamplePair& s, double scale) {
  if (!(scale > 0)) throw std::invalid_argument("resize: scale must be > 0");
  if (scale == 1.0) return s;
  const auto h = static_cast<std::size_t>(std::lround(static_cast<double>(s.image.h) * scale));
  const auto w = static_cast<std::size_t>(std::lround(static_cast<double>(s.image.w) * scale));
  return resize_pair_to(s, h, w);
}

const std::vector<double>& training_scales() {
  static const std::vector<double> s{0.75, 1.0, 1.25};
  return s;
}

double draw_scale(CounterRng& rng, const std::vector<double>& scales) {
  if (scales.empty()) throw std::invalid_argument("augment: empty scale set");
  for (double s : scales)
    if (std::find(training_scales().begin(), training_scales().end(), s) == training_scales().end())
      throw std::invalid_argument("augment: scale " + std::to_string(s) + " not in {0.75, 1, 1.25}");
  return scales[rng.below(scales.size())];
}

SamplePair multiscale_augment(const SamplePair& s, CounterRng& rng, const std::vector<double>& scales) {
  return resize_pair(s, draw_scale(rng, scales));
}

// ---- directories --------------------------------------------------------

std::vector<SamplePair> load_dir(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw std::invalid_argument("load_dir: not a directory: " + dir.string());
  std::map<std::string, std::pair<bool, bool>> found;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    const auto ext = e.path().extension().string();
    if (ext == ".ppm") found[e.path().stem().string()].first = true;
    else if (ext == ".pgm") found[e.path().stem().string()].second = true;
  }
  if (found.empty()) throw std::invalid_argument("load_dir: empty dataset in " + dir.string());
  std::string missing;
  for (const auto& [id, have] : found)
    if (!have.first || !have.second) missing += (missing.empty() ? "" : ", ") + id;
  if (!missing.empty()) throw std::invalid_argument("load_dir: missing image/mask partner for: " + missing);

  std::vector<SamplePair> out;
  std::string mismatched;
  for (const auto& [id, have] : found) {
    SamplePair s;
    s.id = id;
    s.image = load_ppm(dir / (id + ".ppm"));
    s.mask = load_pgm(dir / (id + ".pgm"));
    for (double& v : s.mask.v) v = v >= 128.0 / 255.0 ? 1.0 : 0.0;
    if (s.mask.h != s.image.h || s.mask.w != s.image.w) {
      mismatched += (mismatched.empty() ? "" : ", ") + id;
      continue;
    }
    out.push_back(std::move(s));
  }
  if (!mismatched.empty()) throw std::invalid_argument("load_dir: image/mask size mismatch for: " + mismatched);
  return out;
}

void write_pairs(const fs::path& dir, const std::vector<SamplePair>& pairs) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw PnmError(PnmErrorCode::Io, "cannot create directory " + dir.string());
  for (const auto& s : pairs) {
    save_ppm(dir / (s.id + ".ppm"), s.image);
    save_pgm(dir / (s.id + ".pgm"), s.mask);
  }
}

std::string manifest_tsv(const std::vector<SamplePair>& pairs) {
  std::string out = "id\tsplit\tseed\n";
  for (const auto& s : pairs) out += s.id + "\t" + split_name(s.split) + "\t" + std::to_string(s.seed) + "\n";
  return out;
}

void generate_dataset(const DataConfig& cfg, std::uint64_t seed, const fs::path& out) {
  std::vector<SamplePair> all;
  for (Split sp : {Split::Train, Split::TestSeen, Split::TestUnseen}) {
    const GenSpec spec = GenSpec::from(cfg, sp);
    if (spec.n == 0) continue;
    auto pairs = gen_synthetic(spec, seed);
    write_pairs(out / split_name(sp), pairs);
    all.insert(all.end(), pairs.begin(), pairs.end());
  }
  write_file_atomic(out / "manifest.tsv", manifest_tsv(all));
}

}  // namespace smamba
