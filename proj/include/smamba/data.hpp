#pragma once

// Synthetic camouflaged-blob dataset, PGM/PPM I/O and resizing.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "smamba/config.hpp"
#include "smamba/image.hpp"
#include "smamba/rng.hpp"

namespace smamba {

enum class Split { Train, TestSeen, TestUnseen };
std::string split_name(Split s);
Split parse_split(const std::string& s);

struct SamplePair {
  RgbImage image;
  Plane mask;  // exactly 0/1
  std::string id;
  std::uint64_t seed = 0;
  Split split = Split::Train;
};

struct GenSpec {
  std::size_t n = 200;
  std::size_t size = 64;
  double contrast = 0.08;
  double boundary_blur = 1.5;
  double texture_amplitude = 0.06;
  double secondary_prob = 0.3;
  Split split = Split::Train;

  void validate() const;
  static GenSpec from(const DataConfig& d, Split split);
};

class GenerationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

constexpr int kMaxShapeRetries = 10;

// Blob boundary r(theta) = r0 (1 + sum_m a_m cos(m theta + phi_m)), m = 1..5.
struct BlobShape {
  double cx = 0, cy = 0, r0 = 1;
  double a[5]{}, phi[5]{};
  double radius(double theta) const;
  double min_radius() const;  // sampled at 720 angles
};

SamplePair gen_sample(const GenSpec& spec, std::uint64_t master_seed, std::size_t index);
std::vector<SamplePair> gen_synthetic(const GenSpec& spec, std::uint64_t master_seed);

// Lag-1 horizontal autocorrelation of the image luminance outside the mask.
double background_autocorrelation(const SamplePair& s);

// ---- PGM / PPM ----------------------------------------------------------

enum class PnmErrorCode { Io = 1, Unsupported = 2, MalformedHeader = 3, BadMaxval = 4, Truncated = 5 };

class PnmError : public std::runtime_error {
 public:
  PnmError(PnmErrorCode code, const std::string& msg) : std::runtime_error(msg), code_(code) {}
  PnmErrorCode code() const { return code_; }

 private:
  PnmErrorCode code_;
};

// Values are scaled by 255 and rounded; header is exactly "P5\n<w> <h>\n255\n".
std::string encode_pgm(const Plane& p);
std::string encode_ppm(const RgbImage& img);
Plane decode_pgm(const std::string& bytes);
RgbImage decode_ppm(const std::string& bytes);

void save_pgm(const std::filesystem::path& path, const Plane& p);
void save_ppm(const std::filesystem::path& path, const RgbImage& img);
Plane load_pgm(const std::filesystem::path& path);
RgbImage load_ppm(const std::filesystem::path& path);

// Write through a temporary sibling and rename into place.
void write_file_atomic(const std::filesystem::path& path, const std::string& bytes);
std::string read_file(const std::filesystem::path& path);

// ---- resizing / augmentation --------------------------------------------

// Bilinear, half-pixel centres, edge clamp.
Plane resize_plane(const Plane& p, std::size_t h, std::size_t w);
RgbImage resize_image(const RgbImage& img, std::size_t h, std::size_t w);
// Masks are re-binarized at 0.5 after interpolation.
Plane resize_mask(const Plane& m, std::size_t h, std::size_t w);

constexpr std::size_t kMinResizedSide = 7;  // largest decomposition kernel

// Output side = round(side * scale).
SamplePair resize_pair(const SamplePair& s, double scale);
SamplePair resize_pair_to(const SamplePair& s, std::size_t h, std::size_t w);

const std::vector<double>& training_scales();  // {0.75, 1, 1.25}
// Draws one scale uniformly from `scales`; every entry must be a training scale.
double draw_scale(CounterRng& rng, const std::vector<double>& scales = training_scales());
SamplePair multiscale_augment(const SamplePair& s, CounterRng& rng,
                              const std::vector<double>& scales = training_scales());

// ---- directories --------------------------------------------------------

// Paired <id>.ppm / <id>.pgm files sorted by id; masks binarized at 128.
std::vector<SamplePair> load_dir(const std::filesystem::path& dir);

// Writes <dir>/<id>.ppm and <id>.pgm for every pair.
void write_pairs(const std::filesystem::path& dir, const std::vector<SamplePair>& pairs);
// id, split, seed per line, tab separated, with a header row.
std::string manifest_tsv(const std::vector<SamplePair>& pairs);

// Generates the train / test-seen / test-unseen splits under <out>/<split>/
// and a combined <out>/manifest.tsv.
void generate_dataset(const DataConfig& cfg, std::uint64_t seed, const std::filesystem::path& out);

}  // namespace smamba
