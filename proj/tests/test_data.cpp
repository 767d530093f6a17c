#include <algorithm>
#include <filesystem>
#include <fstream>
#include <string>

#include "doctest.h"
#include "smamba/data.hpp"
#include "support.hpp"

using namespace smamba;
namespace fs = std::filesystem;

namespace {

double fg_fraction(const Plane& m) {
  double s = 0;
  for (double v : m.v) s += v;
  return s / static_cast<double>(m.size());
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / ("smamba_test_" + name)) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

PnmErrorCode pnm_code(const std::string& bytes) {
  try {
    decode_pgm(bytes);
  } catch (const PnmError& e) {
    return e.code();
  }
  FAIL("decode accepted bad bytes");
  return PnmErrorCode::Io;
}

}  // namespace

TEST_SUITE("synthetic generator") {
  TEST_CASE("same spec and seed give identical pairs") {
    GenSpec spec;
    spec.n = 6;
    const auto a = gen_synthetic(spec, 42), b = gen_synthetic(spec, 42);
    REQUIRE(a.size() == 6);
    for (std::size_t i = 0; i < a.size(); ++i) {
      CHECK(a[i].image == b[i].image);
      CHECK(a[i].mask == b[i].mask);
      CHECK(a[i].id == b[i].id);
    }
    CHECK_FALSE(gen_synthetic(spec, 43)[0].mask == a[0].mask);
    // A sample does not depend on how many others were generated with it.
    CHECK(gen_sample(spec, 42, 3).image == a[3].image);
  }

  TEST_CASE("masks are binary, sized like the image, and cover 2 to 50 percent (1000 seeds)") {
    for (Split split : {Split::Train, Split::TestUnseen}) {
      GenSpec spec;
      spec.split = split;
      for (std::uint64_t seed = 0; seed < 500; ++seed) {
        const SamplePair s = gen_sample(spec, seed, 0);
        REQUIRE(s.mask.h == s.image.h);
        REQUIRE(s.mask.w == s.image.w);
        CHECK(std::all_of(s.mask.v.begin(), s.mask.v.end(), [](double v) { return v == 0.0 || v == 1.0; }));
        const double f = fg_fraction(s.mask);
        CHECK(f >= 0.02);
        CHECK(f <= 0.5);
        CHECK(std::all_of(s.image.v.begin(), s.image.v.end(), [](double v) { return v >= 0.0 && v <= 1.0; }));
      }
    }
  }

  TEST_CASE("invalid specs are rejected") {
    GenSpec spec;
    spec.contrast = 0.0;
    CHECK_THROWS_AS(gen_synthetic(spec, 1), std::invalid_argument);
    spec = GenSpec{};
    spec.size = 16;
    CHECK_THROWS_AS(gen_synthetic(spec, 1), std::invalid_argument);
  }

  TEST_CASE("blob boundary follows the harmonic radius") {
    BlobShape b;
    b.r0 = 10;
    b.a[1] = 0.1;
    b.phi[1] = 0.3;
    CHECK(b.radius(0.7) == doctest::Approx(10 * (1 + 0.1 * std::cos(2 * 0.7 + 0.3))).epsilon(1e-15));
    CHECK(b.min_radius() == doctest::Approx(9.0).epsilon(1e-4));
  }

  TEST_CASE("unseen texture differs from the seen texture") {
    GenSpec seen, unseen;
    seen.n = unseen.n = 40;
    unseen.split = Split::TestUnseen;
    double a = 0, b = 0;
    for (const auto& s : gen_synthetic(seen, 5)) a += background_autocorrelation(s) / 40;
    for (const auto& s : gen_synthetic(unseen, 5)) b += background_autocorrelation(s) / 40;
    MESSAGE("seen " << a << " unseen " << b);
    CHECK(std::abs(a - b) > 0.05);
  }

  TEST_CASE("split names round trip") {
    for (Split s : {Split::Train, Split::TestSeen, Split::TestUnseen}) CHECK(parse_split(split_name(s)) == s);
    CHECK_THROWS(parse_split("validation"));
  }
}

TEST_SUITE("pnm io") {
  TEST_CASE("2x2 checker mask encodes to the expected bytes") {
    const Plane m(2, 2, std::vector<double>{0, 1, 1, 0});
    const std::string bytes = encode_pgm(m);
    const std::string header = "P5\n2 2\n255\n";
    REQUIRE(bytes.size() == header.size() + 4);
    CHECK(bytes.substr(0, header.size()) == header);
    CHECK(bytes.substr(header.size()) == std::string("\x00\xFF\xFF\x00", 4));
  }

  TEST_CASE("random masks and quantized images round trip exactly") {
    CounterRng rng(801);
    for (int trial = 0; trial < 20; ++trial) {
      const Plane m = testing::rand_mask(1 + rng.below(20), 1 + rng.below(20), rng);
      CHECK(decode_pgm(encode_pgm(m)) == m);
      RgbImage img(1 + rng.below(9), 1 + rng.below(9));
      for (auto& v : img.v) v = static_cast<double>(rng.below(256)) / 255.0;
      CHECK(decode_ppm(encode_ppm(img)) == img);
    }
  }

  TEST_CASE("header comments and whitespace are tolerated") {
    const Plane m = decode_pgm(std::string("P5\n# made by hand\n2  1\n255\n") + std::string("\x00\xFF", 2));
    CHECK(m.h == 1);
    CHECK(m.v == std::vector<double>{0.0, 1.0});
  }

  TEST_CASE("each failure mode has its own code") {
    CHECK(pnm_code("P4\n2 2\n\x00\x00") == PnmErrorCode::Unsupported);
    CHECK(pnm_code("XX") == PnmErrorCode::MalformedHeader);
    CHECK(pnm_code("P5\nfoo 2\n255\n") == PnmErrorCode::MalformedHeader);
    CHECK(pnm_code("P5\n2 2\n65535\n\x00\x00\x00\x00") == PnmErrorCode::BadMaxval);
    CHECK(pnm_code(std::string("P5\n2 2\n255\n\x00\x00\x00", 14)) == PnmErrorCode::Truncated);
    CHECK_THROWS_AS(decode_ppm(std::string("P6\n1 1\n255\n\x00\x00", 13)), PnmError);
  }

  TEST_CASE("missing file is an io error") {
    try {
      load_pgm("/nonexistent/smamba/x.pgm");
      FAIL("no throw");
    } catch (const PnmError& e) {
      CHECK(e.code() == PnmErrorCode::Io);
    }
  }
}

TEST_SUITE("resize") {
  TEST_CASE("scale one is the identity") {
    const SamplePair s = gen_sample(GenSpec{}, 3, 0);
    const SamplePair r = resize_pair(s, 1.0);
    CHECK(r.image == s.image);
    CHECK(r.mask == s.mask);
  }

  TEST_CASE("down to 48 and back keeps the foreground fraction within 10 percent (100 samples)") {
    GenSpec spec;
    spec.n = 100;
    for (const auto& s : gen_synthetic(spec, 11)) {
      const SamplePair small = resize_pair(s, 0.75);
      REQUIRE(small.mask.h == 48);
      const SamplePair back = resize_pair_to(small, 64, 64);
      const double f0 = fg_fraction(s.mask), f1 = fg_fraction(back.mask);
      CHECK(std::abs(f1 - f0) <= 0.1 * f0);
      CHECK(std::all_of(back.mask.v.begin(), back.mask.v.end(), [](double v) { return v == 0.0 || v == 1.0; }));
    }
  }

  TEST_CASE("too small a result and foreign scales are rejected") {
    const SamplePair s = gen_sample(GenSpec{}, 3, 0);
    CHECK_THROWS_AS(resize_pair(s, 0.1), std::invalid_argument);
    CHECK_THROWS_AS(resize_pair(s, 0.0), std::invalid_argument);
    CounterRng rng(802);
    CHECK_THROWS_AS(multiscale_augment(s, rng, {0.5}), std::invalid_argument);
    CHECK_THROWS_AS(draw_scale(rng, {}), std::invalid_argument);
  }

  TEST_CASE("augmentation draws every training scale") {
    CounterRng rng(803);
    int seen[3] = {0, 0, 0};
    for (int i = 0; i < 300; ++i) {
      const double s = draw_scale(rng);
      const auto it = std::find(training_scales().begin(), training_scales().end(), s);
      REQUIRE(it != training_scales().end());
      ++seen[it - training_scales().begin()];
    }
    for (int c : seen) CHECK(c > 60);
  }

  TEST_CASE("constant planes stay constant") {
    const Plane p(10, 10, 0.3);
    const Plane r = resize_plane(p, 13, 7);
    for (double v : r.v) CHECK(v == doctest::Approx(0.3).epsilon(1e-15));
  }
}

TEST_SUITE("dataset directories") {
  TEST_CASE("empty directory is an error") {
    TempDir d("empty");
    CHECK_THROWS_AS(load_dir(d.path), std::invalid_argument);
  }

  TEST_CASE("pairs load back ordered by id") {
    TempDir d("three");
    GenSpec spec;
    spec.n = 3;
    auto pairs = gen_synthetic(spec, 9);
    std::reverse(pairs.begin(), pairs.end());
    write_pairs(d.path, pairs);
    const auto loaded = load_dir(d.path);
    REQUIRE(loaded.size() == 3);
    CHECK(std::is_sorted(loaded.begin(), loaded.end(), [](const auto& a, const auto& b) { return a.id < b.id; }));
    const auto orig = gen_synthetic(spec, 9);
    for (std::size_t i = 0; i < 3; ++i) {
      CHECK(loaded[i].id == orig[i].id);
      CHECK(loaded[i].mask == orig[i].mask);
      CHECK(testing::max_abs_diff(loaded[i].image.v, orig[i].image.v) <= 0.5 / 255 + 1e-12);
    }
  }

  TEST_CASE("size mismatch and missing partner name the id") {
    TempDir d("mismatch");
    save_ppm(d.path / "case7.ppm", RgbImage(64, 64));
    save_pgm(d.path / "case7.pgm", Plane(32, 32));
    try {
      load_dir(d.path);
      FAIL("no throw");
    } catch (const std::invalid_argument& e) {
      CHECK(std::string(e.what()).find("case7") != std::string::npos);
    }
    fs::remove(d.path / "case7.pgm");
    try {
      load_dir(d.path);
      FAIL("no throw");
    } catch (const std::invalid_argument& e) {
      CHECK(std::string(e.what()).find("case7") != std::string::npos);
    }
  }

  TEST_CASE("generated dataset lays out three splits and a manifest") {
    TempDir d("gen");
    DataConfig cfg;
    cfg.train_count = 4;
    cfg.test_seen_count = 2;
    cfg.test_unseen_count = 3;
    generate_dataset(cfg, 17, d.path);
    CHECK(load_dir(d.path / "train").size() == 4);
    CHECK(load_dir(d.path / "test-seen").size() == 2);
    CHECK(load_dir(d.path / "test-unseen").size() == 3);
    const std::string manifest = read_file(d.path / "manifest.tsv");
    CHECK(std::count(manifest.begin(), manifest.end(), '\n') == 10);
  }
}
