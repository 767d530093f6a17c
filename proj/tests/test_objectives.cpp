#include <cmath>

#include "doctest.h"
#include "smamba/gradcheck.hpp"
#include "smamba/objectives.hpp"
#include "smamba/ops.hpp"
#include "support.hpp"

using namespace smamba;
using testing::rand_tensor;

namespace {

// Mean filter with zero padding by direct window sum.
Plane weight_oracle(const Plane& g, std::size_t window, double gain) {
  Plane out(g.h, g.w);
  const long r = static_cast<long>(window / 2);
  for (long y = 0; y < static_cast<long>(g.h); ++y)
    for (long x = 0; x < static_cast<long>(g.w); ++x) {
      double s = 0;
      for (long dy = -r; dy <= r; ++dy)
        for (long dx = -r; dx <= r; ++dx) {
          const long yy = y + dy, xx = x + dx;
          if (yy >= 0 && xx >= 0 && yy < static_cast<long>(g.h) && xx < static_cast<long>(g.w)) s += g(yy, xx);
        }
      out(y, x) = 1.0 + gain * std::abs(s / static_cast<double>(window * window) - g(y, x));
    }
  return out;
}

struct LossParts {
  double bce, dice;
};

LossParts loss_oracle(const Tensor& logits, const Plane& g, const Plane& w, double eps) {
  double wsum = 0, bce = 0, inter = 0, denom = 0;
  for (std::size_t i = 0; i < g.size(); ++i) {
    const double x = logits.at(i), p = 1.0 / (1.0 + std::exp(-x));
    bce += w.v[i] * (-(g.v[i] * std::log(p) + (1 - g.v[i]) * std::log(1 - p)));
    wsum += w.v[i];
    inter += w.v[i] * p * g.v[i];
    denom += w.v[i] * (p + g.v[i]);
  }
  return {bce / wsum, 1.0 - (2 * inter + eps) / (denom + eps)};
}

Plane half_plane(std::size_t n) {
  Plane g(n, n);
  for (std::size_t y = 0; y < n; ++y)
    for (std::size_t x = n / 2; x < n; ++x) g(y, x) = 1.0;
  return g;
}

}  // namespace

TEST_SUITE("boundary weight") {
  TEST_CASE("all-zero mask has unit weight everywhere") {
    const Plane w = boundary_weight(Plane(20, 20), 7, 5.0);
    for (double v : w.v) CHECK(v == 1.0);
  }

  TEST_CASE("matches the direct window oracle and peaks at the edge") {
    const Plane g = half_plane(12);
    const Plane w = boundary_weight(g, 5, 5.0);
    const Plane want = weight_oracle(g, 5, 5.0);
    CHECK(testing::max_abs_diff(w.v, want.v) < 1e-12);
    // Along an interior row the maximum sits on the two edge columns.
    const std::size_t row = 6;
    double best = 0;
    std::size_t arg = 0;
    for (std::size_t x = 0; x < 12; ++x)
      if (w(row, x) > best) best = w(row, x), arg = x;
    CHECK((arg == 5 || arg == 6));
    CHECK(w(row, 0) == 1.0);
  }

  TEST_CASE("flipping one pixel raises the weight around it") {
    Plane g = half_plane(12);
    const Plane before = boundary_weight(g, 3, 5.0);
    g(6, 8) = 0.0;
    const Plane after = boundary_weight(g, 3, 5.0);
    CHECK(after(6, 8) > before(6, 8));
    CHECK(after(6, 9) > before(6, 9));
    CHECK(after(0, 0) == before(0, 0));
  }

  TEST_CASE("stays in [1, 1 + gain] (100 random masks)") {
    CounterRng rng(601);
    for (int trial = 0; trial < 100; ++trial) {
      const Plane g = testing::rand_mask(3 + rng.below(20), 3 + rng.below(20), rng, rng.uniform());
      const std::size_t k = 1 + 2 * rng.below(6);
      const double gain = rng.uniform(0, 8);
      const Plane w = boundary_weight(g, k, gain);
      CHECK(testing::max_abs_diff(w.v, weight_oracle(g, k, gain).v) < 1e-12);
      for (double v : w.v) {
        CHECK(v >= 1.0);
        CHECK(v <= 1.0 + gain);
      }
    }
  }

  TEST_CASE("window shrinks with the input below 96 px") {
    CHECK(effective_weight_window(31, 352, 352) == 31);
    CHECK(effective_weight_window(31, 96, 128) == 31);
    CHECK(effective_weight_window(31, 64, 64) == 21);
    CHECK(effective_weight_window(31, 16, 16) == 5);
    CHECK(effective_weight_window(31, 4, 4) == 3);
    CHECK(effective_weight_window(31, 64, 64) % 2 == 1);
  }

  TEST_CASE("rejects non-binary masks and even windows") {
    Plane g(4, 4);
    g(1, 1) = 0.5;
    CHECK_THROWS_AS(boundary_weight(g, 3, 5.0), ShapeError);
    CHECK_THROWS_AS(boundary_weight(Plane(4, 4), 4, 5.0), ShapeError);
  }
}

TEST_SUITE("segmentation loss") {
  TEST_CASE("perfect prediction") {
    const Plane g = half_plane(16);
    Tensor logits({16, 16});
    for (std::size_t i = 0; i < g.size(); ++i) logits.mutable_data()[i] = g.v[i] > 0 ? 20.0 : -20.0;
    const LossConfig cfg;
    const double total = combined_loss(logits, g, cfg).item();
    CHECK(total >= 0.0);
    CHECK(total < 1e-4 + 1e-6);
  }

  TEST_CASE("probability one half on a half mask gives ln 2") {
    const Plane g = half_plane(8);
    const Plane ones(8, 8, 1.0);
    CHECK(weighted_bce(Tensor({8, 8}, 0.0), g, ones).item() == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  }

  TEST_CASE("random 8x8 instances match the summation oracle") {
    CounterRng rng(602);
    for (int trial = 0; trial < 100; ++trial) {
      const Plane g = testing::rand_mask(8, 8, rng);
      const Tensor logits = rand_tensor({8, 8}, rng, -6, 6);
      const std::size_t k = 1 + 2 * rng.below(3);
      const Plane w = boundary_weight(g, k, 5.0);
      const double eps = rng.uniform(0.1, 2.0);
      const auto want = loss_oracle(logits, g, w, eps);
      CHECK(weighted_bce(logits, g, w).item() == doctest::Approx(want.bce).epsilon(1e-10));
      CHECK(std::abs(weighted_dice(logits, g, w, eps).item() - want.dice) < 1e-8);
    }
  }

  TEST_CASE("unit weights reduce to the unweighted forms") {
    CounterRng rng(603);
    const Plane g = testing::rand_mask(10, 10, rng);
    const Tensor logits = rand_tensor({10, 10}, rng, -4, 4);
    const Plane ones(10, 10, 1.0);
    double bce = 0, inter = 0, sp = 0, sg = 0;
    for (std::size_t i = 0; i < 100; ++i) {
      const double x = logits.at(i), p = 1 / (1 + std::exp(-x));
      bce += std::max(x, 0.0) - x * g.v[i] + std::log1p(std::exp(-std::abs(x)));
      inter += p * g.v[i];
      sp += p;
      sg += g.v[i];
    }
    CHECK(std::abs(weighted_bce(logits, g, ones).item() - bce / 100) < 1e-8);
    CHECK(std::abs(weighted_dice(logits, g, ones, 1.0).item() - (1 - (2 * inter + 1) / (sp + sg + 1))) < 1e-8);
    LossConfig zero_gain;
    zero_gain.weight_gain = 0.0;
    CHECK(std::abs(combined_loss(logits, g, zero_gain).item() -
                   (bce / 100 + 1 - (2 * inter + 1) / (sp + sg + 1))) < 1e-8);
  }

  TEST_CASE("per-pixel BCE falls as the logit approaches the target") {
    const Plane g1(1, 1, 1.0), g0(1, 1, 0.0), w(1, 1, 1.0);
    double prev1 = 1e9, prev0 = 1e9;
    for (double x = -10; x <= 10; x += 0.5) {
      const double l1 = weighted_bce(Tensor({1, 1}, x), g1, w).item();
      const double l0 = weighted_bce(Tensor({1, 1}, -x), g0, w).item();
      CHECK(l1 < prev1);
      CHECK(l0 < prev0);
      prev1 = l1;
      prev0 = l0;
    }
  }

  TEST_CASE("shape mismatch is an error") {
    CHECK_THROWS_AS(combined_loss(Tensor({8, 8}), Plane(8, 7), LossConfig{}), ShapeError);
  }
}

TEST_SUITE("stage losses") {
  TEST_CASE("each stage equals the combined loss on its output") {
    CounterRng rng(604);
    const Plane g = testing::rand_mask(16, 16, rng);
    const Tensor s_up = rand_tensor({16, 16}, rng, -3, 3), s_dec = rand_tensor({16, 16}, rng, -3, 3);
    const LossConfig cfg;
    CHECK(stage1_loss(g, s_up, cfg).item() == combined_loss(s_up, g, cfg).item());
    CHECK(stage2_loss(g, s_dec, Tensor(), cfg).item() == combined_loss(s_dec, g, cfg).item());
    CHECK(stage2_loss(g, s_dec, s_up, cfg).item() ==
          doctest::Approx(combined_loss(s_dec, g, cfg).item() + combined_loss(s_up, g, cfg).item()).epsilon(1e-14));
  }

  TEST_CASE("stage 2 without the auxiliary term ignores the side output") {
    CounterRng rng(605);
    const Plane g = testing::rand_mask(16, 16, rng);
    Tensor s_up = rand_tensor({16, 16}, rng, -3, 3, true);
    Tensor s_dec = rand_tensor({16, 16}, rng, -3, 3, true);
    const auto grads = backward(stage2_loss(g, s_dec, Tensor(), LossConfig{}), DiffContext({s_up}));
    for (double v : grads[0]) CHECK(v == 0.0);
  }

  TEST_CASE("gradcheck through both stage losses") {
    CounterRng rng(606);
    const Plane g = testing::rand_mask(12, 12, rng);
    Tensor a = rand_tensor({12, 12}, rng, -3, 3, true), b = rand_tensor({12, 12}, rng, -3, 3, true);
    LossConfig cfg;
    cfg.weight_kernel = 31;
    CHECK(gradcheck([&] { return stage1_loss(g, a, cfg); }, {a}).max_rel_error < 1e-6);
    CHECK(gradcheck([&] { return stage2_loss(g, b, a, cfg); }, {a, b}).max_rel_error < 1e-6);
  }
}
