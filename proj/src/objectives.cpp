#include "smamba/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "smamba/ops.hpp"

namespace smamba {

std::size_t effective_weight_window(std::size_t nominal, std::size_t h, std::size_t w) {
  const std::size_t side = std::min(h, w);
  if (side >= 96) return nominal;
  const double scaled = static_cast<double>(nominal) * static_cast<double>(side) / 96.0;
  const auto odd = static_cast<std::size_t>(2.0 * std::round((scaled - 1.0) / 2.0) + 1.0);
  return std::max<std::size_t>(3, odd);
}

Plane boundary_weight(const Plane& g, std::size_t window, double gain) {
  if (window % 2 == 0) throw ShapeError("boundary_weight: window must be odd");
  for (double v : g.v)
    if (v != 0.0 && v != 1.0) throw ShapeError("boundary_weight: mask must be binary");
  // Summed-area table with a zero row/column in front.
  const std::size_t h = g.h, w = g.w;
  std::vector<double> sat((h + 1) * (w + 1), 0.0);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      sat[(y + 1) * (w + 1) + x + 1] =
          g(y, x) + sat[y * (w + 1) + x + 1] + sat[(y + 1) * (w + 1) + x] - sat[y * (w + 1) + x];
  const long r = static_cast<long>(window / 2);
  const double area = static_cast<double>(window * window);
  Plane out(h, w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const long y0 = std::max(0L, static_cast<long>(y) - r);
      const long x0 = std::max(0L, static_cast<long>(x) - r);
      const long y1 = std::min(static_cast<long>(h), static_cast<long>(y) + r + 1);
      const long x1 = std::min(static_cast<long>(w), static_cast<long>(x) + r + 1);
      const auto at = [&](long yy, long xx) { return sat[yy * static_cast<long>(w + 1) + xx]; };
      const double box = at(y1, x1) - at(y0, x1) - at(y1, x0) + at(y0, x0);
      out(y, x) = 1.0 + gain * std::abs(box / area - g(y, x));
    }
  return out;
}

Plane boundary_weight(const Plane& g, const LossConfig& cfg) {
  return boundary_weight(g, effective_weight_window(cfg.weight_kernel, g.h, g.w), cfg.weight_gain);
}

namespace {

void check_target(const Tensor& logits, const Plane& g, const Plane& omega) {
  if (logits.rank() != 2 || logits.dim(0) != g.h || logits.dim(1) != g.w)
    throw ShapeError("loss: logits " + shape_str(logits.shape()) + " do not match mask " +
                     std::to_string(g.h) + "x" + std::to_string(g.w));
  if (omega.h != g.h || omega.w != g.w) throw ShapeError("loss: weight map does not match mask");
}

}  // namespace

Tensor weighted_bce(const Tensor& logits, const Plane& g, const Plane& omega) {
  check_target(logits, g, omega);
  const Tensor target({g.h, g.w}, g.v);
  const Tensor weights({g.h, g.w}, omega.v);
  double total = 0.0;
  for (double v : omega.v) total += v;
  return ops::scale(ops::sum(ops::mul(ops::bce_with_logits(logits, target), weights)), 1.0 / total);
}

Tensor weighted_dice(const Tensor& logits, const Plane& g, const Plane& omega, double eps) {
  check_target(logits, g, omega);
  std::vector<double> wg(g.size());
  double sum_wg = 0.0;
  for (std::size_t i = 0; i < g.size(); ++i) {
    wg[i] = omega.v[i] * g.v[i];
    sum_wg += wg[i];
  }
  const Tensor p = ops::sigmoid(logits);
  const Tensor inter = ops::sum(ops::mul(p, Tensor({g.h, g.w}, std::move(wg))));
  const Tensor wp = ops::sum(ops::mul(p, Tensor({g.h, g.w}, omega.v)));
  const Tensor ratio = ops::div(ops::add_scalar(ops::scale(inter, 2.0), eps), ops::add_scalar(wp, sum_wg + eps));
  return ops::add_scalar(ops::scale(ratio, -1.0), 1.0);
}

Tensor combined_loss(const Tensor& logits, const Plane& g, const LossConfig& cfg) {
  const Plane omega = boundary_weight(g, cfg);
  return ops::add(weighted_dice(logits, g, omega, cfg.smooth), weighted_bce(logits, g, omega));
}

Tensor stage1_loss(const Plane& g, const Tensor& pseudo_logits, const LossConfig& cfg) {
  return combined_loss(pseudo_logits, g, cfg);
}

Tensor stage2_loss(const Plane& g, const Tensor& decoder_logits, const Tensor& aux_pseudo_logits,
                   const LossConfig& cfg) {
  Tensor loss = combined_loss(decoder_logits, g, cfg);
  if (aux_pseudo_logits.defined()) loss = ops::add(loss, combined_loss(aux_pseudo_logits, g, cfg));
  return loss;
}

}  // namespace smamba
