#pragma once

// Boundary-weighted Dice + BCE segmentation loss and the two stage losses.

#include <cstddef>

#include "smamba/config.hpp"
#include "smamba/image.hpp"
#include "smamba/tensor.hpp"

namespace smamba {

struct LossConfig {
  std::size_t weight_kernel = 31;  // nominal window at >= 96 px
  double weight_gain = 5.0;
  double smooth = 1.0;

  static LossConfig from(const TrainConfig& t) { return {t.weight_kernel, t.weight_gain, t.smooth}; }
};

// Window actually used for an h x w mask: the nominal window scaled by
// min(h, w) / 96 when the mask is smaller than 96 px, rounded to the nearest
// odd integer and never below 3.
std::size_t effective_weight_window(std::size_t nominal, std::size_t h, std::size_t w);

// omega = 1 + gain * |boxmean(G) - G|, zero padding counted in the mean.
// Throws ShapeError if G holds anything but 0 and 1.
Plane boundary_weight(const Plane& g, std::size_t window, double gain);
Plane boundary_weight(const Plane& g, const LossConfig& cfg);

// sum(omega * bce) / sum(omega)
Tensor weighted_bce(const Tensor& logits, const Plane& g, const Plane& omega);
// 1 - (2 sum(omega p g) + eps) / (sum(omega (p + g)) + eps), p = sigmoid(logits)
Tensor weighted_dice(const Tensor& logits, const Plane& g, const Plane& omega, double eps);
Tensor combined_loss(const Tensor& logits, const Plane& g, const LossConfig& cfg);

Tensor stage1_loss(const Plane& g, const Tensor& pseudo_logits, const LossConfig& cfg);
// aux_pseudo_logits undefined -> decoder term only.
Tensor stage2_loss(const Plane& g, const Tensor& decoder_logits, const Tensor& aux_pseudo_logits,
                   const LossConfig& cfg);

}  // namespace smamba
