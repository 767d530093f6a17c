#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "smamba/tensor.hpp"

namespace smamba {

constexpr double kGradcheckFloor = 1e-6;

struct GradcheckResult {
  double max_rel_error = 0.0;
  std::size_t coordinates = 0;
  std::size_t worst_param = 0;  // index into the params list
  std::size_t worst_index = 0;  // flat coordinate within that param
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

// Compares reverse-mode gradients of a scalar `forward` against five-point
// central differences over every coordinate of every parameter. Three steps
// (100 eps, 10 eps, eps) are tried per coordinate and the estimate is taken
// from the most self-consistent neighbouring pair. Error per coordinate:
//   |analytic - numeric| / max(kGradcheckFloor, |analytic| + |numeric|).
// The floor keeps coordinates whose true gradient is zero (a key bias under
// softmax, say) from reporting pure rounding noise as relative error.
// `forward` must be deterministic; parameters are perturbed in place and
// restored bit-exactly.
GradcheckResult gradcheck(const std::function<Tensor()>& forward, const std::vector<Tensor>& params,
                          double eps = 1e-4);

}  // namespace smamba
