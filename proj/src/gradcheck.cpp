#include "smamba/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace smamba {

GradcheckResult gradcheck(const std::function<Tensor()>& forward, const std::vector<Tensor>& params,
                          double eps) {
  if (eps <= 0) throw std::invalid_argument("gradcheck: eps must be positive");
  const DiffContext ctx(params);
  const auto analytic = backward(forward(), ctx);

  GradcheckResult res;
  NoGradGuard no_grad;
  for (std::size_t p = 0; p < params.size(); ++p) {
    Tensor param = params[p];
    auto values = param.mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      auto at = [&](double offset) {
        values[i] = saved + offset;
        return forward().item();
      };
      auto five_point = [&](double h) {
        return (8.0 * (at(h) - at(-h)) - (at(2.0 * h) - at(-2.0 * h))) / (12.0 * h);
      };
      // Steps eps*100, eps*10, eps: keep the finer estimate of whichever
      // neighbouring pair agrees best, so neither curvature nor rounding
      // dominates.
      const double e0 = five_point(eps * 100.0), e1 = five_point(eps * 10.0), e2 = five_point(eps);
      values[i] = saved;
      const double numeric = std::abs(e0 - e1) < std::abs(e1 - e2) ? e1 : e2;
      const double a = analytic[p][i];
      const double rel = std::abs(a - numeric) / std::max(kGradcheckFloor, std::abs(a) + std::abs(numeric));
      ++res.coordinates;
      if (rel > res.max_rel_error) {
        res.max_rel_error = rel;
        res.worst_param = p;
        res.worst_index = i;
        res.worst_analytic = a;
        res.worst_numeric = numeric;
      }
    }
  }
  return res;
}

}  // namespace smamba
