#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "smamba/rng.hpp"
#include "smamba/tensor.hpp"

namespace smamba {

// Which part of the model a parameter belongs to; drives stage-wise
// trainability.
enum class ParamGroup { Backbone, Prior, Adapter, Head, Decoder };

std::string_view group_name(ParamGroup g);

struct NamedParam {
  std::string name;
  Tensor value;
  ParamGroup group;
};

// Ordered registry of every parameter in a model. Registration order is the
// serialization order.
class ParamSet {
 public:
  Tensor add(std::string name, Tensor value, ParamGroup group);
  const std::vector<NamedParam>& all() const { return params_; }
  const NamedParam* find(std::string_view name) const;
  std::size_t count_values(ParamGroup g) const;

 private:
  std::vector<NamedParam> params_;
};

// Initializers. Weights are Din x Dout (or k x k x Cin x Cout); fan_in is the
// product of all but the last dim.
Tensor uniform_init(Shape shape, double bound, CounterRng& rng);
Tensor fan_in_init(Shape shape, CounterRng& rng);
inline Tensor zeros_init(Shape shape) { return Tensor(std::move(shape), 0.0); }

}  // namespace smamba
