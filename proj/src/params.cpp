#include "smamba/params.hpp"

#include <cmath>
#include <stdexcept>

namespace smamba {

std::string_view group_name(ParamGroup g) {
  switch (g) {
    case ParamGroup::Backbone: return "backbone";
    case ParamGroup::Prior: return "prior";
    case ParamGroup::Adapter: return "adapter";
    case ParamGroup::Head: return "head";
    case ParamGroup::Decoder: return "decoder";
  }
  return "?";
}

Tensor ParamSet::add(std::string name, Tensor value, ParamGroup group) {
  if (find(name)) throw std::invalid_argument("duplicate parameter name: " + name);
  params_.push_back({std::move(name), value, group});
  return value;
}

const NamedParam* ParamSet::find(std::string_view name) const {
  for (const auto& p : params_)
    if (p.name == name) return &p;
  return nullptr;
}

std::size_t ParamSet::count_values(ParamGroup g) const {
  std::size_t n = 0;
  for (const auto& p : params_)
    if (p.group == g) n += p.value.numel();
  return n;
}

Tensor uniform_init(Shape shape, double bound, CounterRng& rng) {
  Tensor t(std::move(shape));
  for (auto& v : t.mutable_data()) v = rng.uniform(-bound, bound);
  return t;
}

Tensor fan_in_init(Shape shape, CounterRng& rng) {
  std::size_t fan_in = 1;
  for (std::size_t i = 0; i + 1 < shape.size(); ++i) fan_in *= shape[i];
  return uniform_init(std::move(shape), 1.0 / std::sqrt(static_cast<double>(fan_in)), rng);
}

}  // namespace smamba
