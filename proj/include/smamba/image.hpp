#pragma once

#include <cstddef>
#include <vector>

namespace smamba {

// Single-channel H x W map, row-major.
struct Plane {
  std::size_t h = 0, w = 0;
  std::vector<double> v;

  Plane() = default;
  Plane(std::size_t h_, std::size_t w_, double fill = 0.0) : h(h_), w(w_), v(h_ * w_, fill) {}
  Plane(std::size_t h_, std::size_t w_, std::vector<double> values)
      : h(h_), w(w_), v(std::move(values)) {}

  double& operator()(std::size_t y, std::size_t x) { return v[y * w + x]; }
  double operator()(std::size_t y, std::size_t x) const { return v[y * w + x]; }
  std::size_t size() const { return v.size(); }
  bool operator==(const Plane&) const = default;
};

// Interleaved H x W x 3 image, values in [0, 1].
struct RgbImage {
  std::size_t h = 0, w = 0;
  std::vector<double> v;

  RgbImage() = default;
  RgbImage(std::size_t h_, std::size_t w_, double fill = 0.0) : h(h_), w(w_), v(h_ * w_ * 3, fill) {}

  double& operator()(std::size_t y, std::size_t x, std::size_t c) { return v[(y * w + x) * 3 + c]; }
  double operator()(std::size_t y, std::size_t x, std::size_t c) const { return v[(y * w + x) * 3 + c]; }
  bool operator==(const RgbImage&) const = default;
};

}  // namespace smamba
