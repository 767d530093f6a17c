#pragma once

// Finite-difference gradient checks over whole modules and feature heatmaps.

#include <cstdint>
#include <string>
#include <vector>

#include "smamba/config.hpp"
#include "smamba/gradcheck.hpp"
#include "smamba/image.hpp"
#include "smamba/model.hpp"

namespace smamba {

// 16 x 16 input, C0 = 2, dim = 8, depth = 1.
RunConfig tiny_run_config();

const std::vector<std::string>& gradcheck_modules();  // prior, encoder, decoder, loss

// Runs the finite-difference check for one module on `cfg`. Zero-initialized
// gates and heads are perturbed first so every path carries gradient.
GradcheckResult gradcheck_module(const std::string& module, const ModelConfig& cfg,
                                 std::size_t input_size, std::uint64_t seed);

// Min-max normalization to [0, 1]; a constant map becomes all zeros.
Plane minmax_normalize(const Plane& p);

struct Heatmaps {
  Plane prior;      // channel mean of M^D
  Plane embedding;  // L2 norm of each encoder token, upsampled
  Plane decoder;    // L2 norm of the upscaled decoder features, upsampled
};
// Maps are H x W and min-max normalized.
Heatmaps compute_heatmaps(const SamMamba& m, const RgbImage& img);

const std::vector<std::string>& heatmap_filenames();  // in Heatmaps field order

}  // namespace smamba
