#pragma once

// Binary segmentation metrics: threshold-swept Dice/IoU, MAE, S-measure,
// weighted F-measure and max E-measure, plus dataset aggregation.
//
// Predictions are probability maps in [0, 1]; ground truth is a 0/1 plane.
// Thresholds are t/255 for t = 0..255 and a pixel is foreground when
// pred >= t/255.

#include <array>
#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "smamba/image.hpp"

namespace smamba {

constexpr std::size_t kThresholds = 256;

struct ThresholdCurve {
  std::array<double, kThresholds> dice{};
  std::array<double, kThresholds> iou{};
};

// Per-threshold Dice and IoU with 0/0 defined as 1.
ThresholdCurve dice_iou_curve(const Plane& pred, const Plane& g);

struct DiceIou {
  double dice = 0.0;
  double iou = 0.0;
};
// Mean over the 256 thresholds, or a single threshold when `fixed` is set.
DiceIou mdice_miou(const Plane& pred, const Plane& g, std::optional<double> fixed = std::nullopt);

double mae(const Plane& pred, const Plane& g);

// Structure measure with alpha = 0.5. Empty G -> 1 - mean(pred);
// full G -> mean(pred).
double s_measure(const Plane& pred, const Plane& g);

struct WeightedF {
  double value = 0.0;
  bool empty_gt = false;  // set when G has no foreground; value is then 0
};
// Weighted F-beta (beta^2 = 1) with the 7x7, sigma 5 Gaussian dependency
// correction and distance-decayed importance on background pixels.
WeightedF weighted_fmeasure(const Plane& pred, const Plane& g);

// Enhanced-alignment measure at one binarization threshold index.
double e_measure_at(const Plane& pred, const Plane& g, std::size_t t);
double e_measure_max(const Plane& pred, const Plane& g);

// Index of the nearest foreground pixel for every pixel (self for
// foreground pixels); ties resolve to the smallest row-major index.
// Returns Euclidean distances alongside. Requires at least one foreground pixel.
struct NearestForeground {
  std::vector<std::size_t> index;
  std::vector<double> dist;
};
NearestForeground nearest_foreground(const Plane& g);

// Normalized 7x7 Gaussian, sigma 5, entries below eps * max zeroed.
std::array<double, 49> gaussian_7x7_sigma5();

struct ImageMetrics {
  std::string id;
  double mdice = 0, miou = 0, f_beta_w = 0, s_alpha = 0, e_phi_max = 0, mae = 0;
  bool empty_gt_warning = false;
};

struct MetricsReport {
  std::string dataset_id;
  double mdice = 0, miou = 0, f_beta_w = 0, s_alpha = 0, e_phi_max = 0, mae = 0;
  std::vector<ImageMetrics> per_image;  // sorted by id
};

void check_prediction(const Plane& pred, const Plane& g);

ImageMetrics evaluate_image(const std::string& id, const Plane& pred, const Plane& g,
                            std::optional<double> fixed_threshold = std::nullopt);

// Per-image metrics, then arithmetic means over images sorted by id. Throws
// std::invalid_argument on an empty dataset or mismatched inputs.
MetricsReport evaluate_dataset(const std::string& dataset_id, const std::vector<std::string>& ids,
                               const std::vector<Plane>& preds, const std::vector<Plane>& gts,
                               std::optional<double> fixed_threshold = std::nullopt);

// Six metrics, x100 with one decimal, tab separated in the order
// mDice, mIoU, Fbw, Salpha, Ephimax, MAE.
std::string format_metric_row(double mdice, double miou, double fbw, double sa, double em, double mae);
std::string metrics_header();
// Summary block plus per-image section as UTF-8 TSV.
std::string report_tsv(const MetricsReport& r);
// Aligned human-readable block.
std::string report_text(const MetricsReport& r);

}  // namespace smamba
