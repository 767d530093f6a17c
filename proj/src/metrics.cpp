#include "smamba/metrics.hpp"

#include <algorithm>
#include <cfloat>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <stdexcept>

#include "smamba/kernels.hpp"

namespace smamba {

namespace {

constexpr double kEps = DBL_EPSILON;

// Largest t in [0, 255] with t/255 <= p.
int top_threshold(double p) {
  int k = static_cast<int>(std::floor(p * 255.0));
  k = std::clamp(k, 0, 255);
  while (k < 255 && static_cast<double>(k + 1) / 255.0 <= p) ++k;
  while (k > 0 && static_cast<double>(k) / 255.0 > p) --k;
  return k;
}

bool is_fg(double g) { return g > 0.5; }

double mean_of(const Plane& p) {
  return std::accumulate(p.v.begin(), p.v.end(), 0.0) / static_cast<double>(p.size());
}

// Sub-block [y0, y1) x [x0, x1).
Plane crop(const Plane& p, std::size_t y0, std::size_t y1, std::size_t x0, std::size_t x1) {
  Plane out(y1 - y0, x1 - x0);
  for (std::size_t y = y0; y < y1; ++y)
    for (std::size_t x = x0; x < x1; ++x) out(y - y0, x - x0) = p(y, x);
  return out;
}

double s_object(const Plane& pred, const Plane& g, bool foreground) {
  std::vector<double> vals;
  for (std::size_t i = 0; i < pred.size(); ++i)
    if (is_fg(g.v[i]) == foreground) vals.push_back(pred.v[i]);
  if (vals.empty()) return 0.0;
  const double n = static_cast<double>(vals.size());
  const double mu = std::accumulate(vals.begin(), vals.end(), 0.0) / n;
  double var = 0.0;
  for (double v : vals) var += (v - mu) * (v - mu);
  const double sigma = vals.size() > 1 ? std::sqrt(var / (n - 1.0)) : 0.0;
  return 2.0 * mu / (mu * mu + 1.0 + sigma + kEps);
}

double object_score(const Plane& pred, const Plane& g) {
  Plane fg(pred.h, pred.w), bg(pred.h, pred.w);
  for (std::size_t i = 0; i < pred.size(); ++i) {
    fg.v[i] = is_fg(g.v[i]) ? pred.v[i] : 0.0;
    bg.v[i] = is_fg(g.v[i]) ? 0.0 : 1.0 - pred.v[i];
  }
  const double u = mean_of(g);
  return u * s_object(fg, g, true) + (1.0 - u) * s_object(bg, g, false);
}

double ssim_score(const Plane& pred, const Plane& g) {
  const double n = static_cast<double>(pred.size());
  const double x = mean_of(pred), y = mean_of(g);
  double sxx = 0.0, syy = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    sxx += (pred.v[i] - x) * (pred.v[i] - x);
    syy += (g.v[i] - y) * (g.v[i] - y);
    sxy += (pred.v[i] - x) * (g.v[i] - y);
  }
  sxx /= n - 1.0 + kEps;
  syy /= n - 1.0 + kEps;
  sxy /= n - 1.0 + kEps;
  const double alpha = 4.0 * x * y * sxy;
  const double beta = (x * x + y * y) * (sxx + syy);
  if (alpha != 0.0) return alpha / (beta + kEps);
  return beta == 0.0 ? 1.0 : 0.0;
}

long round_half_away(double v) { return static_cast<long>(std::round(v)); }

double region_score(const Plane& pred, const Plane& g) {
  // 1-based centroid as in the reference implementation.
  double sx = 0.0, sy = 0.0, area = 0.0;
  for (std::size_t y = 0; y < g.h; ++y)
    for (std::size_t x = 0; x < g.w; ++x)
      if (is_fg(g(y, x))) {
        sx += static_cast<double>(x + 1);
        sy += static_cast<double>(y + 1);
        area += 1.0;
      }
  const auto cx = static_cast<std::size_t>(round_half_away(sx / area));
  const auto cy = static_cast<std::size_t>(round_half_away(sy / area));
  const double total = static_cast<double>(g.size());
  const std::size_t xs[3] = {0, cx, g.w};
  const std::size_t ys[3] = {0, cy, g.h};
  double score = 0.0;
  for (int qy = 0; qy < 2; ++qy)
    for (int qx = 0; qx < 2; ++qx) {
      const std::size_t y0 = ys[qy], y1 = ys[qy + 1], x0 = xs[qx], x1 = xs[qx + 1];
      if (y1 <= y0 || x1 <= x0) continue;  // zero weight
      const double weight = static_cast<double>((y1 - y0) * (x1 - x0)) / total;
      score += weight * ssim_score(crop(pred, y0, y1, x0, x1), crop(g, y0, y1, x0, x1));
    }
  return score;
}

}  // namespace

void check_prediction(const Plane& pred, const Plane& g) {
  if (pred.h != g.h || pred.w != g.w || pred.size() != pred.h * pred.w || g.size() != g.h * g.w)
    throw std::invalid_argument("metrics: prediction and ground truth sizes differ");
  if (pred.size() == 0) throw std::invalid_argument("metrics: empty map");
  for (double v : pred.v)
    if (!(v >= 0.0 && v <= 1.0)) throw std::invalid_argument("metrics: prediction outside [0, 1]");
}

ThresholdCurve dice_iou_curve(const Plane& pred, const Plane& g) {
  check_prediction(pred, g);
  std::array<double, kThresholds + 1> pos{}, tp{};
  double gsize = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const int k = top_threshold(pred.v[i]);
    pos[k] += 1.0;
    if (is_fg(g.v[i])) {
      tp[k] += 1.0;
      gsize += 1.0;
    }
  }
  // Suffix sums: pixels passing threshold t are those with top >= t.
  for (int t = static_cast<int>(kThresholds) - 2; t >= 0; --t) {
    pos[t] += pos[t + 1];
    tp[t] += tp[t + 1];
  }
  ThresholdCurve c;
  for (std::size_t t = 0; t < kThresholds; ++t) {
    const double denom = pos[t] + gsize;
    const double uni = pos[t] + gsize - tp[t];
    c.dice[t] = denom == 0.0 ? 1.0 : 2.0 * tp[t] / denom;
    c.iou[t] = uni == 0.0 ? 1.0 : tp[t] / uni;
  }
  return c;
}

DiceIou mdice_miou(const Plane& pred, const Plane& g, std::optional<double> fixed) {
  if (fixed) {
    check_prediction(pred, g);
    double p = 0.0, inter = 0.0, gs = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
      const bool on = pred.v[i] >= *fixed;
      const bool gt = is_fg(g.v[i]);
      p += on;
      gs += gt;
      inter += on && gt;
    }
    const double uni = p + gs - inter;
    return {p + gs == 0.0 ? 1.0 : 2.0 * inter / (p + gs), uni == 0.0 ? 1.0 : inter / uni};
  }
  const ThresholdCurve c = dice_iou_curve(pred, g);
  DiceIou out;
  for (std::size_t t = 0; t < kThresholds; ++t) {
    out.dice += c.dice[t];
    out.iou += c.iou[t];
  }
  out.dice /= static_cast<double>(kThresholds);
  out.iou /= static_cast<double>(kThresholds);
  return out;
}

double mae(const Plane& pred, const Plane& g) {
  if (pred.h != g.h || pred.w != g.w) throw std::invalid_argument("mae: size mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) s += std::abs(pred.v[i] - g.v[i]);
  return s / static_cast<double>(pred.size());
}

double s_measure(const Plane& pred, const Plane& g) {
  check_prediction(pred, g);
  const double y = mean_of(g);
  if (y == 0.0) return 1.0 - mean_of(pred);
  if (y == 1.0) return mean_of(pred);
  const double q = 0.5 * object_score(pred, g) + 0.5 * region_score(pred, g);
  return std::max(0.0, q);
}

std::array<double, 49> gaussian_7x7_sigma5() {
  std::array<double, 49> k{};
  const double sigma = 5.0;
  double mx = 0.0;
  for (int y = -3; y <= 3; ++y)
    for (int x = -3; x <= 3; ++x) {
      const double v = std::exp(-(x * x + y * y) / (2.0 * sigma * sigma));
      k[(y + 3) * 7 + x + 3] = v;
      mx = std::max(mx, v);
    }
  double sum = 0.0;
  for (double& v : k) {
    if (v < kEps * mx) v = 0.0;
    sum += v;
  }
  for (double& v : k) v /= sum;
  return k;
}

NearestForeground nearest_foreground(const Plane& g) {
  const long h = static_cast<long>(g.h), w = static_cast<long>(g.w);
  NearestForeground out;
  out.index.assign(g.size(), 0);
  out.dist.assign(g.size(), 0.0);
  bool any = false;
  for (double v : g.v) any = any || is_fg(v);
  if (!any) throw std::invalid_argument("nearest_foreground: mask has no foreground");
  for (long y = 0; y < h; ++y)
    for (long x = 0; x < w; ++x) {
      const std::size_t self = static_cast<std::size_t>(y * w + x);
      if (is_fg(g.v[self])) {
        out.index[self] = self;
        continue;
      }
      // Square rings of growing radius; a ring at radius r holds no point
      // closer than r, so stop once r^2 exceeds the best squared distance.
      long best_d2 = -1;
      std::size_t best = 0;
      for (long r = 1; r <= std::max(h, w); ++r) {
        if (best_d2 >= 0 && r * r > best_d2) break;
        for (long yy = std::max(0L, y - r); yy <= std::min(h - 1, y + r); ++yy)
          for (long xx = std::max(0L, x - r); xx <= std::min(w - 1, x + r); ++xx) {
            if (std::abs(yy - y) != r && std::abs(xx - x) != r) continue;
            const std::size_t idx = static_cast<std::size_t>(yy * w + xx);
            if (!is_fg(g.v[idx])) continue;
            const long d2 = (yy - y) * (yy - y) + (xx - x) * (xx - x);
            if (best_d2 < 0 || d2 < best_d2 || (d2 == best_d2 && idx < best)) {
              best_d2 = d2;
              best = idx;
            }
          }
      }
      out.index[self] = best;
      out.dist[self] = std::sqrt(static_cast<double>(best_d2));
    }
  return out;
}

WeightedF weighted_fmeasure(const Plane& pred, const Plane& g) {
  check_prediction(pred, g);
  const std::size_t n = pred.size();
  double gsum = 0.0;
  for (double v : g.v) gsum += is_fg(v);
  if (gsum == 0.0) return {0.0, true};

  const NearestForeground nf = nearest_foreground(g);
  std::vector<double> e(n), et(n);
  for (std::size_t i = 0; i < n; ++i) e[i] = std::abs(pred.v[i] - (is_fg(g.v[i]) ? 1.0 : 0.0));
  for (std::size_t i = 0; i < n; ++i) et[i] = is_fg(g.v[i]) ? e[i] : e[nf.index[i]];

  const auto k = gaussian_7x7_sigma5();
  std::vector<double> ea(n, 0.0);
  const long h = static_cast<long>(g.h), w = static_cast<long>(g.w);
  for (long y = 0; y < h; ++y)
    for (long x = 0; x < w; ++x) {
      double acc = 0.0;
      for (long dy = -3; dy <= 3; ++dy)
        for (long dx = -3; dx <= 3; ++dx) {
          const long yy = y + dy, xx = x + dx;
          if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
          acc += et[yy * w + xx] * k[(dy + 3) * 7 + dx + 3];
        }
      ea[y * w + x] = acc;
    }

  double ew_fg = 0.0, ew_bg = 0.0;
  const double decay = std::log(0.5) / 5.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (is_fg(g.v[i])) {
      ew_fg += std::min(e[i], ea[i]);
    } else {
      ew_bg += e[i] * (2.0 - std::exp(decay * nf.dist[i]));
    }
  }
  const double tpw = gsum - ew_fg;
  const double fpw = ew_bg;
  const double recall = 1.0 - ew_fg / gsum;
  const double precision = tpw / (kEps + tpw + fpw);
  return {2.0 * recall * precision / (kEps + recall + precision), false};
}

double e_measure_at(const Plane& pred, const Plane& g, std::size_t t) {
  const double th = static_cast<double>(t) / 255.0;
  const std::size_t n = pred.size();
  double pm = 0.0, gm = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    pm += pred.v[i] >= th ? 1.0 : 0.0;
    gm += is_fg(g.v[i]) ? 1.0 : 0.0;
  }
  const double nn = static_cast<double>(n);
  if (gm == 0.0) return 1.0 - pm / nn;
  if (gm == nn) return pm / nn;
  pm /= nn;
  gm /= nn;
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dp = (pred.v[i] >= th ? 1.0 : 0.0) - pm;
    const double dg = (is_fg(g.v[i]) ? 1.0 : 0.0) - gm;
    const double align = 2.0 * dp * dg / (dp * dp + dg * dg);
    s += (align + 1.0) * (align + 1.0) / 4.0;
  }
  return s / nn;
}

double e_measure_max(const Plane& pred, const Plane& g) {
  check_prediction(pred, g);
  double best = 0.0;
  for (std::size_t t = 0; t < kThresholds; ++t) best = std::max(best, e_measure_at(pred, g, t));
  return best;
}

ImageMetrics evaluate_image(const std::string& id, const Plane& pred, const Plane& g,
                            std::optional<double> fixed_threshold) {
  check_prediction(pred, g);
  ImageMetrics m;
  m.id = id;
  const DiceIou di = mdice_miou(pred, g, fixed_threshold);
  m.mdice = di.dice;
  m.miou = di.iou;
  const WeightedF wf = weighted_fmeasure(pred, g);
  m.f_beta_w = wf.value;
  m.empty_gt_warning = wf.empty_gt;
  m.s_alpha = s_measure(pred, g);
  m.e_phi_max = e_measure_max(pred, g);
  m.mae = mae(pred, g);
  return m;
}

MetricsReport evaluate_dataset(const std::string& dataset_id, const std::vector<std::string>& ids,
                               const std::vector<Plane>& preds, const std::vector<Plane>& gts,
                               std::optional<double> fixed_threshold) {
  if (ids.empty()) throw std::invalid_argument("evaluate_dataset: empty dataset");
  if (ids.size() != preds.size() || ids.size() != gts.size())
    throw std::invalid_argument("evaluate_dataset: ids, predictions and masks differ in count");
  std::vector<std::size_t> order(ids.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return ids[a] < ids[b]; });

  MetricsReport r;
  r.dataset_id = dataset_id;
  r.per_image.resize(ids.size());
  const long count = static_cast<long>(ids.size());
#pragma omp parallel for schedule(dynamic) num_threads(kernels::max_threads())
  for (long i = 0; i < count; ++i) {
    const std::size_t src = order[static_cast<std::size_t>(i)];
    r.per_image[static_cast<std::size_t>(i)] = evaluate_image(ids[src], preds[src], gts[src], fixed_threshold);
  }
  for (const auto& m : r.per_image) {
    r.mdice += m.mdice;
    r.miou += m.miou;
    r.f_beta_w += m.f_beta_w;
    r.s_alpha += m.s_alpha;
    r.e_phi_max += m.e_phi_max;
    r.mae += m.mae;
  }
  const double n = static_cast<double>(r.per_image.size());
  r.mdice /= n;
  r.miou /= n;
  r.f_beta_w /= n;
  r.s_alpha /= n;
  r.e_phi_max /= n;
  r.mae /= n;
  return r;
}

std::string metrics_header() { return "mDice\tmIoU\tFbw\tSalpha\tEphimax\tMAE"; }

std::string format_metric_row(double mdice, double miou, double fbw, double sa, double em, double m) {
  char buf[160];
  std::snprintf(buf, sizeof(buf), "%.1f\t%.1f\t%.1f\t%.1f\t%.1f\t%.1f", 100 * mdice, 100 * miou,
                100 * fbw, 100 * sa, 100 * em, 100 * m);
  return buf;
}

std::string report_tsv(const MetricsReport& r) {
  std::string out = "# summary\ndataset\timages\t" + metrics_header() + "\n";
  out += r.dataset_id + "\t" + std::to_string(r.per_image.size()) + "\t" +
         format_metric_row(r.mdice, r.miou, r.f_beta_w, r.s_alpha, r.e_phi_max, r.mae) + "\n";
  out += "# per-image\nid\t" + metrics_header() + "\twarning\n";
  for (const auto& m : r.per_image) {
    char buf[256];
    std::snprintf(buf, sizeof(buf), "\t%.4f\t%.4f\t%.4f\t%.4f\t%.4f\t%.4f\t%s\n", 100 * m.mdice,
                  100 * m.miou, 100 * m.f_beta_w, 100 * m.s_alpha, 100 * m.e_phi_max, 100 * m.mae,
                  m.empty_gt_warning ? "empty-gt" : "-");
    out += m.id + buf;
  }
  return out;
}

std::string report_text(const MetricsReport& r) {
  char buf[512];
  std::snprintf(buf, sizeof(buf),
                "dataset   %s (%zu images)\n"
                "mDice     %6.2f\nmIoU      %6.2f\nFbw       %6.2f\nSalpha    %6.2f\n"
                "Ephimax   %6.2f\nMAE       %6.2f\n",
                r.dataset_id.c_str(), r.per_image.size(), 100 * r.mdice, 100 * r.miou,
                100 * r.f_beta_w, 100 * r.s_alpha, 100 * r.e_phi_max, 100 * r.mae);
  std::string out = buf;
  std::size_t warned = 0;
  for (const auto& m : r.per_image) warned += m.empty_gt_warning;
  if (warned) out += "warning   " + std::to_string(warned) + " image(s) with empty ground truth (Fbw = 0)\n";
  return out;
}

}  // namespace smamba
