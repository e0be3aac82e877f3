#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <iomanip>
#include <numbers>
#include <ostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "pap/errors.hpp"
#include "pap/objectives.hpp"
#include "pap/tensor.hpp"
#include "pap/types.hpp"

namespace pap {

struct DepthMetrics {
  double rmse = 0.0;
  double rel = 0.0;
  double rmse_log = 0.0;
  double delta1 = 0.0;
  double delta2 = 0.0;
  double delta3 = 0.0;
};

struct NormalMetrics {
  double mean = 0.0;
  double median = 0.0;
  double rmse = 0.0;
  double within_11 = 0.0;
  double within_22 = 0.0;
  double within_30 = 0.0;
};

struct SegMetrics {
  double pixel_acc = 0.0;
  double mean_acc = 0.0;
  double iou = 0.0;
};

inline constexpr double kMinDepth = 1e-3;

/// Predictions are clamped to at least 1 mm before every metric.
inline DepthMetrics depth_metrics(const Tensor& pred, const Tensor& gt, const Mask& mask = {}) {
  if (pred.size() != gt.size()) throw DimensionError("depth_metrics: " + shape_str(pred.shape()) + " vs " + shape_str(gt.shape()));
  const std::size_t n = detail::count_valid(mask, gt.size());
  if (n == 0) throw UndefinedError("depth_metrics: no valid pixels");
  double se = 0.0, rel = 0.0, sle = 0.0;
  std::size_t d1 = 0, d2 = 0, d3 = 0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (!detail::valid(mask, i)) continue;
    const double p = std::max(pred[i], kMinDepth);
    const double g = gt[i];
    if (!(g > 0.0)) throw ContractError("depth_metrics: ground-truth depth must be positive");
    const double diff = p - g;
    se += diff * diff;
    rel += std::abs(diff) / g;
    const double ld = std::log(p) - std::log(g);
    sle += ld * ld;
    const double ratio = std::max(p / g, g / p);
    if (ratio < 1.25) ++d1;
    if (ratio < 1.25 * 1.25) ++d2;
    if (ratio < 1.25 * 1.25 * 1.25) ++d3;
  }
  const double inv = 1.0 / static_cast<double>(n);
  DepthMetrics m;
  m.rmse = std::sqrt(se * inv);
  m.rel = rel * inv;
  m.rmse_log = std::sqrt(sle * inv);
  m.delta1 = static_cast<double>(d1) * inv;
  m.delta2 = static_cast<double>(d2) * inv;
  m.delta3 = static_cast<double>(d3) * inv;
  return m;
}

/// Angular error in degrees between 3 x H x W normal maps. Both maps are
/// renormalized per pixel.
inline std::vector<double> normal_angles(const Tensor& pred, const Tensor& gt, const Mask& mask = {}) {
  if (pred.rank() != 3 || pred.dim(0) != 3 || pred.shape() != gt.shape()) {
    throw DimensionError("normal_metrics: " + shape_str(pred.shape()) + " vs " + shape_str(gt.shape()));
  }
  const std::size_t n = pred.dim(1) * pred.dim(2);
  detail::count_valid(mask, n);
  std::vector<double> angles;
  for (std::size_t i = 0; i < n; ++i) {
    if (!detail::valid(mask, i)) continue;
    double pp = 0.0, gg = 0.0, pg = 0.0;
    for (std::size_t c = 0; c < 3; ++c) {
      pp += pred[c * n + i] * pred[c * n + i];
      gg += gt[c * n + i] * gt[c * n + i];
      pg += pred[c * n + i] * gt[c * n + i];
    }
    const double denom = std::max(std::sqrt(pp), 1e-8) * std::max(std::sqrt(gg), 1e-8);
    const double cosine = std::clamp(pg / denom, -1.0, 1.0);
    angles.push_back(std::acos(cosine) * 180.0 / std::numbers::pi);
  }
  return angles;
}

inline NormalMetrics normal_metrics(const Tensor& pred, const Tensor& gt, const Mask& mask = {}) {
  std::vector<double> a = normal_angles(pred, gt, mask);
  if (a.empty()) throw UndefinedError("normal_metrics: no valid pixels");
  const double inv = 1.0 / static_cast<double>(a.size());
  double sum = 0.0, sq = 0.0;
  std::size_t w11 = 0, w22 = 0, w30 = 0;
  for (double v : a) {
    sum += v;
    sq += v * v;
    if (v < 11.25) ++w11;
    if (v < 22.5) ++w22;
    if (v < 30.0) ++w30;
  }
  NormalMetrics m;
  m.mean = sum * inv;
  m.rmse = std::sqrt(sq * inv);
  m.within_11 = static_cast<double>(w11) * inv;
  m.within_22 = static_cast<double>(w22) * inv;
  m.within_30 = static_cast<double>(w30) * inv;
  std::sort(a.begin(), a.end());
  const std::size_t h = a.size() / 2;
  m.median = a.size() % 2 == 1 ? a[h] : 0.5 * (a[h - 1] + a[h]);
  return m;
}

/// Class accuracies average over classes present in the ground truth; IoU
/// averages over classes present in either map.
inline SegMetrics seg_metrics(const std::vector<int>& pred, const std::vector<int>& gt, int classes,
                              int ignore_label = kIgnoreLabel) {
  if (pred.size() != gt.size()) throw DimensionError("seg_metrics: label maps differ in size");
  if (classes <= 0) throw ContractError("seg_metrics: class count must be positive");
  const auto k = static_cast<std::size_t>(classes);
  std::vector<std::size_t> tp(k, 0), gt_count(k, 0), pred_count(k, 0);
  std::size_t n = 0, correct = 0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (gt[i] == ignore_label) continue;
    if (gt[i] < 0 || gt[i] >= classes || pred[i] < 0 || pred[i] >= classes) {
      throw ContractError("seg_metrics: label outside [0, " + std::to_string(classes) + ")");
    }
    ++n;
    ++gt_count[static_cast<std::size_t>(gt[i])];
    ++pred_count[static_cast<std::size_t>(pred[i])];
    if (pred[i] == gt[i]) {
      ++correct;
      ++tp[static_cast<std::size_t>(gt[i])];
    }
  }
  if (n == 0) throw UndefinedError("seg_metrics: no labeled pixels");
  double acc_sum = 0.0, iou_sum = 0.0;
  std::size_t acc_classes = 0, iou_classes = 0;
  for (std::size_t c = 0; c < k; ++c) {
    if (gt_count[c] > 0) {
      acc_sum += static_cast<double>(tp[c]) / static_cast<double>(gt_count[c]);
      ++acc_classes;
    }
    const std::size_t uni = gt_count[c] + pred_count[c] - tp[c];
    if (uni > 0) {
      iou_sum += static_cast<double>(tp[c]) / static_cast<double>(uni);
      ++iou_classes;
    }
  }
  SegMetrics m;
  m.pixel_acc = static_cast<double>(correct) / static_cast<double>(n);
  m.mean_acc = acc_sum / static_cast<double>(acc_classes);
  m.iou = iou_sum / static_cast<double>(iou_classes);
  return m;
}

/// Named metric rows grouped by task, in insertion order.
class MetricsReport {
 public:
  struct Row {
    TaskKind task;
    std::string metric;
    double value;
  };

  void add(TaskKind task, std::string metric, double value) { rows_.push_back({task, std::move(metric), value}); }

  void add(const DepthMetrics& m) {
    add(TaskKind::Depth, "rmse", m.rmse);
    add(TaskKind::Depth, "rel", m.rel);
    add(TaskKind::Depth, "rmse_log", m.rmse_log);
    add(TaskKind::Depth, "delta1", m.delta1);
    add(TaskKind::Depth, "delta2", m.delta2);
    add(TaskKind::Depth, "delta3", m.delta3);
  }

  void add(const NormalMetrics& m) {
    add(TaskKind::Normal, "mean", m.mean);
    add(TaskKind::Normal, "median", m.median);
    add(TaskKind::Normal, "rmse", m.rmse);
    add(TaskKind::Normal, "within_11.25", m.within_11);
    add(TaskKind::Normal, "within_22.5", m.within_22);
    add(TaskKind::Normal, "within_30", m.within_30);
  }

  void add(const SegMetrics& m) {
    add(TaskKind::Segmentation, "pixel_acc", m.pixel_acc);
    add(TaskKind::Segmentation, "mean_acc", m.mean_acc);
    add(TaskKind::Segmentation, "iou", m.iou);
  }

  const std::vector<Row>& rows() const { return rows_; }

  /// Throws ContractError when absent.
  double get(TaskKind task, std::string_view metric) const {
    for (const auto& r : rows_) {
      if (r.task == task && r.metric == metric) return r.value;
    }
    throw ContractError("metric " + std::string(task_name(task)) + "/" + std::string(metric) + " not recorded");
  }

  bool has(TaskKind task, std::string_view metric) const {
    return std::any_of(rows_.begin(), rows_.end(), [&](const Row& r) { return r.task == task && r.metric == metric; });
  }

  void write_csv(std::ostream& os, bool header = true) const {
    if (header) os << "task,metric,value\n";
    for (const auto& r : rows_) os << task_name(r.task) << ',' << r.metric << ',' << format_value(r.value) << '\n';
  }

  static std::string format_value(double v) {
    std::ostringstream s;
    s << std::setprecision(6) << v;
    return s.str();
  }

 private:
  std::vector<Row> rows_;
};

}  // namespace pap
