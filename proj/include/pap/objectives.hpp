#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <unordered_set>
#include <utility>
#include <vector>

#include "pap/autodiff.hpp"
#include "pap/ops.hpp"
#include "pap/random.hpp"
#include "pap/types.hpp"

namespace pap {

/// Per-pixel validity; empty means every pixel is valid.
using Mask = std::vector<std::uint8_t>;

inline constexpr int kIgnoreLabel = -1;

struct LossWeights {
  std::array<double, 3> lambda{1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0};
  std::array<double, 3> xi{0.2, 0.2, 0.2};

  void validate() const {
    for (std::size_t i = 0; i < 3; ++i) {
      if (!(lambda[i] >= 0.0) || !(xi[i] >= 0.0)) throw ConfigError("loss weights must be non-negative");
    }
  }

  bool operator==(const LossWeights&) const = default;
};

/// Unordered position pairs drawn without replacement.
struct PairSample {
  std::vector<std::pair<std::uint32_t, std::uint32_t>> pairs;
  std::uint64_t seed = 0;

  std::size_t count() const { return pairs.size(); }
};

/// Draws `count` distinct unordered pairs (i < j) uniformly from `positions` positions.
inline PairSample sample_pairs(std::size_t positions, std::size_t count, std::uint64_t seed) {
  if (count == 0) throw ContractError("sample_pairs: pair count must be positive");
  const std::size_t total = positions * (positions - 1) / 2;
  if (positions < 2 || count > total) {
    throw ContractError("sample_pairs: cannot draw " + std::to_string(count) + " pairs from " +
                        std::to_string(positions) + " positions");
  }
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::uint32_t> pick(0, static_cast<std::uint32_t>(positions - 1));
  std::unordered_set<std::uint64_t> seen;
  PairSample s;
  s.seed = seed;
  s.pairs.reserve(count);
  while (s.pairs.size() < count) {
    std::uint32_t i = pick(rng), j = pick(rng);
    if (i == j) continue;
    if (i > j) std::swap(i, j);
    if (seen.insert((static_cast<std::uint64_t>(i) << 32) | j).second) s.pairs.emplace_back(i, j);
  }
  return s;
}

namespace detail {

inline std::size_t count_valid(const Mask& mask, std::size_t n) {
  if (mask.empty()) return n;
  if (mask.size() != n) throw DimensionError("mask has " + std::to_string(mask.size()) + " entries, expected " + std::to_string(n));
  return static_cast<std::size_t>(std::count_if(mask.begin(), mask.end(), [](std::uint8_t m) { return m != 0; }));
}

inline bool valid(const Mask& mask, std::size_t i) { return mask.empty() || mask[i] != 0; }

inline double sgn(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

}  // namespace detail

/// Reverse Huber: |r| below c, (r^2 + c^2) / 2c above, with c = 0.2 max|r| over
/// valid pixels. The gradient includes the dependence of c on the largest residual.
inline Var berhu_loss(Var pred, const Tensor& gt, const Mask& mask = {}) {
  if (pred.value().size() != gt.size()) {
    throw DimensionError("berhu_loss: " + shape_str(pred.shape()) + " vs " + shape_str(gt.shape()));
  }
  const std::size_t n = gt.size();
  const std::size_t valid = detail::count_valid(mask, n);
  if (valid == 0) throw UndefinedError("berhu_loss: no valid pixels");
  const Tensor& p = pred.value();
  std::vector<double> r(n, 0.0);
  std::size_t arg = n;
  double rmax = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!detail::valid(mask, i)) continue;
    r[i] = p[i] - gt[i];
    if (arg == n || std::abs(r[i]) > rmax) {
      rmax = std::abs(r[i]);
      arg = i;
    }
  }
  const double c = 0.2 * rmax;
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!detail::valid(mask, i)) continue;
    const double a = std::abs(r[i]);
    total += a <= c ? a : (r[i] * r[i] + c * c) / (2.0 * c);
  }
  const double inv = 1.0 / static_cast<double>(valid);
  const std::size_t ip = pred.id();
  return pred.tape()->record(Tensor({1}, total * inv), {pred}, [ip, r = std::move(r), c, arg, inv, mask](Tape& t, std::size_t self) {
    const double g = t.grad(self)[0] * inv;
    Tensor& dp = t.grad_buffer(ip);
    double dc = 0.0;
    for (std::size_t i = 0; i < r.size(); ++i) {
      if (!detail::valid(mask, i)) continue;
      const double a = std::abs(r[i]);
      if (a <= c) {
        dp[i] += g * detail::sgn(r[i]);
      } else {
        dp[i] += g * r[i] / c;
        dc += 0.5 - r[i] * r[i] / (2.0 * c * c);
      }
    }
    if (c > 0.0) dp[arg] += g * dc * 0.2 * detail::sgn(r[arg]);
  });
}

/// Mean over valid rows of ||x_i - target_i||_1.
inline Var l1_rows_mean(Var x, const Tensor& target, const Mask& mask = {}) {
  detail::require_rank(x, 2, "l1_rows_mean");
  if (target.shape() != x.shape()) {
    throw DimensionError("l1_rows_mean: " + shape_str(x.shape()) + " vs " + shape_str(target.shape()));
  }
  const std::size_t rows = x.dim(0), c = x.dim(1);
  const std::size_t valid = detail::count_valid(mask, rows);
  if (valid == 0) throw UndefinedError("l1_rows_mean: no valid rows");
  const Tensor& v = x.value();
  double total = 0.0;
  for (std::size_t i = 0; i < rows; ++i) {
    if (!detail::valid(mask, i)) continue;
    for (std::size_t k = 0; k < c; ++k) total += std::abs(v[i * c + k] - target[i * c + k]);
  }
  const double inv = 1.0 / static_cast<double>(valid);
  const std::size_t ix = x.id();
  return x.tape()->record(Tensor({1}, total * inv), {x}, [ix, target, mask, inv, c](Tape& t, std::size_t self) {
    const double g = t.grad(self)[0] * inv;
    const Tensor& v = t.value(ix);
    Tensor& dx = t.grad_buffer(ix);
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (!detail::valid(mask, i / c)) continue;
      dx[i] += g * detail::sgn(v[i] - target[i]);
    }
  });
}

/// Predictions are renormalized to unit length per pixel before the L1 distance.
inline Var normal_l1_loss(Var pred, const Tensor& gt, const Mask& mask = {}) {
  detail::require_rank(pred, 3, "normal_l1_loss");
  if (pred.dim(0) != 3 || gt.shape() != pred.shape()) {
    throw DimensionError("normal_l1_loss: " + shape_str(pred.shape()) + " vs " + shape_str(gt.shape()));
  }
  Tape& t = *pred.tape();
  Var unit = normalize_rows(to_positions(pred), 1e-8);
  Var target = to_positions(t.constant(gt));
  return l1_rows_mean(unit, target.value(), mask);
}

/// Mean over non-ignored pixels of -log softmax(logits)[label].
inline Var cross_entropy_loss(Var logits, const std::vector<int>& labels, int ignore_label = kIgnoreLabel) {
  detail::require_rank(logits, 3, "cross_entropy_loss");
  const std::size_t k = logits.dim(0), n = logits.dim(1) * logits.dim(2);
  if (labels.size() != n) throw DimensionError("cross_entropy_loss: label map size mismatch");
  const Tensor& z = logits.value();
  Tensor prob({k, n}, 0.0);
  double total = 0.0;
  std::size_t valid = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const int lab = labels[i];
    if (lab == ignore_label) continue;
    if (lab < 0 || static_cast<std::size_t>(lab) >= k) {
      throw ContractError("cross_entropy_loss: label " + std::to_string(lab) + " outside [0, " + std::to_string(k) + ")");
    }
    double mx = z[i];
    for (std::size_t c = 1; c < k; ++c) mx = std::max(mx, z[c * n + i]);
    double s = 0.0;
    for (std::size_t c = 0; c < k; ++c) s += std::exp(z[c * n + i] - mx);
    for (std::size_t c = 0; c < k; ++c) prob[c * n + i] = std::exp(z[c * n + i] - mx) / s;
    total += -(z[static_cast<std::size_t>(lab) * n + i] - mx - std::log(s));
    ++valid;
  }
  if (valid == 0) throw UndefinedError("cross_entropy_loss: every pixel is ignored");
  const double inv = 1.0 / static_cast<double>(valid);
  const std::size_t iz = logits.id();
  return logits.tape()->record(Tensor({1}, total * inv), {logits},
                               [iz, labels, ignore_label, prob = std::move(prob), inv, k, n](Tape& t, std::size_t self) {
                                 const double g = t.grad(self)[0] * inv;
                                 Tensor& dz = t.grad_buffer(iz);
                                 for (std::size_t i = 0; i < n; ++i) {
                                   if (labels[i] == ignore_label) continue;
                                   for (std::size_t c = 0; c < k; ++c) {
                                     const double onehot = static_cast<int>(c) == labels[i] ? 1.0 : 0.0;
                                     dz[c * n + i] += g * (prob[c * n + i] - onehot);
                                   }
                                 }
                               });
}

/// (1/|pairs|) sum |factor * ||x_i - x_j||_1 - target_k| over rows of x [N x C].
inline Var pair_distance_loss(Var x, const std::vector<std::pair<std::uint32_t, std::uint32_t>>& pairs,
                              const std::vector<double>& target, double factor) {
  detail::require_rank(x, 2, "pair_distance_loss");
  if (pairs.empty()) throw UndefinedError("pair_distance_loss: no pairs");
  if (target.size() != pairs.size()) throw DimensionError("pair_distance_loss: target count mismatch");
  const std::size_t n = x.dim(0), c = x.dim(1);
  const Tensor& v = x.value();
  std::vector<double> residual(pairs.size());
  double total = 0.0;
  for (std::size_t k = 0; k < pairs.size(); ++k) {
    const auto [i, j] = pairs[k];
    if (i >= n || j >= n) {
      throw ContractError("pair_distance_loss: pair (" + std::to_string(i) + ", " + std::to_string(j) +
                          ") out of bounds for " + std::to_string(n) + " positions");
    }
    double d = 0.0;
    for (std::size_t ch = 0; ch < c; ++ch) d += std::abs(v[i * c + ch] - v[j * c + ch]);
    residual[k] = factor * d - target[k];
    total += std::abs(residual[k]);
  }
  const double inv = 1.0 / static_cast<double>(pairs.size());
  const std::size_t ix = x.id();
  return x.tape()->record(Tensor({1}, total * inv), {x},
                          [ix, pairs, residual = std::move(residual), inv, factor, c](Tape& t, std::size_t self) {
                            const double g = t.grad(self)[0] * inv * factor;
                            const Tensor& v = t.value(ix);
                            Tensor& dx = t.grad_buffer(ix);
                            for (std::size_t k = 0; k < pairs.size(); ++k) {
                              const double outer = detail::sgn(residual[k]);
                              if (outer == 0.0) continue;
                              const auto [i, j] = pairs[k];
                              for (std::size_t ch = 0; ch < c; ++ch) {
                                const double s = detail::sgn(v[i * c + ch] - v[j * c + ch]);
                                dx[i * c + ch] += g * outer * s;
                                dx[j * c + ch] -= g * outer * s;
                              }
                            }
                          });
}

/// Ground truth for one task in the layout the losses consume.
struct TaskTarget {
  Tensor dense;             // depth 1 x H x W, or normals 3 x H x W
  std::vector<int> labels;  // segmentation
  Mask mask;
};

/// Sampled pair-wise loss. Depth compares |z_i - z_j|, normals compare
/// ||n_i - n_j||_1 of unit-renormalized predictions, segmentation compares
/// half the L1 distance of softmax probabilities against 0/1 label disagreement.
inline Var pairwise_loss(Var pred, const TaskTarget& gt, const PairSample& sample, TaskKind task) {
  detail::require_rank(pred, 3, "pairwise_loss");
  const std::size_t n = pred.dim(1) * pred.dim(2);
  std::vector<std::pair<std::uint32_t, std::uint32_t>> pairs;
  std::vector<double> target;
  pairs.reserve(sample.count());
  target.reserve(sample.count());
  for (const auto& [i, j] : sample.pairs) {
    if (i >= n || j >= n) {
      throw ContractError("pairwise_loss: pair (" + std::to_string(i) + ", " + std::to_string(j) +
                          ") out of bounds for " + std::to_string(n) + " positions");
    }
    if (!detail::valid(gt.mask, i) || !detail::valid(gt.mask, j)) continue;
    double d = 0.0;
    if (task == TaskKind::Segmentation) {
      if (gt.labels[i] == kIgnoreLabel || gt.labels[j] == kIgnoreLabel) continue;
      d = gt.labels[i] == gt.labels[j] ? 0.0 : 1.0;
    } else {
      const std::size_t c = gt.dense.dim(0);
      for (std::size_t ch = 0; ch < c; ++ch) d += std::abs(gt.dense[ch * n + i] - gt.dense[ch * n + j]);
    }
    pairs.emplace_back(i, j);
    target.push_back(d);
  }
  Var rows = to_positions(pred);
  switch (task) {
    case TaskKind::Depth: return pair_distance_loss(rows, pairs, target, 1.0);
    case TaskKind::Normal: return pair_distance_loss(normalize_rows(rows, 1e-8), pairs, target, 1.0);
    case TaskKind::Segmentation: return pair_distance_loss(row_softmax(rows), pairs, target, 0.5);
  }
  return {};
}

/// Primary loss for one task.
inline Var task_loss(Var pred, const TaskTarget& gt, TaskKind task) {
  switch (task) {
    case TaskKind::Depth: return berhu_loss(pred, gt.dense, gt.mask);
    case TaskKind::Normal: return normal_l1_loss(pred, gt.dense, gt.mask);
    case TaskKind::Segmentation: return cross_entropy_loss(pred, gt.labels);
  }
  return {};
}

struct TaskLossTerms {
  TaskKind task;
  Var loss;
  Var pairwise;  // may be invalid when the pair-wise term is disabled
};

/// sum_T lambda_T (L_T + xi_T L_T^pair) over the active tasks. Weights are
/// applied as configured even for a lone task, so single-task runs see the same
/// gradient scale per task as joint runs.
inline Var total_loss(const std::vector<TaskLossTerms>& terms, const LossWeights& w) {
  if (terms.empty()) throw ContractError("total_loss: no active tasks");
  w.validate();
  Var total;
  for (const auto& term : terms) {
    const std::size_t k = task_index(term.task);
    const double lambda = w.lambda[k];
    Var inner = term.loss;
    if (term.pairwise.valid() && w.xi[k] != 0.0) inner = add(inner, scale(term.pairwise, w.xi[k]));
    Var weighted = scale(inner, lambda);
    total = total.valid() ? add(total, weighted) : weighted;
  }
  return total;
}

}  // namespace pap
