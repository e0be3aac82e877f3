#pragma once

#include <cmath>
#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "pap/autodiff.hpp"
#include "pap/image_io.hpp"
#include "pap/ops.hpp"
#include "pap/types.hpp"

namespace pap {

/// Row-stochastic matrix of pair-wise similarities for one task at one scale.
///
/// `values` is N x N_src where N_src is N for full affinities and N/4 when the
/// source positions were pooled. `unnormalized` holds the exponentiated scores
/// before row normalization when it was requested and N_src == N.
struct AffinityMatrix {
  AffinityMatrix() = default;
  AffinityMatrix(Var values_, TaskKind task_ = TaskKind::Depth, AffinityScale scale_ = AffinityScale::Eighth,
                 std::optional<Tensor> unnormalized_ = std::nullopt)
      : values(values_), task(task_), scale(scale_), unnormalized(std::move(unnormalized_)) {}

  Var values;
  TaskKind task = TaskKind::Depth;
  AffinityScale scale = AffinityScale::Eighth;
  std::optional<Tensor> unnormalized;

  std::size_t rows() const { return values.dim(0); }
  std::size_t cols() const { return values.dim(1); }
};

/// Halves the channel count of a 2C x H x W map with a 1x1 convolution.
inline Var shrink_features(Var features, Var projection) {
  detail::require_rank(features, 3, "shrink_features");
  const std::size_t c2 = features.dim(0);
  if (c2 % 2 != 0) {
    throw ConfigError("shrink_features: channel count must be even, got " + std::to_string(c2));
  }
  const Shape expect{c2 / 2, c2, 1, 1};
  if (projection.shape() != expect) {
    throw ConfigError("shrink_features: projection must be " + shape_str(expect) + ", got " +
                      shape_str(projection.shape()));
  }
  return conv2d(features, projection);
}

/// Raw similarity scores between rows of x [N x C] and rows of y [M x C]:
/// inner products, or negated L1 distances.
inline Var similarity_scores(Var x, Var y, SimilarityKind sim) {
  return sim == SimilarityKind::DotProduct ? matmul_nt(x, y) : neg_l1_distance(x, y);
}

namespace detail {

inline Tensor exp_copy(const Tensor& scores) {
  Tensor e = scores;
  for (double& v : e.data()) v = std::exp(v);
  return e;
}

}  // namespace detail

/// M = row-normalize(exp(s(x_i, x_j))) over all position pairs of x [N x C].
inline AffinityMatrix compute_affinity(Var x, SimilarityKind sim, TaskKind task = TaskKind::Depth,
                                       AffinityScale scale = AffinityScale::Eighth, bool keep_unnormalized = false) {
  detail::require_rank(x, 2, "compute_affinity");
  Var scores = similarity_scores(x, x, sim);
  AffinityMatrix m{row_softmax(scores), task, scale, std::nullopt};
  if (keep_unnormalized) m.unnormalized = detail::exp_copy(scores.value());
  return m;
}

/// Affinity from every query row of x [N x C] to pooled source rows src [M x C].
inline AffinityMatrix compute_cross_affinity(Var x, Var src, SimilarityKind sim, TaskKind task = TaskKind::Depth,
                                             AffinityScale scale = AffinityScale::Eighth) {
  detail::require_rank(x, 2, "compute_cross_affinity");
  detail::require_rank(src, 2, "compute_cross_affinity");
  return AffinityMatrix{row_softmax(similarity_scores(x, src, sim)), task, scale, std::nullopt};
}

/// Learned simplex weights that mix the per-task affinities for one target task.
struct AffinityEnsemble {
  /// Logits biased towards the target's own matrix: ln 3 there, 0 elsewhere,
  /// i.e. weights 0.6 / 0.2 / 0.2 for three sources.
  static Tensor initial_logits(std::size_t sources, std::size_t own_index) {
    Tensor logits({sources}, 0.0);
    logits[own_index] = std::log(3.0);
    return logits;
  }

  static Var weights(Var logits) { return softmax(logits); }
};

/// Convex combination sum_k alpha_k M_k with alpha = softmax(logits).
inline AffinityMatrix combine_affinities(const std::vector<AffinityMatrix>& ms, Var logits, TaskKind target) {
  if (ms.empty()) throw ContractError("combine_affinities: no matrices");
  if (logits.value().size() != ms.size()) {
    throw DimensionError("combine_affinities: " + std::to_string(ms.size()) + " matrices but logits " +
                         shape_str(logits.shape()));
  }
  std::vector<Var> terms;
  for (const auto& m : ms) {
    if (m.values.shape() != ms[0].values.shape() || m.scale != ms[0].scale) {
      throw DimensionError("combine_affinities: matrices differ in shape or scale, " +
                           shape_str(ms[0].values.shape()) + " vs " + shape_str(m.values.shape()));
    }
    terms.push_back(m.values);
  }
  return AffinityMatrix{weighted_sum(terms, AffinityEnsemble::weights(logits)), target, ms[0].scale, std::nullopt};
}

/// Two-source variant used by the paired-task ablations.
inline AffinityMatrix two_task_combine(const std::vector<AffinityMatrix>& ms, Var logits, TaskKind target) {
  if (ms.size() != 2) throw ContractError("two_task_combine: expected two matrices");
  return combine_affinities(ms, logits, target);
}

inline std::string affinity_dump_name(TaskKind task, AffinityScale scale, std::size_t row) {
  return "affinity_" + std::string(task_name(task)) + "_1-" + std::to_string(scale_divisor(scale)) + "_" +
         std::to_string(row) + ".pgm";
}

/// Writes row `row` of the matrix, reshaped to height x width, as an 8-bit heat map.
inline std::filesystem::path dump_affinity(const AffinityMatrix& m, std::size_t row, std::size_t height,
                                           std::size_t width, const std::filesystem::path& dir) {
  if (row >= m.rows()) throw ContractError("dump_affinity: row " + std::to_string(row) + " out of range");
  if (m.cols() != height * width) {
    throw DimensionError("dump_affinity: " + shape_str(m.values.shape()) + " does not reshape to " +
                         std::to_string(height) + "x" + std::to_string(width));
  }
  Tensor line({height, width});
  for (std::size_t j = 0; j < m.cols(); ++j) line[j] = m.values.value().at(row, j);
  const auto path = dir / affinity_dump_name(m.task, m.scale, row);
  write_pgm(path, height, width, heat_map(line));
  return path;
}

}  // namespace pap
