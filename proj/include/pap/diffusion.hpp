#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>

#include "pap/affinity.hpp"
#include "pap/ops.hpp"

namespace pap {

enum class Pooling { Average, Max };

struct DiffusionConfig {
  std::size_t iterations = 4;  // t*
  double beta = 0.05;
  bool subsampled = false;
  Pooling pooling = Pooling::Average;

  void validate() const {
    if (!(beta >= 0.0 && beta <= 1.0)) {
      throw ConfigError("diffusion beta must lie in [0, 1] (blend of diffused and initial values), got " +
                        std::to_string(beta));
    }
  }

  bool operator==(const DiffusionConfig&) const = default;
};

/// h' = M h. For a pooled affinity (N x N/4) the height/width of the position
/// grid are needed to pool h first.
inline Var diffuse_step(const AffinityMatrix& m, Var h) {
  detail::require_rank(h, 2, "diffuse_step");
  if (m.cols() != h.dim(0)) {
    throw DimensionError("diffuse_step: affinity " + shape_str(m.values.shape()) + " cannot act on " +
                         shape_str(h.shape()));
  }
  return matmul(m.values, h);
}

namespace detail {

inline Var pool_positions(Var h, std::size_t height, std::size_t width, Pooling pooling) {
  Var map = from_positions(h, height, width);
  return to_positions(pooling == Pooling::Average ? bilinear_resize(map, Resize::Down2) : max_pool2(map));
}

}  // namespace detail

/// One step against an affinity whose source positions were pooled 2x2.
inline Var pooled_diffuse_step(const AffinityMatrix& m, Var h, std::size_t height, std::size_t width,
                               Pooling pooling = Pooling::Average) {
  if (height % 2 != 0 || width % 2 != 0) {
    throw DimensionError("pooled_diffuse_step: grid " + std::to_string(height) + "x" + std::to_string(width) +
                         " is not even");
  }
  return diffuse_step(m, detail::pool_positions(h, height, width, pooling));
}

/// beta * M^t* h0 + (1 - beta) * h0, evaluated as h0 + beta * (M^t* h0 - h0) so
/// an exactly preserved field stays exact for every beta. Returns h0 itself
/// when t* = 0 or beta = 0.
/// `height`/`width` are only consulted when the matrix has pooled sources.
inline Var diffuse(const AffinityMatrix& m, Var h0, const DiffusionConfig& cfg, std::size_t height = 0,
                   std::size_t width = 0) {
  cfg.validate();
  if (cfg.iterations == 0 || cfg.beta == 0.0) return h0;
  const bool pooled = m.cols() != m.rows();
  Var h = h0;
  for (std::size_t t = 0; t < cfg.iterations; ++t) {
    h = pooled ? pooled_diffuse_step(m, h, height, width, cfg.pooling) : diffuse_step(m, h);
  }
  if (cfg.beta == 1.0) return h;
  return add(h0, scale(sub(h, h0), cfg.beta));
}

/// L = I - M.
inline Tensor laplacian(const Tensor& m) {
  if (m.rank() != 2 || m.dim(0) != m.dim(1)) throw DimensionError("laplacian: matrix must be square, got " + shape_str(m.shape()));
  Tensor l = m;
  for (double& v : l.data()) v = -v;
  for (std::size_t i = 0; i < m.dim(0); ++i) l.at(i, i) += 1.0;
  return l;
}

inline Tensor laplacian(const AffinityMatrix& m) { return laplacian(m.values.value()); }

/// Power-iteration estimate of the dominant eigenvalue magnitude, normalizing
/// in the max norm (which a row-stochastic matrix never expands).
inline double spectral_radius_bound(const Tensor& m, std::size_t iters = 200) {
  if (m.rank() != 2 || m.dim(0) != m.dim(1)) {
    throw DimensionError("spectral_radius_bound: matrix must be square, got " + shape_str(m.shape()));
  }
  const std::size_t n = m.dim(0);
  std::vector<double> v(n), w(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = 1.0 + static_cast<double>(i) / static_cast<double>(n);
  double estimate = 0.0;
  for (std::size_t it = 0; it < std::max<std::size_t>(iters, 1); ++it) {
    double vmax = 0.0, wmax = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < n; ++j) s += m.at(i, j) * v[j];
      w[i] = s;
      vmax = std::max(vmax, std::abs(v[i]));
      wmax = std::max(wmax, std::abs(s));
    }
    if (vmax == 0.0 || wmax == 0.0) return 0.0;
    estimate = wmax / vmax;
    for (std::size_t i = 0; i < n; ++i) v[i] = w[i] / wmax;
  }
  return estimate;
}

inline double spectral_radius_bound(const AffinityMatrix& m, std::size_t iters = 200) {
  return spectral_radius_bound(m.values.value(), iters);
}

/// Diffusion against an affinity computed from 2x2-pooled source positions:
/// queries are all positions of `features` (C x H x W), sources are the pooled
/// positions, giving an N x N/4 matrix.
inline Var subsample_diffuse(Var features, Var h, SimilarityKind sim, const DiffusionConfig& cfg,
                             TaskKind task = TaskKind::Depth, AffinityScale scale = AffinityScale::Eighth) {
  detail::require_rank(features, 3, "subsample_diffuse");
  const std::size_t height = features.dim(1), width = features.dim(2);
  if (height % 2 != 0 || width % 2 != 0) {
    throw DimensionError("subsample_diffuse: feature map " + shape_str(features.shape()) + " has odd dims");
  }
  Var pooled = cfg.pooling == Pooling::Average ? bilinear_resize(features, Resize::Down2) : max_pool2(features);
  AffinityMatrix m = compute_cross_affinity(to_positions(features), to_positions(pooled), sim, task, scale);
  return diffuse(m, h, cfg, height, width);
}

}  // namespace pap
