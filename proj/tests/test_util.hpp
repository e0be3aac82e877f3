#pragma once

#include <random>

#include "pap/tensor.hpp"

namespace testing_util {

inline pap::Tensor uniform(pap::Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  pap::Tensor t(std::move(shape));
  std::uniform_real_distribution<double> dist(lo, hi);
  for (double& v : t.data()) v = dist(rng);
  return t;
}

/// Random row-stochastic matrix with strictly positive entries.
inline pap::Tensor row_stochastic(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
  pap::Tensor m = uniform({rows, cols}, rng, 0.05, 1.0);
  for (std::size_t i = 0; i < rows; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < cols; ++j) s += m.at(i, j);
    for (std::size_t j = 0; j < cols; ++j) m.at(i, j) /= s;
  }
  return m;
}

}  // namespace testing_util
