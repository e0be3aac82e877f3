#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <vector>

#include "pap/autodiff.hpp"
#include "pap/ops.hpp"

namespace pap {

/// |analytic - numeric| / max(|analytic|, |numeric|, 1e-8)
inline double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-8});
}

namespace detail {

// Fixed projection weights so every output component contributes to the scalar.
inline Tensor projection_weights(const Shape& shape) {
  Tensor w(shape);
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = std::cos(0.731 * static_cast<double>(i) + 0.3);
  return w;
}

inline Var scalarize(Var y) {
  if (y.value().size() == 1) return reshape(y, {1});
  Var w = y.tape()->constant(projection_weights(y.shape()));
  return reduce_sum(mul(y, w));
}

}  // namespace detail

using TensorFn = std::function<Var(Tape&, Var)>;

/// Largest component-wise relative error between the reverse-mode gradient of f
/// at input and its central-difference estimate. Non-scalar outputs are reduced
/// with a fixed projection.
inline double grad_check(const TensorFn& f, const Tensor& input, double eps = 1e-5) {
  if (!(eps > 0.0)) throw ContractError("grad_check: eps must be positive");
  Tensor analytic;
  {
    Tape tape;
    Var x = tape.variable(input);
    Var loss = detail::scalarize(f(tape, x));
    tape.backward(loss);
    analytic = x.grad().empty() ? Tensor(input.shape(), 0.0) : x.grad();
  }
  auto eval = [&](const Tensor& at) {
    Tape tape;
    Var x = tape.constant(at);
    return detail::scalarize(f(tape, x)).value()[0];
  };
  double worst = 0.0;
  Tensor probe = input;
  for (std::size_t i = 0; i < input.size(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + eps;
    const double up = eval(probe);
    probe[i] = orig - eps;
    const double down = eval(probe);
    probe[i] = orig;
    worst = std::max(worst, relative_error(analytic[i], (up - down) / (2.0 * eps)));
  }
  return worst;
}

/// One coordinate to probe in a parameter-level check.
struct ParamProbe {
  Parameter* param;
  std::size_t index;
};

/// Same as grad_check but against model parameters. `loss` must build a scalar
/// on the given tape from the current parameter values.
inline double grad_check_params(const std::function<Var(Tape&)>& loss, const std::vector<ParamProbe>& probes,
                                double eps = 1e-5) {
  if (!(eps > 0.0)) throw ContractError("grad_check_params: eps must be positive");
  for (const auto& p : probes) p.param->zero_grad();
  {
    Tape tape;
    tape.backward(loss(tape));
  }
  std::vector<double> analytic;
  analytic.reserve(probes.size());
  for (const auto& p : probes) analytic.push_back(p.param->grad[p.index]);
  auto eval = [&] {
    Tape tape;
    return loss(tape).value()[0];
  };
  double worst = 0.0;
  for (std::size_t k = 0; k < probes.size(); ++k) {
    double& v = probes[k].param->value[probes[k].index];
    const double orig = v;
    v = orig + eps;
    const double up = eval();
    v = orig - eps;
    const double down = eval();
    v = orig;
    worst = std::max(worst, relative_error(analytic[k], (up - down) / (2.0 * eps)));
  }
  return worst;
}

}  // namespace pap
