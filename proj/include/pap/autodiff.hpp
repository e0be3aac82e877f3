#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "pap/errors.hpp"
#include "pap/tensor.hpp"

namespace pap {

/// Learning-rate group. Backbone-analog layers train at their own rate.
enum class LrGroup { PretrainedAnalog, Fresh };

struct Parameter {
  Parameter(std::string name_, Tensor value_, LrGroup group_ = LrGroup::Fresh)
      : name(std::move(name_)), value(std::move(value_)), grad(value.shape(), 0.0), group(group_) {}

  void zero_grad() { grad.fill(0.0); }

  std::string name;
  Tensor value;
  Tensor grad;
  LrGroup group;
};

class Tape;

/// Handle to a node recorded on a Tape.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape() const noexcept { return tape_; }
  std::size_t id() const noexcept { return id_; }
  bool valid() const noexcept { return tape_ != nullptr; }

  inline const Tensor& value() const;
  inline const Shape& shape() const;
  inline std::size_t dim(std::size_t axis) const;
  inline bool requires_grad() const;
  /// Gradient w.r.t. this node after Tape::backward; empty if none reached it.
  inline const Tensor& grad() const;

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Append-only record of a forward computation.
///
/// Nodes are stored in a deque so references to earlier values stay valid
/// while later nodes are appended. Each tape is independent; there is no
/// global state, so separate threads may each drive their own tape.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  Var constant(Tensor value) { return push(std::move(value), false, {}, nullptr); }
  Var variable(Tensor value) { return push(std::move(value), true, {}, nullptr); }
  Var parameter(Parameter& p) { return push(p.value, true, {}, &p); }

  /// Records a computed value. The node requires a gradient when any input does;
  /// otherwise the backward function is dropped.
  Var record(Tensor value, std::initializer_list<Var> inputs, BackwardFn fn) {
    bool needs = false;
    for (const Var& v : inputs) {
      if (v.tape() != this) throw ContractError("operation mixes variables from different tapes");
      needs = needs || nodes_[v.id()].requires_grad;
    }
    return push(std::move(value), needs, needs ? std::move(fn) : BackwardFn{}, nullptr);
  }

  Var record(Tensor value, const std::vector<Var>& inputs, BackwardFn fn) {
    bool needs = false;
    for (const Var& v : inputs) {
      if (v.tape() != this) throw ContractError("operation mixes variables from different tapes");
      needs = needs || nodes_[v.id()].requires_grad;
    }
    return push(std::move(value), needs, needs ? std::move(fn) : BackwardFn{}, nullptr);
  }

  /// Reverse sweep from a scalar node. Parameter gradients accumulate across
  /// calls until the caller zeroes them.
  void backward(Var loss, double seed = 1.0) {
    if (loss.tape() != this) throw ContractError("backward: loss belongs to another tape");
    if (nodes_[loss.id()].value.size() != 1) {
      throw ContractError("backward: loss must be scalar, got shape " + shape_str(nodes_[loss.id()].value.shape()));
    }
    for (auto& n : nodes_) n.grad = Tensor();
    if (!nodes_[loss.id()].requires_grad) return;
    grad_buffer(loss.id())[0] = seed;
    for (std::size_t i = loss.id() + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.requires_grad || n.grad.empty()) continue;
      if (n.backward) n.backward(*this, i);
      if (n.param != nullptr) {
        auto dst = n.param->grad.data();
        auto src = n.grad.data();
        for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
      }
    }
  }

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  const Tensor& grad(std::size_t id) const { return nodes_[id].grad; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

  /// Gradient accumulator for a node, allocated as zeros on first use.
  Tensor& grad_buffer(std::size_t id) {
    Node& n = nodes_[id];
    if (n.grad.empty()) n.grad = Tensor(n.value.shape(), 0.0);
    return n.grad;
  }

  std::size_t size() const noexcept { return nodes_.size(); }
  void reset() { nodes_.clear(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    BackwardFn backward;
    Parameter* param = nullptr;
  };

  Var push(Tensor value, bool requires_grad, BackwardFn fn, Parameter* param) {
    nodes_.push_back(Node{std::move(value), Tensor(), requires_grad, std::move(fn), param});
    return Var(this, nodes_.size() - 1);
  }

  std::deque<Node> nodes_;
};

inline const Tensor& Var::value() const { return tape_->value(id_); }
inline const Shape& Var::shape() const { return tape_->value(id_).shape(); }
inline std::size_t Var::dim(std::size_t axis) const { return shape().at(axis); }
inline bool Var::requires_grad() const { return tape_->requires_grad(id_); }
inline const Tensor& Var::grad() const { return tape_->grad(id_); }

namespace detail {

// C[m x n] += A[m x k] * B[k x n]
inline void gemm_nn(std::size_t m, std::size_t k, std::size_t n, const double* a, const double* b, double* c) {
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      if (av == 0.0) continue;
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[m x n] += A[m x k] * B[n x k]^T
inline void gemm_nt(std::size_t m, std::size_t k, std::size_t n, const double* a, const double* b, double* c) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const double* brow = b + j * k;
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += arow[p] * brow[p];
      c[i * n + j] += s;
    }
  }
}

// C[m x n] += A[k x m]^T * B[k x n]
inline void gemm_tn(std::size_t m, std::size_t k, std::size_t n, const double* a, const double* b, double* c) {
  for (std::size_t p = 0; p < k; ++p) {
    const double* brow = b + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const double av = a[p * m + i];
      if (av == 0.0) continue;
      double* crow = c + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

inline void require_rank(const Var& v, std::size_t rank, const char* op) {
  if (v.shape().size() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                         shape_str(v.shape()));
  }
}

inline void require_same(const Var& a, const Var& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

inline void axpy(Tensor& dst, const Tensor& src, double s = 1.0) {
  auto d = dst.data();
  auto v = src.data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] += s * v[i];
}

}  // namespace detail

}  // namespace pap
