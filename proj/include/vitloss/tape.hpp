#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "vitloss/tensor.hpp"

// Reverse-mode differentiation over whole tensors.
//
// A Tape records primitive operations in execution order. Each node keeps its
// output value plus whatever the operation saved for its reverse rule, so the
// reverse sweep never recomputes the forward. Replaying the tape reruns every
// recorded forward on the current leaf values; with unchanged leaves the
// replayed values are bitwise equal to the recorded ones.
namespace vitloss::ad {

template <Real T>
class Tape;

/// Handle to a node on a tape.
template <Real T>
class Var {
 public:
  Var() = default;
  Var(Tape<T>* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape<T>& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  const Tensor<T>& value() const;
  const Shape& shape() const { return value().shape(); }
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape<T>* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// A primitive with a forward rule and a reverse (vector-Jacobian) rule.
///
/// `backward` adds the contribution of `grad_output` into every non-null
/// entry of `grad_inputs`; null entries belong to inputs that do not need a
/// gradient.
template <Real T>
class Op {
 public:
  virtual ~Op() = default;
  virtual const char* name() const = 0;
  virtual Tensor<T> forward(std::span<const Tensor<T>* const> inputs) = 0;
  virtual void backward(std::span<const Tensor<T>* const> inputs, const Tensor<T>& output,
                        const Tensor<T>& grad_output,
                        std::span<Tensor<T>* const> grad_inputs) const = 0;
};

template <Real T>
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf that never receives a gradient.
  Var<T> constant(Tensor<T> value);
  /// Leaf marked differentiable; `backward` returns its gradient.
  Var<T> input(Tensor<T> value);

  Var<T> record(std::unique_ptr<Op<T>> op, std::vector<Var<T>> inputs);

  const Tensor<T>& value(Var<T> v) const { return nodes_.at(v.id()).value; }
  bool requires_grad(Var<T> v) const { return nodes_.at(v.id()).requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  /// Replace the value of a leaf (same shape). Call `replay` to propagate.
  void set_leaf(Var<T> leaf, Tensor<T> value);

  /// Re-run every recorded forward in recording order.
  void replay();

  /// Reverse sweep from a scalar node. Returns the gradients of all nodes
  /// created with `input`, in creation order.
  std::vector<Tensor<T>> backward(Var<T> loss);

  /// Gradient of any differentiable node after `backward`; zeros if no
  /// gradient reached it.
  Tensor<T> grad(Var<T> v) const;

  /// Node ids in the order the last reverse sweep visited them.
  const std::vector<std::size_t>& last_sweep() const { return sweep_; }

  std::string op_name(std::size_t id) const;

 private:
  struct Node {
    Tensor<T> value;
    std::unique_ptr<Op<T>> op;  // null for leaves
    std::vector<std::size_t> inputs;
    bool requires_grad = false;
    bool is_input = false;
  };

  Var<T> add_leaf(Tensor<T> value, bool differentiable);
  Tensor<T> run_forward(Node& node);

  std::vector<Node> nodes_;
  std::vector<Tensor<T>> grads_;
  std::vector<std::size_t> sweep_;
};

template <Real T>
const Tensor<T>& Var<T>::value() const {
  return tape_->value(*this);
}

// ---- primitive operations -------------------------------------------------

template <Real T> Var<T> matmul(Var<T> a, Var<T> b);
/// a * b^T
template <Real T> Var<T> matmul_nt(Var<T> a, Var<T> b);
template <Real T> Var<T> add(Var<T> a, Var<T> b);
template <Real T> Var<T> sub(Var<T> a, Var<T> b);
/// Adds a length-cols vector to every row of a matrix.
template <Real T> Var<T> add_row(Var<T> m, Var<T> row);
template <Real T> Var<T> scale(Var<T> x, T factor);
template <Real T> Var<T> add_scalar(Var<T> x, T c);
template <Real T> Var<T> layer_norm(Var<T> x, Var<T> gamma, Var<T> beta, T eps);
template <Real T> Var<T> softmax_rows(Var<T> x);
template <Real T> Var<T> gelu(Var<T> x);
/// Elementwise |x|; subgradient 0 at 0.
template <Real T> Var<T> abs(Var<T> x);
template <Real T> Var<T> square(Var<T> x);
/// Elementwise |x|^p for p >= 1; subgradient 0 at 0.
template <Real T> Var<T> abs_pow(Var<T> x, T p);
/// Elementwise x^e for x >= 0 and 0 < e <= 1; the derivative at x = 0 is
/// taken as 0.
template <Real T> Var<T> root_pow(Var<T> x, T e);
/// Elementwise sqrt(x^2 + eps^2).
template <Real T> Var<T> charbonnier(Var<T> x, T eps);
template <Real T> Var<T> log(Var<T> x);
/// Sum of all elements, left to right; result has shape [1].
template <Real T> Var<T> sum(Var<T> x);
template <Real T> Var<T> mean(Var<T> x);
/// Per-row sums of a matrix; result has shape [rows].
template <Real T> Var<T> row_sums(Var<T> m);
/// Stable ascending sort of each row; gradients follow the permutation.
template <Real T> Var<T> sort_rows(Var<T> m);
template <Real T> Var<T> slice_cols(Var<T> m, std::size_t start, std::size_t width);
template <Real T> Var<T> concat_cols(const std::vector<Var<T>>& parts);
template <Real T> Var<T> concat_rows(const std::vector<Var<T>>& parts);
template <Real T> Var<T> gather_rows(Var<T> m, std::vector<std::size_t> rows);
template <Real T> Var<T> reshape(Var<T> x, Shape shape);

}  // namespace vitloss::ad
