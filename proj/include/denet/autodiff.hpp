#pragma once

// Minimal reverse-mode automatic differentiation over dense double matrices.
//
// A Tape records every operation applied to its variables. Calling
// backward() on a 1x1 result walks the record in reverse creation order and
// accumulates gradients. Parameters from a ParameterStore enter the tape by
// reference and their gradients are added into a caller-owned GradientSet,
// so one tape can be used per worker while sharing a single store.
//
// Conventions: rows are time steps, columns are features. Affine maps are
// written x * W + b with W of shape (in x out) and b a 1 x out row.

#include "denet/parameters.hpp"

#include <cstddef>
#include <deque>
#include <functional>
#include <unordered_map>
#include <vector>

namespace denet::ad {

class Tape;

/// Handle to a node on a tape. Cheap to copy.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Matrix& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  /// Convenience for 1x1 results.
  double scalar() const;
};

class Tape {
 public:
  Tape() = default;
  /// `grads` receives parameter gradients on backward(); may be null when
  /// the tape is only used for evaluation.
  Tape(const ParameterStore* store, GradientSet* grads) : store_(store), grads_(grads) {}

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix value);
  Var param(std::size_t index);

  /// Reverse sweep from `root`, which must be 1x1. `seed` scales the
  /// output gradient. May be called once per tape.
  void backward(Var root, double seed = 1.0);

  const Matrix& value(std::size_t id) const;
  /// Gradient of the last backward() root w.r.t. node `id`; empty matrix if
  /// the node was not reached.
  const Matrix& grad(std::size_t id) const { return nodes_[id].grad; }
  std::size_t size() const { return nodes_.size(); }

  // Internal API used by the operators.
  using Backward = std::function<void(Tape&, std::size_t)>;
  Var push(Matrix value, std::vector<std::size_t> parents, Backward backward);
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  void accumulate(std::size_t id, const Matrix& g);
  const Matrix& out_grad(std::size_t id) const { return nodes_[id].grad; }

 private:
  struct Node {
    Matrix own;
    const Matrix* ext = nullptr;
    Matrix grad;
    std::vector<std::size_t> parents;
    Backward backward;
    bool requires_grad = false;
    std::ptrdiff_t param_index = -1;
  };

  const ParameterStore* store_ = nullptr;
  GradientSet* grads_ = nullptr;
  std::deque<Node> nodes_;
  std::unordered_map<std::size_t, std::size_t> param_nodes_;
  bool done_ = false;
};

// ---- elementwise / linear algebra -----------------------------------------

Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
/// a + b with b a 1 x cols row broadcast over rows.
Var add_row(Var a, Var b);
Var scale(Var a, double c);
/// c * a + offset, elementwise.
Var affine(Var a, double c, double offset);
Var relu(Var a);
Var sigmoid(Var a);
/// Elementwise product with a constant mask (dropout).
Var mask_mul(Var a, const Matrix& mask);
Var transpose(Var a);

// ---- shape -----------------------------------------------------------------

/// (T x D) -> (T/k x kD); output row j is rows jk..jk+k-1 laid side by side.
Var group_rows(Var a, Eigen::Index k);
/// (L x D) -> (Lk x D); each row repeated k consecutive times.
Var repeat_rows(Var a, Eigen::Index k);
Var concat_cols(const std::vector<Var>& parts);
Var slice_cols(Var a, Eigen::Index start, Eigen::Index count);

// ---- normalization / attention ------------------------------------------

Var softmax_rows(Var a);
/// Row-wise LayerNorm with gain and bias rows (1 x D).
Var layer_norm(Var a, Var gain, Var bias, double eps = 1e-5);

// ---- reductions used by the objectives ------------------------------------

/// Maximum over all entries as a 1x1. Gradient goes to the first maximal
/// entry in row-major order.
Var max_all(Var a);
/// For t = k..T-1: cos(row t-k, row t), returned as (T-k) x 1. A pair with a
/// zero-norm row yields cosine 0 and zero gradient.
Var shifted_row_cosine(Var a, Eigen::Index k);
/// max(0, x) for a 1x1 input; gradient 0 at x <= 0.
Var hinge(Var a);
/// Sum of 1x1 vars, in the given order.
Var sum(const std::vector<Var>& terms);

}  // namespace denet::ad
