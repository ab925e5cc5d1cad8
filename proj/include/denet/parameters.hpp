#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace denet {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;
using Rng = std::mt19937_64;

/// A named learnable tensor. `decay` marks tensors that receive decoupled
/// weight decay (affine weights only).
struct Parameter {
  std::string name;
  Matrix value;
  bool decay = false;
};

/// Ordered collection of every learnable tensor in a model. Insertion order
/// is the canonical order used by checkpoints and optimizers.
class ParameterStore {
 public:
  std::size_t add(std::string name, Matrix init, bool decay);

  std::size_t size() const { return params_.size(); }
  Parameter& operator[](std::size_t i) { return params_[i]; }
  const Parameter& operator[](std::size_t i) const { return params_[i]; }

  /// Index of the parameter called `name`; throws ValidationError if absent.
  std::size_t index_of(const std::string& name) const;

  std::size_t scalar_count() const;

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

 private:
  std::vector<Parameter> params_;
};

/// One gradient buffer per parameter, same shapes as the store.
using GradientSet = std::vector<Matrix>;

GradientSet zero_gradients(const ParameterStore& store);

/// Fan-in scaled uniform init, U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
Matrix fan_in_uniform(Eigen::Index rows, Eigen::Index cols, Eigen::Index fan_in, Rng& rng);

bool all_finite(const Matrix& m);

}  // namespace denet
