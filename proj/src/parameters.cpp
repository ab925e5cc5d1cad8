#include "denet/parameters.hpp"

#include "denet/error.hpp"

#include <cmath>

namespace denet {

std::size_t ParameterStore::add(std::string name, Matrix init, bool decay) {
  for (const auto& p : params_) {
    if (p.name == name) throw ValidationError("duplicate parameter name: " + name);
  }
  params_.push_back(Parameter{std::move(name), std::move(init), decay});
  return params_.size() - 1;
}

std::size_t ParameterStore::index_of(const std::string& name) const {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (params_[i].name == name) return i;
  }
  throw ValidationError("unknown parameter: " + name);
}

std::size_t ParameterStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += static_cast<std::size_t>(p.value.size());
  return n;
}

GradientSet zero_gradients(const ParameterStore& store) {
  GradientSet g;
  g.reserve(store.size());
  for (const auto& p : store) g.push_back(Matrix::Zero(p.value.rows(), p.value.cols()));
  return g;
}

Matrix fan_in_uniform(Eigen::Index rows, Eigen::Index cols, Eigen::Index fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Matrix m(rows, cols);
  // Row-major fill so the draw order does not depend on Eigen's storage order.
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = dist(rng);
  return m;
}

bool all_finite(const Matrix& m) { return m.allFinite(); }

}  // namespace denet
