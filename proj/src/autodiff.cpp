#include "denet/autodiff.hpp"

#include "denet/error.hpp"

#include <cmath>
#include <string>

namespace denet::ad {

namespace {

void require_same_tape(Var a, Var b) {
  if (a.tape != b.tape || a.tape == nullptr) throw ShapeError("variables live on different tapes");
}

void require_shape(bool ok, const char* op) {
  if (!ok) throw ShapeError(std::string("shape mismatch in ") + op);
}

}  // namespace

const Matrix& Var::value() const { return tape->value(id); }

double Var::scalar() const {
  const Matrix& v = value();
  if (v.rows() != 1 || v.cols() != 1) throw ShapeError("scalar() on non-1x1 variable");
  return v(0, 0);
}

const Matrix& Tape::value(std::size_t id) const {
  const Node& n = nodes_[id];
  return n.ext ? *n.ext : n.own;
}

Var Tape::constant(Matrix value) {
  Node n;
  n.own = std::move(value);
  nodes_.push_back(std::move(n));
  return Var{this, nodes_.size() - 1};
}

Var Tape::param(std::size_t index) {
  if (store_ == nullptr || index >= store_->size()) throw ShapeError("parameter index out of range");
  if (auto it = param_nodes_.find(index); it != param_nodes_.end()) return Var{this, it->second};
  Node n;
  n.ext = &(*store_)[index].value;
  n.requires_grad = grads_ != nullptr;
  n.param_index = static_cast<std::ptrdiff_t>(index);
  nodes_.push_back(std::move(n));
  param_nodes_.emplace(index, nodes_.size() - 1);
  return Var{this, nodes_.size() - 1};
}

Var Tape::push(Matrix value, std::vector<std::size_t> parents, Backward backward) {
  Node n;
  n.own = std::move(value);
  for (std::size_t p : parents) n.requires_grad = n.requires_grad || nodes_[p].requires_grad;
  n.parents = std::move(parents);
  if (n.requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var{this, nodes_.size() - 1};
}

void Tape::accumulate(std::size_t id, const Matrix& g) {
  Node& n = nodes_[id];
  if (!n.requires_grad) return;
  if (n.grad.size() == 0) {
    n.grad = g;
  } else {
    n.grad += g;
  }
}

void Tape::backward(Var root, double seed) {
  if (root.tape != this) throw ShapeError("backward root from another tape");
  if (done_) throw Error("backward() called twice on one tape");
  done_ = true;
  const Matrix& rv = value(root.id);
  if (rv.rows() != 1 || rv.cols() != 1) throw ShapeError("backward root must be 1x1");
  if (!nodes_[root.id].requires_grad) return;
  nodes_[root.id].grad = Matrix::Constant(1, 1, seed);
  for (std::size_t i = root.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.grad.size() == 0) continue;
    if (n.backward) n.backward(*this, i);
    if (n.param_index >= 0 && grads_ != nullptr) {
      (*grads_)[static_cast<std::size_t>(n.param_index)] += n.grad;
    }
  }
}

// ---------------------------------------------------------------------------

Var matmul(Var a, Var b) {
  require_same_tape(a, b);
  require_shape(a.cols() == b.rows(), "matmul");
  Matrix out = a.value() * b.value();
  return a.tape->push(std::move(out), {a.id, b.id}, [ai = a.id, bi = b.id](Tape& t, std::size_t self) {
    const Matrix& g = t.out_grad(self);
    if (t.requires_grad(ai)) t.accumulate(ai, g * t.value(bi).transpose());
    if (t.requires_grad(bi)) t.accumulate(bi, t.value(ai).transpose() * g);
  });
}

Var add(Var a, Var b) {
  require_same_tape(a, b);
  require_shape(a.rows() == b.rows() && a.cols() == b.cols(), "add");
  Matrix out = a.value() + b.value();
  return a.tape->push(std::move(out), {a.id, b.id}, [ai = a.id, bi = b.id](Tape& t, std::size_t self) {
    const Matrix& g = t.out_grad(self);
    t.accumulate(ai, g);
    t.accumulate(bi, g);
  });
}

Var sub(Var a, Var b) {
  require_same_tape(a, b);
  require_shape(a.rows() == b.rows() && a.cols() == b.cols(), "sub");
  Matrix out = a.value() - b.value();
  return a.tape->push(std::move(out), {a.id, b.id}, [ai = a.id, bi = b.id](Tape& t, std::size_t self) {
    const Matrix& g = t.out_grad(self);
    t.accumulate(ai, g);
    if (t.requires_grad(bi)) t.accumulate(bi, -g);
  });
}

Var add_row(Var a, Var b) {
  require_same_tape(a, b);
  require_shape(b.rows() == 1 && a.cols() == b.cols(), "add_row");
  Matrix out = a.value().rowwise() + b.value().row(0);
  return a.tape->push(std::move(out), {a.id, b.id}, [ai = a.id, bi = b.id](Tape& t, std::size_t self) {
    const Matrix& g = t.out_grad(self);
    t.accumulate(ai, g);
    if (t.requires_grad(bi)) t.accumulate(bi, g.colwise().sum());
  });
}

Var scale(Var a, double c) { return affine(a, c, 0.0); }

Var affine(Var a, double c, double offset) {
  Matrix out = (c * a.value()).array() + offset;
  return a.tape->push(std::move(out), {a.id}, [ai = a.id, c](Tape& t, std::size_t self) {
    t.accumulate(ai, c * t.out_grad(self));
  });
}

Var relu(Var a) {
  Matrix out = a.value().cwiseMax(0.0);
  return a.tape->push(std::move(out), {a.id}, [ai = a.id](Tape& t, std::size_t self) {
    const Matrix& x = t.value(ai);
    Matrix g = (x.array() > 0.0).select(t.out_grad(self), 0.0);
    t.accumulate(ai, g);
  });
}

Var sigmoid(Var a) {
  Matrix out = a.value().unaryExpr([](double x) {
    // Split form keeps exp() from overflowing for large |x|.
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
  });
  return a.tape->push(std::move(out), {a.id}, [ai = a.id](Tape& t, std::size_t self) {
    const Matrix& y = t.value(self);
    Matrix g = t.out_grad(self).array() * y.array() * (1.0 - y.array());
    t.accumulate(ai, g);
  });
}

Var mask_mul(Var a, const Matrix& mask) {
  require_shape(a.rows() == mask.rows() && a.cols() == mask.cols(), "mask_mul");
  Matrix out = a.value().cwiseProduct(mask);
  return a.tape->push(std::move(out), {a.id}, [ai = a.id, mask](Tape& t, std::size_t self) {
    t.accumulate(ai, t.out_grad(self).cwiseProduct(mask));
  });
}

Var transpose(Var a) {
  Matrix out = a.value().transpose();
  return a.tape->push(std::move(out), {a.id}, [ai = a.id](Tape& t, std::size_t self) {
    t.accumulate(ai, t.out_grad(self).transpose());
  });
}

// ---------------------------------------------------------------------------

Var group_rows(Var a, Eigen::Index k) {
  const Matrix& x = a.value();
  if (k < 1 || x.rows() % k != 0) throw ShapeError("group_rows: row count not divisible by group size");
  const Eigen::Index rows = x.rows() / k;
  const Eigen::Index d = x.cols();
  Matrix out(rows, k * d);
  for (Eigen::Index j = 0; j < rows; ++j)
    for (Eigen::Index i = 0; i < k; ++i) out.block(j, i * d, 1, d) = x.row(j * k + i);
  return a.tape->push(std::move(out), {a.id}, [ai = a.id, k, rows, d](Tape& t, std::size_t self) {
    const Matrix& g = t.out_grad(self);
    Matrix gx(rows * k, d);
    for (Eigen::Index j = 0; j < rows; ++j)
      for (Eigen::Index i = 0; i < k; ++i) gx.row(j * k + i) = g.block(j, i * d, 1, d);
    t.accumulate(ai, gx);
  });
}

Var repeat_rows(Var a, Eigen::Index k) {
  if (k < 1) throw ShapeError("repeat_rows: factor must be positive");
  const Matrix& x = a.value();
  const Eigen::Index rows = x.rows();
  Matrix out(rows * k, x.cols());
  for (Eigen::Index r = 0; r < rows * k; ++r) out.row(r) = x.row(r / k);
  return a.tape->push(std::move(out), {a.id}, [ai = a.id, k, rows](Tape& t, std::size_t self) {
    const Matrix& g = t.out_grad(self);
    Matrix gx = Matrix::Zero(rows, g.cols());
    for (Eigen::Index r = 0; r < rows * k; ++r) gx.row(r / k) += g.row(r);
    t.accumulate(ai, gx);
  });
}

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const Eigen::Index rows = parts.front().rows();
  Eigen::Index cols = 0;
  std::vector<std::size_t> ids;
  std::vector<Eigen::Index> widths;
  for (const Var& p : parts) {
    require_same_tape(parts.front(), p);
    require_shape(p.rows() == rows, "concat_cols");
    cols += p.cols();
    ids.push_back(p.id);
    widths.push_back(p.cols());
  }
  Matrix out(rows, cols);
  Eigen::Index c = 0;
  for (const Var& p : parts) {
    out.middleCols(c, p.cols()) = p.value();
    c += p.cols();
  }
  return parts.front().tape->push(std::move(out), ids, [ids, widths](Tape& t, std::size_t self) {
    const Matrix& g = t.out_grad(self);
    Eigen::Index c = 0;
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (t.requires_grad(ids[i])) t.accumulate(ids[i], g.middleCols(c, widths[i]));
      c += widths[i];
    }
  });
}

Var slice_cols(Var a, Eigen::Index start, Eigen::Index count) {
  require_shape(start >= 0 && count >= 0 && start + count <= a.cols(), "slice_cols");
  Matrix out = a.value().middleCols(start, count);
  return a.tape->push(std::move(out), {a.id}, [ai = a.id, start, count](Tape& t, std::size_t self) {
    const Matrix& x = t.value(ai);
    Matrix gx = Matrix::Zero(x.rows(), x.cols());
    gx.middleCols(start, count) = t.out_grad(self);
    t.accumulate(ai, gx);
  });
}

// ---------------------------------------------------------------------------

Var softmax_rows(Var a) {
  const Matrix& x = a.value();
  Matrix out(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double m = x.row(r).maxCoeff();
    out.row(r) = (x.row(r).array() - m).exp();
    out.row(r) /= out.row(r).sum();
  }
  return a.tape->push(std::move(out), {a.id}, [ai = a.id](Tape& t, std::size_t self) {
    const Matrix& y = t.value(self);
    const Matrix& g = t.out_grad(self);
    const Vector dot = g.cwiseProduct(y).rowwise().sum();
    Matrix gx = y.array() * (g.colwise() - dot).array();
    t.accumulate(ai, gx);
  });
}

Var layer_norm(Var a, Var gain, Var bias, double eps) {
  require_same_tape(a, gain);
  require_same_tape(a, bias);
  const Matrix& x = a.value();
  const Eigen::Index d = x.cols();
  require_shape(gain.rows() == 1 && gain.cols() == d && bias.rows() == 1 && bias.cols() == d, "layer_norm");
  Matrix xhat(x.rows(), d);
  Vector inv_std(x.rows());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double mu = x.row(r).mean();
    const double var = (x.row(r).array() - mu).square().mean();
    inv_std(r) = 1.0 / std::sqrt(var + eps);
    xhat.row(r) = (x.row(r).array() - mu) * inv_std(r);
  }
  Matrix out = (xhat.array().rowwise() * gain.value().row(0).array()).rowwise() + bias.value().row(0).array();
  return a.tape->push(
      std::move(out), {a.id, gain.id, bias.id},
      [ai = a.id, gi = gain.id, bi = bias.id, xhat, inv_std](Tape& t, std::size_t self) {
        const Matrix& g = t.out_grad(self);
        if (t.requires_grad(gi)) t.accumulate(gi, g.cwiseProduct(xhat).colwise().sum());
        if (t.requires_grad(bi)) t.accumulate(bi, g.colwise().sum());
        if (!t.requires_grad(ai)) return;
        const Matrix dxhat = g.array().rowwise() * t.value(gi).row(0).array();
        const Vector mean_dxhat = dxhat.rowwise().mean();
        const Vector mean_dxhat_xhat = dxhat.cwiseProduct(xhat).rowwise().mean();
        Matrix gx(g.rows(), g.cols());
        for (Eigen::Index r = 0; r < g.rows(); ++r) {
          gx.row(r) = inv_std(r) *
                      (dxhat.row(r).array() - mean_dxhat(r) - xhat.row(r).array() * mean_dxhat_xhat(r)).matrix();
        }
        t.accumulate(ai, gx);
      });
}

// ---------------------------------------------------------------------------

Var max_all(Var a) {
  const Matrix& x = a.value();
  if (x.size() == 0) throw DomainError("max over empty matrix");
  Eigen::Index br = 0, bc = 0;
  for (Eigen::Index r = 0; r < x.rows(); ++r)
    for (Eigen::Index c = 0; c < x.cols(); ++c)
      if (x(r, c) > x(br, bc)) {
        br = r;
        bc = c;
      }
  Matrix out = Matrix::Constant(1, 1, x(br, bc));
  return a.tape->push(std::move(out), {a.id}, [ai = a.id, br, bc](Tape& t, std::size_t self) {
    const Matrix& x = t.value(ai);
    Matrix gx = Matrix::Zero(x.rows(), x.cols());
    gx(br, bc) = t.out_grad(self)(0, 0);
    t.accumulate(ai, gx);
  });
}

Var shifted_row_cosine(Var a, Eigen::Index k) {
  const Matrix& x = a.value();
  if (k < 0 || k >= x.rows()) throw ShapeError("shifted_row_cosine: offset out of range");
  const Eigen::Index n = x.rows() - k;
  Matrix out(n, 1);
  Vector norm = x.rowwise().norm();
  for (Eigen::Index i = 0; i < n; ++i) {
    const double nu = norm(i), nv = norm(i + k);
    out(i, 0) = (nu == 0.0 || nv == 0.0) ? 0.0 : x.row(i).dot(x.row(i + k)) / (nu * nv);
  }
  return a.tape->push(std::move(out), {a.id}, [ai = a.id, k, n, norm](Tape& t, std::size_t self) {
    const Matrix& x = t.value(ai);
    const Matrix& cosv = t.value(self);
    const Matrix& g = t.out_grad(self);
    Matrix gx = Matrix::Zero(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < n; ++i) {
      const double nu = norm(i), nv = norm(i + k);
      if (nu == 0.0 || nv == 0.0) continue;
      const double c = cosv(i, 0);
      const double gi = g(i, 0);
      gx.row(i) += gi * (x.row(i + k) / (nu * nv) - c * x.row(i) / (nu * nu));
      gx.row(i + k) += gi * (x.row(i) / (nu * nv) - c * x.row(i + k) / (nv * nv));
    }
    t.accumulate(ai, gx);
  });
}

Var hinge(Var a) {
  const double x = a.scalar();
  Matrix out = Matrix::Constant(1, 1, x > 0.0 ? x : 0.0);
  return a.tape->push(std::move(out), {a.id}, [ai = a.id, active = x > 0.0](Tape& t, std::size_t self) {
    t.accumulate(ai, active ? t.out_grad(self) : Matrix::Zero(1, 1));
  });
}

Var sum(const std::vector<Var>& terms) {
  if (terms.empty()) throw DomainError("sum of no terms");
  double s = 0.0;
  std::vector<std::size_t> ids;
  for (const Var& v : terms) {
    require_same_tape(terms.front(), v);
    s += v.scalar();
    ids.push_back(v.id);
  }
  return terms.front().tape->push(Matrix::Constant(1, 1, s), ids, [ids](Tape& t, std::size_t self) {
    for (std::size_t id : ids) t.accumulate(id, t.out_grad(self));
  });
}

}  // namespace denet::ad
