#pragma once

// Loop-level re-implementation of the multi-scale block, reading parameters
// straight from the store. Used as the compositional oracle.

#include "denet/mstm.hpp"
#include "support.hpp"

#include <cmath>
#include <vector>

namespace denet::test {

class MstmOracle {
 public:
  MstmOracle(const Mstm& m, const ParameterStore& store) : m_(m), store_(store) {}

  /// Output row j is the affine map of rows jk..jk+k-1 laid side by side.
  static Matrix conv(const Matrix& x, const Matrix& w, const Matrix& b, Eigen::Index k) {
    const Eigen::Index d = x.cols();
    Matrix out(x.rows() / k, w.cols());
    for (Eigen::Index j = 0; j < out.rows(); ++j) {
      for (Eigen::Index o = 0; o < w.cols(); ++o) {
        double s = b(0, o);
        for (Eigen::Index r = 0; r < k; ++r)
          for (Eigen::Index c = 0; c < d; ++c) s += x(j * k + r, c) * w(r * d + c, o);
        out(j, o) = s;
      }
    }
    return out;
  }

  static Matrix layer_norm(const Matrix& x, const Matrix& g, const Matrix& b) {
    Matrix y = naive_layer_norm(x);
    for (Eigen::Index i = 0; i < y.rows(); ++i)
      for (Eigen::Index j = 0; j < y.cols(); ++j) y(i, j) = y(i, j) * g(0, j) + b(0, j);
    return y;
  }

  Matrix attention(const Matrix& h, const Mstm::ScaleParams& p) const {
    const Eigen::Index d = h.cols(), heads = m_.config().heads, dh = d / heads, n = h.rows();
    const Matrix qkv = naive_affine(h, P(p.in_w), P(p.in_b));
    Matrix merged(n, d);
    for (Eigen::Index hd = 0; hd < heads; ++hd) {
      for (Eigen::Index i = 0; i < n; ++i) {
        std::vector<double> logits(static_cast<std::size_t>(n));
        double top = -INFINITY;
        for (Eigen::Index j = 0; j < n; ++j) {
          double dot = 0.0;
          for (Eigen::Index c = 0; c < dh; ++c) dot += qkv(i, hd * dh + c) * qkv(j, d + hd * dh + c);
          logits[static_cast<std::size_t>(j)] = dot / std::sqrt(static_cast<double>(dh));
          top = std::max(top, logits[static_cast<std::size_t>(j)]);
        }
        double z = 0.0;
        for (auto& l : logits) z += (l = std::exp(l - top));
        for (Eigen::Index c = 0; c < dh; ++c) {
          double s = 0.0;
          for (Eigen::Index j = 0; j < n; ++j) s += logits[static_cast<std::size_t>(j)] / z * qkv(j, 2 * d + hd * dh + c);
          merged(i, hd * dh + c) = s;
        }
      }
    }
    return naive_affine(merged, P(p.out_w), P(p.out_b));
  }

  Matrix encode(const Matrix& xbar, int s) const {
    const auto& p = m_.scale_params(s);
    const Matrix h = xbar + P(p.pos);
    const Matrix h1 = layer_norm(h + attention(h, p), P(p.norm1_g), P(p.norm1_b));
    Matrix hidden = naive_affine(h1, P(p.fc1_w), P(p.fc1_b));
    hidden = hidden.cwiseMax(0.0);
    return layer_norm(h1 + naive_affine(hidden, P(p.fc2_w), P(p.fc2_b)), P(p.norm2_g), P(p.norm2_b));
  }

  static Matrix align(const Matrix& x, Eigen::Index segments) {
    Matrix out(segments, x.cols());
    const Eigen::Index k = segments / x.rows();
    for (Eigen::Index i = 0; i < segments; ++i) out.row(i) = x.row(i / k);
    return out;
  }

  Matrix forward(const Matrix& x) const {
    const int scales = m_.config().scales;
    const Eigen::Index d = x.cols();
    Matrix cat(x.rows(), scales * d);
    for (int s = 1; s <= scales; ++s) {
      const auto& p = m_.scale_params(s);
      const Matrix local = conv(x, P(p.conv_w), P(p.conv_b), Eigen::Index{1} << (s - 1));
      cat.middleCols((s - 1) * d, d) = align(encode(local, s), x.rows());
    }
    return naive_affine(cat, P(m_.aggregate_weight()), P(m_.aggregate_bias()));
  }

 private:
  const Matrix& P(std::size_t i) const { return store_[i].value; }

  const Mstm& m_;
  const ParameterStore& store_;
};

}  // namespace denet::test
