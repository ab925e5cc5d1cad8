#pragma once

// Shared test helpers and brute-force reference implementations. Nothing in
// here calls into the library's own versions of the same computation.

#include "denet/parameters.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

namespace denet::test {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("denet_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& p) const { return path_ / p; }

 private:
  std::filesystem::path path_;
};

inline Matrix random_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Matrix m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = n(rng);
  return m;
}

inline std::string read_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_text(const std::filesystem::path& p, const std::string& text) {
  std::filesystem::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out << text;
}

// ---- oracles -----------------------------------------------------------------

/// Plain triple loop.
inline Matrix naive_matmul(const Matrix& a, const Matrix& b) {
  Matrix c = Matrix::Zero(a.rows(), b.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < b.cols(); ++j) {
      double s = 0.0;
      for (Eigen::Index k = 0; k < a.cols(); ++k) s += a(i, k) * b(k, j);
      c(i, j) = s;
    }
  return c;
}

inline Matrix naive_affine(const Matrix& x, const Matrix& w, const Matrix& b) {
  Matrix y = naive_matmul(x, w);
  for (Eigen::Index i = 0; i < y.rows(); ++i)
    for (Eigen::Index j = 0; j < y.cols(); ++j) y(i, j) += b(0, j);
  return y;
}

/// Row-wise layer norm without affine.
inline Matrix naive_layer_norm(const Matrix& x, double eps = 1e-5) {
  Matrix y(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    double mean = 0.0;
    for (Eigen::Index j = 0; j < x.cols(); ++j) mean += x(i, j);
    mean /= static_cast<double>(x.cols());
    double var = 0.0;
    for (Eigen::Index j = 0; j < x.cols(); ++j) var += (x(i, j) - mean) * (x(i, j) - mean);
    var /= static_cast<double>(x.cols());
    for (Eigen::Index j = 0; j < x.cols(); ++j) y(i, j) = (x(i, j) - mean) / std::sqrt(var + eps);
  }
  return y;
}

inline double naive_cosine(const Matrix& x, Eigen::Index a, Eigen::Index b) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    dot += x(a, j) * x(b, j);
    na += x(a, j) * x(a, j);
    nb += x(b, j) * x(b, j);
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

/// Exhaustive positive/negative pair count; ties count one half.
inline double brute_auc(const std::vector<double>& s, const std::vector<int>& y) {
  double wins = 0.0;
  double pos = 0.0, neg = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) (y[i] == 1 ? pos : neg) += 1.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (y[i] != 1) continue;
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (y[j] != 0) continue;
      if (s[i] > s[j]) wins += 1.0;
      else if (s[i] == s[j]) wins += 0.5;
    }
  }
  return wins / (pos * neg);
}

/// For each positive: its rank r in (score desc, index asc) order and the
/// number of positives at ranks <= r. Precisions are summed in rank order.
inline double brute_ap(const std::vector<double>& s, const std::vector<int>& y) {
  auto ahead = [&](std::size_t j, std::size_t i) { return s[j] > s[i] || (s[j] == s[i] && j <= i); };
  std::vector<std::pair<std::size_t, double>> hits;  // (rank, precision)
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (y[i] != 1) continue;
    std::size_t rank = 0, tp = 0;
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (ahead(j, i)) {
        ++rank;
        if (y[j] == 1) ++tp;
      }
    }
    hits.emplace_back(rank, static_cast<double>(tp) / static_cast<double>(rank));
  }
  std::sort(hits.begin(), hits.end());
  double sum = 0.0;
  for (const auto& h : hits) sum += h.second;
  return sum / static_cast<double>(hits.size());
}

/// Segment of frame j: the t whose span [t*F/T, (t+1)*F/T) contains j,
/// found by scanning spans rather than by the closed form.
inline std::size_t frame_owner(std::int64_t j, std::int64_t segments, std::int64_t frames) {
  for (std::int64_t t = 0; t < segments; ++t) {
    // smallest frame index mapped to t and to t+1
    std::int64_t lo = (t * frames + segments - 1) / segments;
    std::int64_t hi = ((t + 1) * frames + segments - 1) / segments;
    if (j >= lo && j < hi) return static_cast<std::size_t>(t);
  }
  return static_cast<std::size_t>(segments - 1);
}

}  // namespace denet::test
