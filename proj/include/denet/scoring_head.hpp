#pragma once

#include "denet/autodiff.hpp"
#include "denet/mstm.hpp"

namespace denet {

/// Per-segment anomaly scores in (0, 1).
using SegmentScores = Vector;

struct ClassifierConfig {
  int hidden1 = 512;
  int hidden2 = 32;
  double dropout = 0.6;

  void validate() const;
};

/// Three affine layers D -> 512 -> 32 -> 1 with ReLU after the first,
/// dropout after layer 1 (post-ReLU) and layer 2, sigmoid on the output.
/// Rows are scored independently.
class ScoringHead {
 public:
  ScoringHead(int dim, const ClassifierConfig& cfg, ParameterStore& store, Rng& rng);

  const ClassifierConfig& config() const { return cfg_; }
  std::size_t weight(int layer) const { return w_.at(static_cast<std::size_t>(layer)); }
  std::size_t bias(int layer) const { return b_.at(static_cast<std::size_t>(layer)); }

  /// Pre-sigmoid outputs, T x 1.
  ad::Var logits(ad::Var features, const ForwardContext& ctx) const;
  /// Scores, T x 1.
  ad::Var score(ad::Var features, const ForwardContext& ctx) const;

  SegmentScores score(const ParameterStore& store, const Matrix& features) const;

 private:
  int dim_;
  ClassifierConfig cfg_;
  std::vector<std::size_t> w_, b_;
};

}  // namespace denet
