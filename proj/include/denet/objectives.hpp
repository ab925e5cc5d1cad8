#pragma once

// MIL ranking loss on scores, the feature-variation ranking loss and their
// weighted combination over the un-erased and erased passes.

#include "denet/autodiff.hpp"
#include "denet/scoring_head.hpp"

#include <span>
#include <vector>

namespace denet {

struct LossWeights {
  double alpha1 = 1.0;   // score ranking term
  double alpha2 = 1e-4;  // feature variation term
  double lambda1 = 1.0;  // un-erased pass
  double lambda2 = 1.0;  // erased pass

  void validate() const;
};

struct LossReport {
  double l_score_u = 0.0;
  double l_fea_u = 0.0;
  double l_u = 0.0;
  double l_score_e = 0.0;
  double l_fea_e = 0.0;
  double l_e = 0.0;
  double total = 0.0;
};

/// max(0, 1 - max(scores_a) + max(scores_n)); inputs are T x 1.
ad::Var score_ranking_loss(ad::Var scores_a, ad::Var scores_n);
double score_ranking_loss(const SegmentScores& scores_a, const SegmentScores& scores_n);

/// 1 - cos(x_{t-k}, x_t) for t = k..T-1 (0-based), k = T/2, as (T-k) x 1.
/// T must be even. A zero-norm row gives variation 1.
ad::Var local_variation(ad::Var features);
Vector local_variation(const Matrix& features);

/// max(0, 1 - max var(abnormal) + max var(normal)).
ad::Var feature_variation_loss(ad::Var features_a, ad::Var features_n);
double feature_variation_loss(const Matrix& features_a, const Matrix& features_n);

/// Outputs of one video in one pass.
struct VideoPass {
  ad::Var features;  // X-hat
  ad::Var scores;
};

struct CombinedLoss {
  ad::Var total;
  LossReport report;
};

/// i-th abnormal is paired with i-th normal and each term is averaged over
/// pairs. An empty erased pass contributes zero (single-pass training).
/// Throws DatasetError when the halves are unequal.
CombinedLoss combined_loss(std::span<const VideoPass> abnormal_u, std::span<const VideoPass> normal_u,
                           std::span<const VideoPass> abnormal_e, std::span<const VideoPass> normal_e,
                           const LossWeights& w);

/// Plain-value outputs of one pass over a batch.
struct BatchPass {
  std::vector<Matrix> abnormal_features, normal_features;
  std::vector<SegmentScores> abnormal_scores, normal_scores;
};

LossReport combined_loss(const BatchPass& unerased, const BatchPass& erased, const LossWeights& w);

}  // namespace denet
