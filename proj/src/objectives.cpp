#include "denet/objectives.hpp"

#include "denet/error.hpp"

#include <cmath>
#include <string>

namespace denet {

void LossWeights::validate() const {
  for (double v : {alpha1, alpha2, lambda1, lambda2}) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw ConfigError("loss weights must be finite and non-negative");
  }
}

ad::Var score_ranking_loss(ad::Var scores_a, ad::Var scores_n) {
  if (scores_a.value().size() == 0 || scores_n.value().size() == 0) throw DomainError("ranking loss on empty scores");
  return ad::hinge(ad::affine(ad::sub(ad::max_all(scores_a), ad::max_all(scores_n)), -1.0, 1.0));
}

ad::Var local_variation(ad::Var features) {
  const Eigen::Index t = features.rows();
  if (t < 2 || t % 2 != 0) throw DomainError("local variation needs an even segment count, got " + std::to_string(t));
  return ad::affine(ad::shifted_row_cosine(features, t / 2), -1.0, 1.0);
}

ad::Var feature_variation_loss(ad::Var features_a, ad::Var features_n) {
  ad::Var va = ad::max_all(local_variation(features_a));
  ad::Var vn = ad::max_all(local_variation(features_n));
  return ad::hinge(ad::affine(ad::sub(va, vn), -1.0, 1.0));
}

namespace {

struct PassTerms {
  ad::Var l_score, l_fea, l;
};

PassTerms pass_terms(std::span<const VideoPass> abnormal, std::span<const VideoPass> normal, const LossWeights& w) {
  std::vector<ad::Var> scores, feas;
  for (std::size_t i = 0; i < abnormal.size(); ++i) {
    scores.push_back(score_ranking_loss(abnormal[i].scores, normal[i].scores));
    feas.push_back(feature_variation_loss(abnormal[i].features, normal[i].features));
  }
  const double inv = 1.0 / static_cast<double>(abnormal.size());
  PassTerms p{ad::scale(ad::sum(scores), inv), ad::scale(ad::sum(feas), inv), {}};
  p.l = ad::sum({ad::scale(p.l_score, w.alpha1), ad::scale(p.l_fea, w.alpha2)});
  return p;
}

}  // namespace

CombinedLoss combined_loss(std::span<const VideoPass> abnormal_u, std::span<const VideoPass> normal_u,
                           std::span<const VideoPass> abnormal_e, std::span<const VideoPass> normal_e,
                           const LossWeights& w) {
  w.validate();
  if (abnormal_u.empty() || abnormal_u.size() != normal_u.size()) {
    throw DatasetError("loss needs equal, non-zero numbers of abnormal and normal videos");
  }
  if (abnormal_e.size() != normal_e.size() || (!abnormal_e.empty() && abnormal_e.size() != abnormal_u.size())) {
    throw DatasetError("erased pass does not pair with the un-erased pass");
  }
  CombinedLoss out;
  const PassTerms u = pass_terms(abnormal_u, normal_u, w);
  out.report.l_score_u = u.l_score.scalar();
  out.report.l_fea_u = u.l_fea.scalar();
  out.report.l_u = u.l.scalar();
  if (abnormal_e.empty()) {
    out.total = ad::scale(u.l, w.lambda1);
  } else {
    const PassTerms e = pass_terms(abnormal_e, normal_e, w);
    out.report.l_score_e = e.l_score.scalar();
    out.report.l_fea_e = e.l_fea.scalar();
    out.report.l_e = e.l.scalar();
    out.total = ad::sum({ad::scale(u.l, w.lambda1), ad::scale(e.l, w.lambda2)});
  }
  out.report.total = out.total.scalar();
  return out;
}

// ---- plain-value wrappers ----------------------------------------------------

double score_ranking_loss(const SegmentScores& scores_a, const SegmentScores& scores_n) {
  ad::Tape t;
  return score_ranking_loss(t.constant(scores_a), t.constant(scores_n)).scalar();
}

Vector local_variation(const Matrix& features) {
  ad::Tape t;
  return local_variation(t.constant(features)).value().col(0);
}

double feature_variation_loss(const Matrix& features_a, const Matrix& features_n) {
  ad::Tape t;
  return feature_variation_loss(t.constant(features_a), t.constant(features_n)).scalar();
}

LossReport combined_loss(const BatchPass& unerased, const BatchPass& erased, const LossWeights& w) {
  ad::Tape t;
  auto lift = [&t](const std::vector<Matrix>& feats, const std::vector<SegmentScores>& scores) {
    if (feats.size() != scores.size()) throw DatasetError("feature and score counts differ");
    std::vector<VideoPass> out;
    for (std::size_t i = 0; i < feats.size(); ++i) {
      out.push_back(VideoPass{t.constant(feats[i]), t.constant(Matrix(scores[i]))});
    }
    return out;
  };
  const auto au = lift(unerased.abnormal_features, unerased.abnormal_scores);
  const auto nu = lift(unerased.normal_features, unerased.normal_scores);
  const auto ae = lift(erased.abnormal_features, erased.abnormal_scores);
  const auto ne = lift(erased.normal_features, erased.normal_scores);
  return combined_loss(au, nu, ae, ne, w).report;
}

}  // namespace denet
