#include "denet/scoring_head.hpp"

#include "denet/error.hpp"

#include <string>

namespace denet {

void ClassifierConfig::validate() const {
  if (hidden1 < 1 || hidden2 < 1) throw ConfigError("classifier widths must be positive");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("classifier dropout must be in [0, 1)");
}

ScoringHead::ScoringHead(int dim, const ClassifierConfig& cfg, ParameterStore& store, Rng& rng)
    : dim_(dim), cfg_(cfg) {
  cfg_.validate();
  const Eigen::Index widths[] = {dim, cfg_.hidden1, cfg_.hidden2, 1};
  for (int l = 0; l < 3; ++l) {
    const std::string pre = "head.fc" + std::to_string(l + 1) + ".";
    w_.push_back(store.add(pre + "weight", fan_in_uniform(widths[l], widths[l + 1], widths[l], rng), true));
    b_.push_back(store.add(pre + "bias", fan_in_uniform(1, widths[l + 1], widths[l], rng), false));
  }
}

ad::Var ScoringHead::logits(ad::Var features, const ForwardContext& ctx) const {
  if (features.cols() != dim_) {
    throw ShapeError("classifier expects width " + std::to_string(dim_) + ", got " + std::to_string(features.cols()));
  }
  ad::Tape& t = *features.tape;
  ad::Var h = ad::relu(ad::add_row(ad::matmul(features, t.param(w_[0])), t.param(b_[0])));
  h = dropout(h, cfg_.dropout, ctx);
  h = dropout(ad::add_row(ad::matmul(h, t.param(w_[1])), t.param(b_[1])), cfg_.dropout, ctx);
  return ad::add_row(ad::matmul(h, t.param(w_[2])), t.param(b_[2]));
}

ad::Var ScoringHead::score(ad::Var features, const ForwardContext& ctx) const {
  return ad::sigmoid(logits(features, ctx));
}

SegmentScores ScoringHead::score(const ParameterStore& store, const Matrix& features) const {
  if (!features.allFinite()) throw DataError("non-finite features passed to the classifier");
  ad::Tape tape(&store, nullptr);
  return score(tape.constant(features), ForwardContext{}).value().col(0);
}

}  // namespace denet
