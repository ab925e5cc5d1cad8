#pragma once

#include "denet/mstm.hpp"
#include "denet/scoring_head.hpp"

#include <json.hpp>

#include <cstdint>

namespace denet {

struct ModelConfig {
  int segments = 64;
  ScaleConfig mstm;
  ClassifierConfig head;

  void validate() const;
  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
};

/// MSTM followed by the scoring head, sharing one parameter store.
class DeNet {
 public:
  DeNet(const ModelConfig& cfg, std::uint64_t init_seed);

  const ModelConfig& config() const { return cfg_; }
  ParameterStore& params() { return store_; }
  const ParameterStore& params() const { return store_; }
  const Mstm& mstm() const { return mstm_; }
  const ScoringHead& head() const { return head_; }

  struct Output {
    ad::Var features;  // X-hat, T x D
    ad::Var scores;    // T x 1
  };

  /// Forward on `tape`, whose parameter store must be params().
  Output forward(ad::Tape& tape, const Matrix& x, const ForwardContext& ctx) const;

  /// Evaluation-mode segment scores; no erasing involved.
  SegmentScores score(const Matrix& x) const;

 private:
  DeNet(const ModelConfig& cfg, Rng&& rng);

  ModelConfig cfg_;
  ParameterStore store_;
  Mstm mstm_;
  ScoringHead head_;
};

}  // namespace denet
