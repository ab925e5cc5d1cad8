#pragma once

// Dynamic assessment and erasure. Everything here is a pure function of
// its inputs; normal-video features are only ever read.

#include "denet/scoring_head.hpp"

#include <json.hpp>

#include <span>
#include <string>
#include <utility>
#include <vector>

namespace denet {

struct EraseDecision {
  std::string video_id;
  Eigen::Index t_h = 0;
  Eigen::Index t_l = 0;
  double sim = 0.0;
  double completeness = 0.0;
  int era_m = 0;
  std::vector<Eigen::Index> erased_indices;
  double delta = 0.8;
  bool degenerate = false;  // a zero-norm row made the cosine undefined

  nlohmann::json to_json() const;
};

/// (argmax, argmin) of the scores; ties go to the smallest index.
std::pair<Eigen::Index, Eigen::Index> extreme_indices(const SegmentScores& scores);

struct Similarity {
  double value = 0.0;
  bool degenerate = false;
};

/// Cosine similarity of raw rows t_h and t_l. A zero-norm row gives 0 and
/// sets `degenerate`. Equal indices give exactly 1.
Similarity segment_similarity(const Matrix& x, Eigen::Index t_h, Eigen::Index t_l);

/// sim_a minus the mean of the normal-video similarities.
double completeness(double sim_a, std::span<const double> normal_sims);

/// 0 when completeness > 0 (detected anomalies judged complete), else 1.
int erase_memory(double completeness);

/// Zeroes every row with score > delta when era_m == 1; otherwise returns a
/// copy of x_a. The decision records era_m, delta and the erased rows.
std::pair<Matrix, EraseDecision> erase(const Matrix& x_a, const SegmentScores& scores, int era_m, double delta);

enum class EraseMode {
  dynamic,     // era_m from the completeness test
  none,        // no erased pass at all (handled by the trainer)
  static_all,  // era_m forced to 1 for every abnormal video
};

struct ErasureInput {
  std::string video_id;
  const Matrix* x = nullptr;
  const SegmentScores* scores = nullptr;
};

struct BatchErasure {
  std::vector<Matrix> erased;  // one per abnormal input, same order
  std::vector<EraseDecision> decisions;
  std::vector<double> normal_sims;
};

/// Computes the normal-side similarities once, then one decision and one
/// erased feature matrix per abnormal video. Throws DomainError when there
/// is an abnormal video but no normal video.
BatchErasure apply_batch(std::span<const ErasureInput> abnormal, std::span<const ErasureInput> normal, double delta,
                         EraseMode mode = EraseMode::dynamic);

}  // namespace denet
