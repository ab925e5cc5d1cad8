#include "denet/dynamic_erasing.hpp"

#include "denet/error.hpp"

namespace denet {

nlohmann::json EraseDecision::to_json() const {
  return nlohmann::json{{"video_id", video_id},
                        {"t_h", t_h},
                        {"t_l", t_l},
                        {"sim", sim},
                        {"completeness", completeness},
                        {"era_m", era_m},
                        {"erased_indices", erased_indices},
                        {"delta", delta},
                        {"degenerate", degenerate}};
}

std::pair<Eigen::Index, Eigen::Index> extreme_indices(const SegmentScores& scores) {
  if (scores.size() == 0) throw DomainError("extreme_indices on empty scores");
  Eigen::Index hi = 0, lo = 0;
  for (Eigen::Index t = 1; t < scores.size(); ++t) {
    if (scores(t) > scores(hi)) hi = t;
    if (scores(t) < scores(lo)) lo = t;
  }
  return {hi, lo};
}

Similarity segment_similarity(const Matrix& x, Eigen::Index t_h, Eigen::Index t_l) {
  if (t_h < 0 || t_l < 0 || t_h >= x.rows() || t_l >= x.rows()) throw ShapeError("segment index out of range");
  const double nh = x.row(t_h).norm();
  const double nl = x.row(t_l).norm();
  if (nh == 0.0 || nl == 0.0) return {0.0, true};
  // Exact, so a one-segment video cannot land on either side of zero completeness by rounding.
  if (t_h == t_l) return {1.0, false};
  return {x.row(t_h).dot(x.row(t_l)) / (nh * nl), false};
}

double completeness(double sim_a, std::span<const double> normal_sims) {
  if (normal_sims.empty()) throw DomainError("completeness needs at least one normal video");
  double total = 0.0;
  for (double s : normal_sims) total += s;
  return sim_a - total / static_cast<double>(normal_sims.size());
}

int erase_memory(double completeness) { return completeness > 0.0 ? 0 : 1; }

std::pair<Matrix, EraseDecision> erase(const Matrix& x_a, const SegmentScores& scores, int era_m, double delta) {
  if (scores.size() != x_a.rows()) throw ShapeError("erase: score count does not match segment count");
  EraseDecision d;
  d.era_m = era_m;
  d.delta = delta;
  Matrix out = x_a;
  if (era_m == 1) {
    for (Eigen::Index t = 0; t < scores.size(); ++t) {
      if (scores(t) > delta) {
        out.row(t).setZero();
        d.erased_indices.push_back(t);
      }
    }
  }
  return {std::move(out), std::move(d)};
}

BatchErasure apply_batch(std::span<const ErasureInput> abnormal, std::span<const ErasureInput> normal, double delta,
                         EraseMode mode) {
  BatchErasure out;
  if (abnormal.empty()) return out;
  if (normal.empty()) throw DomainError("dynamic erasing needs at least one normal video in the batch");

  out.normal_sims.reserve(normal.size());
  for (const auto& n : normal) {
    const auto [th, tl] = extreme_indices(*n.scores);
    out.normal_sims.push_back(segment_similarity(*n.x, th, tl).value);
  }

  for (const auto& a : abnormal) {
    const auto [th, tl] = extreme_indices(*a.scores);
    const Similarity sim = segment_similarity(*a.x, th, tl);
    const double comp = completeness(sim.value, out.normal_sims);
    const int era_m = mode == EraseMode::static_all ? 1 : erase_memory(comp);
    auto [xe, decision] = erase(*a.x, *a.scores, era_m, delta);
    decision.video_id = a.video_id;
    decision.t_h = th;
    decision.t_l = tl;
    decision.sim = sim.value;
    decision.completeness = comp;
    decision.degenerate = sim.degenerate;
    out.erased.push_back(std::move(xe));
    out.decisions.push_back(std::move(decision));
  }
  return out;
}

}  // namespace denet
