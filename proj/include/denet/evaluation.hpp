#pragma once

// Frame-level scoring and the two reported metrics: ROC-AUC (Mann-Whitney,
// ties count one half) and average precision (stable descending order).

#include "denet/feature_store.hpp"
#include "denet/model.hpp"

#include <json.hpp>

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace denet {

/// Frame j takes the score of segment floor(j * T / frame_count).
std::vector<double> frame_scores(const SegmentScores& segment_scores, std::int64_t frame_count);

/// Throws DomainError unless both classes are present.
double roc_auc(std::span<const double> scores, std::span<const int> labels);

/// Mean over positives of the precision at each positive's rank. Throws
/// DomainError without positives.
double average_precision(std::span<const double> scores, std::span<const int> labels);

struct FramePrediction {
  std::string video_id;
  std::vector<double> frame_scores;
  std::vector<int> gt;
};

struct EvaluationReport {
  double auc = 0.0;
  double ap = 0.0;
  std::size_t n_videos = 0;
  std::size_t n_frames = 0;
  std::vector<FramePrediction> videos;

  /// {auc, ap, n_videos, n_frames}
  nlohmann::json summary() const;
};

using SegmentScorer = std::function<SegmentScores(const SegmentFeatures&)>;

/// Scores every test video in manifest order, concatenates frames and
/// computes the global metrics.
EvaluationReport evaluate(const SegmentScorer& scorer, const DatasetManifest& test, int segments, int scales);
EvaluationReport evaluate(const DeNet& model, const DatasetManifest& test);

/// report.json plus curves/<video_id>.csv (frame,score,gt); with `plot`
/// also plots/<video_id>.svg (ground-truth band and score line).
void write_report(const EvaluationReport& report, const std::filesystem::path& dir, bool plot);

/// Standalone SVG of one score curve.
std::string score_curve_svg(const FramePrediction& video);

}  // namespace denet
