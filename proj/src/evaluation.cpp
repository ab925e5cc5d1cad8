#include "denet/evaluation.hpp"

#include "denet/error.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

namespace denet {

std::vector<double> frame_scores(const SegmentScores& segment_scores, std::int64_t frame_count) {
  const auto t_count = static_cast<std::int64_t>(segment_scores.size());
  if (t_count < 1) throw DomainError("frame_scores needs at least one segment");
  if (frame_count < 1) throw DomainError("frame_count must be positive");
  std::vector<double> out(static_cast<std::size_t>(frame_count));
  for (std::int64_t j = 0; j < frame_count; ++j) out[static_cast<std::size_t>(j)] = segment_scores(j * t_count / frame_count);
  return out;
}

namespace {

void check_lengths(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw DomainError("scores and labels differ in length");
  for (double s : scores) {
    if (!std::isfinite(s)) throw DomainError("non-finite score");
  }
  for (int l : labels) {
    if (l != 0 && l != 1) throw DomainError("labels must be 0 or 1");
  }
}

/// Indices sorted by descending score; equal scores keep input order.
std::vector<std::size_t> descending_order(std::span<const double> scores) {
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return idx;
}

}  // namespace

double roc_auc(std::span<const double> scores, std::span<const int> labels) {
  check_lengths(scores, labels);
  std::uint64_t pos = 0, neg = 0;
  for (int l : labels) (l == 1 ? pos : neg) += 1;
  if (pos == 0 || neg == 0) throw DomainError("AUC needs both positive and negative labels");

  // Walk ascending tie groups; twice the Mann-Whitney count stays integral.
  std::vector<std::size_t> idx = descending_order(scores);
  std::reverse(idx.begin(), idx.end());
  std::uint64_t twice_count = 0, neg_below = 0;
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    std::uint64_t gp = 0, gn = 0;
    while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) {
      (labels[idx[j]] == 1 ? gp : gn) += 1;
      ++j;
    }
    twice_count += 2 * gp * neg_below + gp * gn;
    neg_below += gn;
    i = j;
  }
  return static_cast<double>(twice_count) / (2.0 * static_cast<double>(pos) * static_cast<double>(neg));
}

double average_precision(std::span<const double> scores, std::span<const int> labels) {
  check_lengths(scores, labels);
  const auto positives = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
  if (positives == 0) throw DomainError("AP needs at least one positive label");
  const std::vector<std::size_t> idx = descending_order(scores);
  double sum = 0.0;
  std::size_t tp = 0;
  for (std::size_t rank = 0; rank < idx.size(); ++rank) {
    if (labels[idx[rank]] == 1) {
      ++tp;
      sum += static_cast<double>(tp) / static_cast<double>(rank + 1);
    }
  }
  return sum / static_cast<double>(positives);
}

nlohmann::json EvaluationReport::summary() const {
  return nlohmann::json{{"auc", auc}, {"ap", ap}, {"n_videos", n_videos}, {"n_frames", n_frames}};
}

EvaluationReport evaluate(const SegmentScorer& scorer, const DatasetManifest& test, int segments, int scales) {
  check_segment_count(segments, scales);
  EvaluationReport report;
  std::vector<double> all_scores;
  std::vector<int> all_labels;
  for (const auto& e : test.entries) {
    if (!e.gt_path) throw ValidationError("test video " + e.video_id + " has no ground truth");
    SegmentFeatures sf = resample_to_segments(load_sequence(e), segments);
    sf.label = e.label;
    FramePrediction fp;
    fp.video_id = e.video_id;
    fp.frame_scores = frame_scores(scorer(sf), e.frame_count);
    fp.gt = read_ground_truth(*e.gt_path, e.frame_count);
    all_scores.insert(all_scores.end(), fp.frame_scores.begin(), fp.frame_scores.end());
    all_labels.insert(all_labels.end(), fp.gt.begin(), fp.gt.end());
    report.videos.push_back(std::move(fp));
  }
  report.n_videos = report.videos.size();
  report.n_frames = all_scores.size();
  report.auc = roc_auc(all_scores, all_labels);
  report.ap = average_precision(all_scores, all_labels);
  return report;
}

EvaluationReport evaluate(const DeNet& model, const DatasetManifest& test) {
  const auto& cfg = model.config();
  return evaluate([&model](const SegmentFeatures& sf) { return model.score(sf.x); }, test, cfg.segments,
                  cfg.mstm.scales);
}

std::string score_curve_svg(const FramePrediction& video) {
  const double width = 800.0, height = 200.0, pad = 20.0;
  const std::size_t n = video.frame_scores.size();
  const double dx = n > 1 ? (width - 2 * pad) / static_cast<double>(n - 1) : 0.0;
  auto x_of = [&](std::size_t j) { return pad + dx * static_cast<double>(j); };
  auto y_of = [&](double s) { return height - pad - s * (height - 2 * pad); };

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height << "\">\n";
  svg << "<title>" << video.video_id << "</title>\n";
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  for (std::size_t j = 0; j < video.gt.size();) {
    if (video.gt[j] != 1) {
      ++j;
      continue;
    }
    std::size_t k = j;
    while (k < video.gt.size() && video.gt[k] == 1) ++k;
    const double x0 = x_of(j);
    const double x1 = n > 1 ? x_of(k - 1) + dx : width - pad;
    svg << "<rect x=\"" << x0 << "\" y=\"" << pad << "\" width=\"" << std::max(x1 - x0, 1.0) << "\" height=\""
        << height - 2 * pad << "\" fill=\"#f4b6b6\"/>\n";
    j = k;
  }
  svg << "<polyline fill=\"none\" stroke=\"#1f4e9c\" stroke-width=\"1.5\" points=\"";
  for (std::size_t j = 0; j < n; ++j) svg << x_of(j) << ',' << y_of(video.frame_scores[j]) << ' ';
  svg << "\"/>\n";
  svg << "<line x1=\"" << pad << "\" y1=\"" << height - pad << "\" x2=\"" << width - pad << "\" y2=\"" << height - pad
      << "\" stroke=\"black\"/>\n";
  svg << "</svg>\n";
  return svg.str();
}

void write_report(const EvaluationReport& report, const std::filesystem::path& dir, bool plot) {
  std::filesystem::create_directories(dir / "curves");
  {
    std::ofstream out(dir / "report.json", std::ios::trunc);
    if (!out) throw IoError("cannot write report in " + dir.string());
    out << report.summary().dump(2) << '\n';
  }
  if (plot) std::filesystem::create_directories(dir / "plots");
  for (const auto& v : report.videos) {
    std::ofstream csv(dir / "curves" / (v.video_id + ".csv"), std::ios::trunc);
    if (!csv) throw IoError("cannot write curve for " + v.video_id);
    csv.precision(17);
    csv << "frame,score,gt\n";
    for (std::size_t j = 0; j < v.frame_scores.size(); ++j) csv << j << ',' << v.frame_scores[j] << ',' << v.gt[j] << '\n';
    if (plot) {
      std::ofstream svg(dir / "plots" / (v.video_id + ".svg"), std::ios::trunc);
      if (!svg) throw IoError("cannot write plot for " + v.video_id);
      svg << score_curve_svg(v);
    }
  }
}

}  // namespace denet
