#pragma once

// Feature ingestion: binary feature files, CSV manifests, clip-to-segment
// resampling and the synthetic weakly-labelled benchmark generator.

#include "denet/parameters.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace denet {

namespace fs = std::filesystem;

/// Per-clip features of one video before segmentation.
struct FeatureSequence {
  std::string video_id;
  Matrix clips;  // n_clips x D
  std::int64_t frame_count = 1;
  int clip_len = 16;

  /// Throws DataError on empty / non-finite data, ValidationError on a
  /// non-positive frame count.
  void validate() const;
};

/// Fixed-length segment features: the unit every model operation consumes.
struct SegmentFeatures {
  std::string video_id;
  Matrix x;  // T x D
  int label = 0;
};

enum class Split { train, test };

struct ManifestEntry {
  std::string video_id;
  int label = 0;
  fs::path feature_path;  // resolved against the manifest's directory
  std::int64_t frame_count = 0;
  std::optional<fs::path> gt_path;
};

struct DatasetManifest {
  std::vector<ManifestEntry> entries;
  Split split = Split::train;
};

// ---- feature files ("DNF1") -----------------------------------------------

/// Writes magic "DNF1", u32 rows, u32 cols, then rows*cols little-endian
/// float32 values in row-major order.
void write_feature_file(const fs::path& path, const Matrix& features);

/// Throws IoError if unreadable and ValidationError (naming the file) on a
/// bad magic, truncated payload or zero dimension.
Matrix read_feature_file(const fs::path& path);

// ---- manifests ---------------------------------------------------------------

/// Parses `video_id,label,feature_path,frame_count,gt_path`. The split is
/// inferred: a manifest with any gt_path is a test manifest and then every
/// row must have one. Passing `expected` enforces a split.
DatasetManifest load_manifest(const fs::path& path, std::optional<Split> expected = std::nullopt);

/// Paths are written relative to the manifest's directory when possible.
void write_manifest(const fs::path& path, const DatasetManifest& manifest);

/// Reads one 0/1 integer per line; the count must equal `frame_count`.
std::vector<int> read_ground_truth(const fs::path& path, std::int64_t frame_count);

FeatureSequence load_sequence(const ManifestEntry& entry);

// ---- segmentation --------------------------------------------------------------

/// Row t is the mean of the clips in the t-th group of an even contiguous
/// partition [floor(t*n/T), floor((t+1)*n/T)). When n < T each segment takes
/// the single clip nearest its centre, floor((2t+1)*n / (2T)).
SegmentFeatures resample_to_segments(const FeatureSequence& seq, int segments);

/// Throws ConfigError unless T is a positive multiple of 2^(S-1).
void check_segment_count(int segments, int scales);

/// Loads and resamples every entry of a manifest (divisibility checked).
std::vector<SegmentFeatures> load_segments(const DatasetManifest& manifest, int segments, int scales);

// ---- synthetic benchmark ------------------------------------------------------

struct SynthConfig {
  int train_normal = 100;
  int train_abnormal = 100;
  int test_normal = 25;
  int test_abnormal = 25;
  int segments = 32;  // one clip per segment
  int dim = 16;
  int clip_len = 16;
  int min_events = 1;
  int max_events = 2;
  int min_duration = 1;  // in segments
  int max_duration = 8;
  double shift = 3.0;  // class separation: anomalous features move by +-shift per dimension
  double noise = 1.0;  // per-feature standard deviation
  double base_mean = 1.0;
  /// When > 0 every abnormal video gets one prominent event (shift on the
  /// first half of the features) and at least one gentle event (this shift
  /// on the second half). When 0 every event shifts all features. Signs per
  /// dimension are drawn once per dataset.
  double gentle_shift = 0.0;
  int gentle_min_duration = 0;  // 0 = use min_duration / max_duration
  int gentle_max_duration = 0;

  void validate() const;
  nlohmann::json to_json() const;
  /// Unknown keys are rejected with a ConfigError naming the key.
  static SynthConfig from_json(const nlohmann::json& j);
};

struct SyntheticDataset {
  DatasetManifest train;
  DatasetManifest test;
  fs::path train_manifest;
  fs::path test_manifest;
};

/// Places events of the given durations as disjoint intervals in [0, T) and
/// returns the per-segment 0/1 mask. Throws ConfigError if they cannot fit.
std::vector<int> place_events(int segments, const std::vector<int>& durations, Rng& rng,
                              std::vector<std::pair<int, int>>* intervals = nullptr);

/// Writes features/, gt/, train.csv and test.csv under `out_dir`. Output is
/// a pure function of (cfg, seed).
SyntheticDataset generate_synthetic(const SynthConfig& cfg, std::uint64_t seed, const fs::path& out_dir);

}  // namespace denet
