#include "denet/feature_store.hpp"

#include "denet/error.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

namespace denet {

namespace {

constexpr std::array<char, 4> kFeatureMagic = {'D', 'N', 'F', '1'};

template <typename T>
T to_little(T v) {
  if constexpr (std::endian::native == std::endian::big) {
    auto bytes = std::bit_cast<std::array<unsigned char, sizeof(T)>>(v);
    std::reverse(bytes.begin(), bytes.end());
    return std::bit_cast<T>(bytes);
  }
  return v;
}

void put_u32(std::ostream& out, std::uint32_t v) {
  v = to_little(v);
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

bool get_u32(std::istream& in, std::uint32_t& v) {
  if (!in.read(reinterpret_cast<char*>(&v), sizeof v)) return false;
  v = to_little(v);
  return true;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::istringstream ss(line);
  while (std::getline(ss, field, ',')) fields.push_back(field);
  if (!line.empty() && line.back() == ',') fields.emplace_back();
  return fields;
}

std::string trim(std::string s) {
  while (!s.empty() && (s.back() == '\r' || s.back() == ' ' || s.back() == '\t')) s.pop_back();
  std::size_t i = 0;
  while (i < s.size() && (s[i] == ' ' || s[i] == '\t')) ++i;
  return s.substr(i);
}

std::int64_t parse_int(const std::string& s, const std::string& what, const fs::path& file, int line) {
  try {
    std::size_t pos = 0;
    const long long v = std::stoll(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ValidationError(file.string() + ":" + std::to_string(line) + ": bad " + what + " '" + s + "'");
  }
}

fs::path relative_if_possible(const fs::path& p, const fs::path& base) {
  std::error_code ec;
  fs::path rel = fs::relative(fs::absolute(p), fs::absolute(base), ec);
  return ec || rel.empty() ? fs::absolute(p) : rel;
}

}  // namespace

void FeatureSequence::validate() const {
  if (clips.rows() < 1 || clips.cols() < 1) throw DataError(video_id + ": empty feature sequence");
  if (!clips.allFinite()) throw DataError(video_id + ": non-finite feature values");
  if (frame_count < 1) throw ValidationError(video_id + ": frame_count must be positive");
  if (clip_len < 1) throw ValidationError(video_id + ": clip_len must be positive");
}

// ---------------------------------------------------------------------------

void write_feature_file(const fs::path& path, const Matrix& features) {
  if (features.rows() < 1 || features.cols() < 1) throw DataError("refusing to write empty feature matrix");
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out.write(kFeatureMagic.data(), kFeatureMagic.size());
  put_u32(out, static_cast<std::uint32_t>(features.rows()));
  put_u32(out, static_cast<std::uint32_t>(features.cols()));
  std::vector<float> row(static_cast<std::size_t>(features.cols()));
  for (Eigen::Index r = 0; r < features.rows(); ++r) {
    for (Eigen::Index c = 0; c < features.cols(); ++c) {
      row[static_cast<std::size_t>(c)] = to_little(static_cast<float>(features(r, c)));
    }
    out.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size() * sizeof(float)));
  }
  if (!out) throw IoError("write failed: " + path.string());
}

Matrix read_feature_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open feature file: " + path.string());
  std::array<char, 4> magic{};
  if (!in.read(magic.data(), magic.size()) || magic != kFeatureMagic) {
    throw ValidationError("bad magic in feature file: " + path.string());
  }
  std::uint32_t rows = 0, cols = 0;
  if (!get_u32(in, rows) || !get_u32(in, cols)) throw ValidationError("truncated header in feature file: " + path.string());
  if (rows == 0 || cols == 0) throw ValidationError("zero dimension in feature file: " + path.string());
  Matrix m(rows, cols);
  std::vector<float> row(cols);
  for (std::uint32_t r = 0; r < rows; ++r) {
    if (!in.read(reinterpret_cast<char*>(row.data()), static_cast<std::streamsize>(cols * sizeof(float)))) {
      throw ValidationError("truncated payload in feature file: " + path.string());
    }
    for (std::uint32_t c = 0; c < cols; ++c) m(r, c) = static_cast<double>(to_little(row[c]));
  }
  if (in.peek() != std::char_traits<char>::eof()) {
    throw ValidationError("trailing bytes in feature file: " + path.string());
  }
  return m;
}

// ---------------------------------------------------------------------------

DatasetManifest load_manifest(const fs::path& path, std::optional<Split> expected) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest: " + path.string());
  const fs::path base = path.parent_path();

  std::string line;
  int line_no = 0;
  bool header_seen = false;
  DatasetManifest manifest;
  std::set<std::string> ids;
  while (std::getline(in, line)) {
    ++line_no;
    line = trim(line);
    if (line.empty()) continue;
    if (!header_seen) {
      if (line != "video_id,label,feature_path,frame_count,gt_path") {
        throw ValidationError(path.string() + ": unexpected manifest header '" + line + "'");
      }
      header_seen = true;
      continue;
    }
    const auto f = split_csv_line(line);
    if (f.size() != 5) {
      throw ValidationError(path.string() + ":" + std::to_string(line_no) + ": expected 5 fields");
    }
    ManifestEntry e;
    e.video_id = trim(f[0]);
    if (e.video_id.empty()) throw ValidationError(path.string() + ":" + std::to_string(line_no) + ": empty video_id");
    const auto label = parse_int(trim(f[1]), "label", path, line_no);
    if (label != 0 && label != 1) throw ValidationError(path.string() + ":" + std::to_string(line_no) + ": label must be 0 or 1");
    e.label = static_cast<int>(label);
    const std::string fp = trim(f[2]);
    if (fp.empty()) throw ValidationError(path.string() + ":" + std::to_string(line_no) + ": empty feature_path");
    e.feature_path = fs::path(fp).is_absolute() ? fs::path(fp) : base / fp;
    e.frame_count = parse_int(trim(f[3]), "frame_count", path, line_no);
    if (e.frame_count < 1) throw ValidationError(path.string() + ":" + std::to_string(line_no) + ": frame_count must be positive");
    const std::string gt = trim(f[4]);
    if (!gt.empty()) e.gt_path = fs::path(gt).is_absolute() ? fs::path(gt) : base / gt;
    if (!ids.insert(e.video_id).second) throw ValidationError(path.string() + ": duplicate video_id " + e.video_id);
    manifest.entries.push_back(std::move(e));
  }
  if (manifest.entries.empty()) throw ValidationError(path.string() + ": no entries");

  const bool any_gt = std::any_of(manifest.entries.begin(), manifest.entries.end(),
                                  [](const ManifestEntry& e) { return e.gt_path.has_value(); });
  manifest.split = any_gt ? Split::test : Split::train;
  if (expected) manifest.split = *expected;
  if (manifest.split == Split::test) {
    for (const auto& e : manifest.entries) {
      if (!e.gt_path) throw ValidationError(path.string() + ": test row " + e.video_id + " is missing gt_path");
    }
  }
  return manifest;
}

void write_manifest(const fs::path& path, const DatasetManifest& manifest) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  const fs::path base = path.parent_path();
  out << "video_id,label,feature_path,frame_count,gt_path\n";
  for (const auto& e : manifest.entries) {
    out << e.video_id << ',' << e.label << ',' << relative_if_possible(e.feature_path, base).generic_string() << ','
        << e.frame_count << ',';
    if (e.gt_path) out << relative_if_possible(*e.gt_path, base).generic_string();
    out << '\n';
  }
  if (!out) throw IoError("write failed: " + path.string());
}

std::vector<int> read_ground_truth(const fs::path& path, std::int64_t frame_count) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open ground truth: " + path.string());
  std::vector<int> gt;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    line = trim(line);
    if (line.empty()) continue;
    if (line != "0" && line != "1") {
      throw ValidationError(path.string() + ":" + std::to_string(line_no) + ": expected 0 or 1");
    }
    gt.push_back(line == "1" ? 1 : 0);
  }
  if (static_cast<std::int64_t>(gt.size()) != frame_count) {
    throw ValidationError(path.string() + ": " + std::to_string(gt.size()) + " labels but frame_count is " +
                          std::to_string(frame_count));
  }
  return gt;
}

FeatureSequence load_sequence(const ManifestEntry& entry) {
  FeatureSequence seq;
  seq.video_id = entry.video_id;
  seq.clips = read_feature_file(entry.feature_path);
  seq.frame_count = entry.frame_count;
  seq.validate();
  return seq;
}

// ---------------------------------------------------------------------------

SegmentFeatures resample_to_segments(const FeatureSequence& seq, int segments) {
  if (segments < 1) throw ConfigError("segment count must be positive");
  seq.validate();
  const Eigen::Index n = seq.clips.rows();
  const Eigen::Index t_count = segments;
  SegmentFeatures out;
  out.video_id = seq.video_id;
  out.x.resize(t_count, seq.clips.cols());
  if (n >= t_count) {
    for (Eigen::Index t = 0; t < t_count; ++t) {
      const Eigen::Index lo = t * n / t_count;
      const Eigen::Index hi = (t + 1) * n / t_count;
      out.x.row(t) = seq.clips.middleRows(lo, hi - lo).colwise().mean();
    }
  } else {
    for (Eigen::Index t = 0; t < t_count; ++t) {
      out.x.row(t) = seq.clips.row(((2 * t + 1) * n) / (2 * t_count));
    }
  }
  return out;
}

void check_segment_count(int segments, int scales) {
  if (scales < 1) throw ConfigError("scale count must be at least 1");
  if (scales > 30) throw ConfigError("scale count too large");
  const long long step = 1LL << (scales - 1);
  if (segments < 1 || segments % step != 0) {
    throw ConfigError("segment count " + std::to_string(segments) + " is not a positive multiple of 2^(S-1) = " +
                      std::to_string(step));
  }
}

std::vector<SegmentFeatures> load_segments(const DatasetManifest& manifest, int segments, int scales) {
  check_segment_count(segments, scales);
  std::vector<SegmentFeatures> out;
  out.reserve(manifest.entries.size());
  for (const auto& e : manifest.entries) {
    SegmentFeatures sf = resample_to_segments(load_sequence(e), segments);
    sf.label = e.label;
    out.push_back(std::move(sf));
  }
  return out;
}

// ---------------------------------------------------------------------------

void SynthConfig::validate() const {
  auto positive = [](int v, const char* name) {
    if (v < 1) throw ConfigError(std::string(name) + " must be positive");
  };
  auto non_negative = [](int v, const char* name) {
    if (v < 0) throw ConfigError(std::string(name) + " must be non-negative");
  };
  non_negative(train_normal, "train_normal");
  non_negative(train_abnormal, "train_abnormal");
  non_negative(test_normal, "test_normal");
  non_negative(test_abnormal, "test_abnormal");
  positive(segments, "segments");
  positive(dim, "dim");
  positive(clip_len, "clip_len");
  positive(min_events, "min_events");
  positive(min_duration, "min_duration");
  if (max_events < min_events) throw ConfigError("max_events must be >= min_events");
  if (max_duration < min_duration) throw ConfigError("max_duration must be >= min_duration");
  if (!(noise > 0.0) || !std::isfinite(noise)) throw ConfigError("noise must be positive");
  if (!std::isfinite(shift) || !std::isfinite(base_mean)) throw ConfigError("shift and base_mean must be finite");
  if (gentle_shift < 0.0 || !std::isfinite(gentle_shift)) throw ConfigError("gentle_shift must be non-negative");
  if (gentle_shift > 0.0 && dim < 2) throw ConfigError("gentle events need dim >= 2");
  if (gentle_min_duration < 0 || gentle_max_duration < gentle_min_duration) {
    throw ConfigError("gentle duration range is invalid");
  }
  const int gentle_min = gentle_min_duration > 0 ? gentle_min_duration : min_duration;
  const int events = gentle_shift > 0.0 ? std::max(min_events, 2) : min_events;
  if (min_duration + (events - 1) * (gentle_shift > 0.0 ? gentle_min : min_duration) > segments) {
    throw ConfigError("minimum events do not fit in the segment count");
  }
}

nlohmann::json SynthConfig::to_json() const {
  return nlohmann::json{{"train_normal", train_normal},
                        {"train_abnormal", train_abnormal},
                        {"test_normal", test_normal},
                        {"test_abnormal", test_abnormal},
                        {"segments", segments},
                        {"dim", dim},
                        {"clip_len", clip_len},
                        {"min_events", min_events},
                        {"max_events", max_events},
                        {"min_duration", min_duration},
                        {"max_duration", max_duration},
                        {"shift", shift},
                        {"noise", noise},
                        {"base_mean", base_mean},
                        {"gentle_shift", gentle_shift},
                        {"gentle_min_duration", gentle_min_duration},
                        {"gentle_max_duration", gentle_max_duration}};
}

SynthConfig SynthConfig::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("synth config must be a JSON object");
  SynthConfig c;
  const std::map<std::string, std::function<void(const nlohmann::json&)>> setters = {
      {"train_normal", [&](const nlohmann::json& v) { c.train_normal = v.get<int>(); }},
      {"train_abnormal", [&](const nlohmann::json& v) { c.train_abnormal = v.get<int>(); }},
      {"test_normal", [&](const nlohmann::json& v) { c.test_normal = v.get<int>(); }},
      {"test_abnormal", [&](const nlohmann::json& v) { c.test_abnormal = v.get<int>(); }},
      {"segments", [&](const nlohmann::json& v) { c.segments = v.get<int>(); }},
      {"dim", [&](const nlohmann::json& v) { c.dim = v.get<int>(); }},
      {"clip_len", [&](const nlohmann::json& v) { c.clip_len = v.get<int>(); }},
      {"min_events", [&](const nlohmann::json& v) { c.min_events = v.get<int>(); }},
      {"max_events", [&](const nlohmann::json& v) { c.max_events = v.get<int>(); }},
      {"min_duration", [&](const nlohmann::json& v) { c.min_duration = v.get<int>(); }},
      {"max_duration", [&](const nlohmann::json& v) { c.max_duration = v.get<int>(); }},
      {"shift", [&](const nlohmann::json& v) { c.shift = v.get<double>(); }},
      {"noise", [&](const nlohmann::json& v) { c.noise = v.get<double>(); }},
      {"base_mean", [&](const nlohmann::json& v) { c.base_mean = v.get<double>(); }},
      {"gentle_shift", [&](const nlohmann::json& v) { c.gentle_shift = v.get<double>(); }},
      {"gentle_min_duration", [&](const nlohmann::json& v) { c.gentle_min_duration = v.get<int>(); }},
      {"gentle_max_duration", [&](const nlohmann::json& v) { c.gentle_max_duration = v.get<int>(); }},
  };
  for (const auto& [key, value] : j.items()) {
    auto it = setters.find(key);
    if (it == setters.end()) throw ConfigError("unknown synth config key: " + key);
    try {
      it->second(value);
    } catch (const nlohmann::json::exception&) {
      throw ConfigError("bad value for synth config key: " + key);
    }
  }
  c.validate();
  return c;
}

std::vector<int> place_events(int segments, const std::vector<int>& durations, Rng& rng,
                              std::vector<std::pair<int, int>>* intervals) {
  int total = 0;
  for (int d : durations) {
    if (d < 1) throw ConfigError("event duration must be positive");
    total += d;
  }
  if (total > segments) throw ConfigError("events do not fit in the segment count");
  // Random gaps: distribute the free segments into durations.size()+1 slots,
  // then lay the events out in a random order. Disjoint by construction.
  const int free_count = segments - total;
  std::vector<int> gaps(durations.size() + 1, 0);
  std::uniform_int_distribution<std::size_t> slot(0, gaps.size() - 1);
  for (int i = 0; i < free_count; ++i) ++gaps[slot(rng)];
  std::vector<std::size_t> order(durations.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::shuffle(order.begin(), order.end(), rng);

  std::vector<int> mask(static_cast<std::size_t>(segments), 0);
  std::vector<std::pair<int, int>> placed(durations.size());
  int pos = gaps[0];
  for (std::size_t k = 0; k < order.size(); ++k) {
    const int d = durations[order[k]];
    placed[order[k]] = {pos, pos + d};
    for (int t = pos; t < pos + d; ++t) mask[static_cast<std::size_t>(t)] = 1;
    pos += d + gaps[k + 1];
  }
  if (intervals) *intervals = std::move(placed);
  return mask;
}

namespace {

struct SynthVideo {
  Matrix features;
  std::vector<int> segment_mask;
};

SynthVideo synth_video(const SynthConfig& cfg, const RowVector& direction, bool abnormal, Rng& rng) {
  std::normal_distribution<double> noise(0.0, cfg.noise);
  SynthVideo v;
  v.features.resize(cfg.segments, cfg.dim);
  for (int t = 0; t < cfg.segments; ++t)
    for (int d = 0; d < cfg.dim; ++d) v.features(t, d) = cfg.base_mean + noise(rng);
  v.segment_mask.assign(static_cast<std::size_t>(cfg.segments), 0);
  if (!abnormal) return v;

  const bool gentle = cfg.gentle_shift > 0.0;
  std::uniform_int_distribution<int> n_events(gentle ? std::max(cfg.min_events, 2) : cfg.min_events,
                                              std::max(cfg.max_events, gentle ? 2 : cfg.max_events));
  std::uniform_int_distribution<int> duration(cfg.min_duration, cfg.max_duration);
  const int g_lo = cfg.gentle_min_duration > 0 ? cfg.gentle_min_duration : cfg.min_duration;
  const int g_hi = cfg.gentle_max_duration > 0 ? cfg.gentle_max_duration : cfg.max_duration;
  std::uniform_int_distribution<int> gentle_duration(g_lo, g_hi);

  const int k = n_events(rng);
  std::vector<int> durations;
  int used = 0;
  for (int i = 0; i < k; ++i) {
    int d = (gentle && i > 0) ? gentle_duration(rng) : duration(rng);
    // Keep the set placeable: later events shrink if the video is full.
    const int min_rest = (k - i - 1);
    d = std::min(d, cfg.segments - used - min_rest);
    if (d < 1) break;
    durations.push_back(d);
    used += d;
  }
  std::vector<std::pair<int, int>> intervals;
  v.segment_mask = place_events(cfg.segments, durations, rng, &intervals);
  const int half = cfg.dim / 2;
  for (std::size_t e = 0; e < intervals.size(); ++e) {
    const auto [lo, hi] = intervals[e];
    for (int t = lo; t < hi; ++t) {
      if (!gentle) {
        v.features.row(t) += cfg.shift * direction;
      } else if (e == 0) {
        v.features.row(t).head(half) += cfg.shift * direction.head(half);
      } else {
        v.features.row(t).tail(cfg.dim - half) += cfg.gentle_shift * direction.tail(cfg.dim - half);
      }
    }
  }
  return v;
}

void write_gt(const fs::path& path, const std::vector<int>& segment_mask, std::int64_t frame_count) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  const auto t_count = static_cast<std::int64_t>(segment_mask.size());
  for (std::int64_t j = 0; j < frame_count; ++j) {
    out << segment_mask[static_cast<std::size_t>(j * t_count / frame_count)] << '\n';
  }
}

}  // namespace

SyntheticDataset generate_synthetic(const SynthConfig& cfg, std::uint64_t seed, const fs::path& out_dir) {
  cfg.validate();
  fs::create_directories(out_dir / "features");
  fs::create_directories(out_dir / "gt");
  Rng rng(seed);
  // One sign per dimension for the whole dataset, so a shift is not a
  // constant offset across the row.
  RowVector direction(cfg.dim);
  std::bernoulli_distribution sign(0.5);
  for (int d = 0; d < cfg.dim; ++d) direction(d) = sign(rng) ? 1.0 : -1.0;
  SyntheticDataset ds;
  ds.train.split = Split::train;
  ds.test.split = Split::test;
  const std::int64_t frames = static_cast<std::int64_t>(cfg.segments) * cfg.clip_len;

  auto emit = [&](DatasetManifest& m, const std::string& prefix, int count, bool abnormal, bool with_gt) {
    for (int i = 0; i < count; ++i) {
      char id[64];
      std::snprintf(id, sizeof id, "%s_%s_%04d", prefix.c_str(), abnormal ? "abnormal" : "normal", i);
      SynthVideo v = synth_video(cfg, direction, abnormal, rng);
      ManifestEntry e;
      e.video_id = id;
      e.label = abnormal ? 1 : 0;
      e.feature_path = out_dir / "features" / (e.video_id + ".dnf");
      e.frame_count = frames;
      write_feature_file(e.feature_path, v.features);
      if (with_gt) {
        e.gt_path = out_dir / "gt" / (e.video_id + ".txt");
        write_gt(*e.gt_path, v.segment_mask, frames);
      }
      m.entries.push_back(std::move(e));
    }
  };
  emit(ds.train, "train", cfg.train_normal, false, false);
  emit(ds.train, "train", cfg.train_abnormal, true, false);
  emit(ds.test, "test", cfg.test_normal, false, true);
  emit(ds.test, "test", cfg.test_abnormal, true, true);

  ds.train_manifest = out_dir / "train.csv";
  ds.test_manifest = out_dir / "test.csv";
  write_manifest(ds.train_manifest, ds.train);
  write_manifest(ds.test_manifest, ds.test);
  return ds;
}

}  // namespace denet
