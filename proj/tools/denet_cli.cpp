// denet command-line entry point: synth, train, eval, score.
//
// Exit codes: 0 success, 2 usage or validation error, 3 runtime failure.

#include "denet/error.hpp"
#include "denet/evaluation.hpp"
#include "denet/feature_store.hpp"
#include "denet/training.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <string>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitRuntime = 3;

json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw denet::IoError("cannot open config: " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw denet::ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
}

/// Splits a run config into its module section, rejecting keys that belong
/// to neither the module nor the allowed run-level keys.
json take_section(const json& j, const std::function<bool(const std::string&)>& is_module_key,
                  const std::set<std::string>& run_keys, json& run) {
  if (!j.is_object()) throw denet::ConfigError("config must be a JSON object");
  json module = json::object();
  for (const auto& [key, value] : j.items()) {
    if (is_module_key(key)) {
      module[key] = value;
    } else if (run_keys.count(key)) {
      run[key] = value;
    } else {
      throw denet::ConfigError("unknown config key: " + key);
    }
  }
  return module;
}

std::optional<std::uint64_t> env_seed() {
  const char* s = std::getenv("DENET_SEED");
  if (s == nullptr || *s == '\0') return std::nullopt;
  try {
    return std::stoull(s);
  } catch (const std::exception&) {
    throw denet::ConfigError(std::string("DENET_SEED is not an unsigned integer: ") + s);
  }
}

bool is_synth_key(const std::string& key) {
  static const json keys = denet::SynthConfig{}.to_json();
  return keys.contains(key);
}

// ---------------------------------------------------------------------------

struct SynthArgs {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string output_dir;
};

int run_synth(const SynthArgs& a) {
  json run = json::object();
  json section = json::object();
  if (!a.config.empty()) section = take_section(read_json_file(a.config), is_synth_key, {"seed", "output_dir"}, run);
  const denet::SynthConfig cfg = denet::SynthConfig::from_json(section);
  std::uint64_t seed = 0;
  if (a.seed) {
    seed = *a.seed;
  } else if (run.contains("seed")) {
    seed = run["seed"].get<std::uint64_t>();
  } else if (auto e = env_seed()) {
    seed = *e;
  }
  const fs::path out_dir = !a.output_dir.empty() ? a.output_dir : run.value("output_dir", std::string("."));
  const auto ds = denet::generate_synthetic(cfg, seed, out_dir);
  json out{{"train_manifest", ds.train_manifest.string()},
           {"test_manifest", ds.test_manifest.string()},
           {"train_videos", ds.train.entries.size()},
           {"test_videos", ds.test.entries.size()},
           {"seed", seed}};
  std::cout << out.dump(2) << '\n';
  return 0;
}

struct TrainArgs {
  std::string config;
  std::string manifest;
  std::string output_dir;
  std::string resume;
  std::optional<std::uint64_t> seed;
  std::optional<std::int64_t> iterations;
  std::optional<std::int64_t> checkpoint_every;
  std::optional<int> scales;
  std::optional<double> delta;
  std::optional<double> learning_rate;
  bool no_erase = false;
  bool static_erase = false;
  bool audit_erase = false;
};

int run_train(const TrainArgs& a) {
  if (a.no_erase && a.static_erase) throw denet::ConfigError("--no-erase and --static-erase are exclusive");
  json run = json::object();
  denet::TrainConfig cfg;
  bool config_has_seed = false;
  if (!a.config.empty()) {
    const json file = read_json_file(a.config);
    config_has_seed = file.is_object() && file.contains("seed");
    cfg.merge_json(take_section(file, denet::TrainConfig::is_key, {"manifest", "output_dir", "audit_erase"}, run));
  }
  if (!config_has_seed) {
    if (auto e = env_seed()) cfg.seed = *e;
  }
  if (a.seed) cfg.seed = *a.seed;
  if (a.iterations) cfg.max_iterations = *a.iterations;
  if (a.checkpoint_every) cfg.checkpoint_every = *a.checkpoint_every;
  if (a.scales) cfg.scales = *a.scales;
  if (a.delta) cfg.delta = *a.delta;
  if (a.learning_rate) cfg.learning_rate = *a.learning_rate;
  if (a.no_erase) {
    cfg.erase_mode = denet::EraseMode::none;
    cfg.weights.lambda2 = 0.0;
  }
  if (a.static_erase) cfg.erase_mode = denet::EraseMode::static_all;
  cfg.validate();

  std::string manifest_path = a.manifest;
  if (manifest_path.empty() && run.contains("manifest")) manifest_path = run["manifest"].get<std::string>();
  if (manifest_path.empty()) throw denet::ConfigError("train needs --manifest");
  const fs::path out_dir = !a.output_dir.empty() ? a.output_dir : run.value("output_dir", std::string("."));
  const bool audit = a.audit_erase || run.value("audit_erase", false);

  const auto manifest = denet::load_manifest(manifest_path);
  std::optional<denet::TrainState> state;
  if (!a.resume.empty()) {
    state.emplace(denet::load_checkpoint(a.resume));
    if (a.iterations) state->config.max_iterations = *a.iterations;
  }
  const auto& shape_cfg = state ? state->config : cfg;
  const auto data = denet::load_segments(manifest, shape_cfg.segments, shape_cfg.scales);
  if (!state) state.emplace(denet::init_state(cfg, static_cast<int>(data.front().x.cols())));

  denet::TrainOptions opts;
  opts.output_dir = out_dir;
  opts.audit_erase = audit;
  denet::train(*state, data, opts);
  json out{{"checkpoint", (out_dir / "checkpoint.ckpt").string()},
           {"metrics", (out_dir / "metrics.csv").string()},
           {"iterations", state->iteration},
           {"erase_mode", denet::to_string(state->config.erase_mode)}};
  std::cout << out.dump(2) << '\n';
  return 0;
}

struct EvalArgs {
  std::string checkpoint;
  std::string manifest;
  std::string output_dir = ".";
  bool plot = false;
};

int run_eval(const EvalArgs& a) {
  const auto manifest = denet::load_manifest(a.manifest, denet::Split::test);
  const denet::TrainState state = denet::load_checkpoint(a.checkpoint);
  const auto report = denet::evaluate(state.model, manifest);
  denet::write_report(report, a.output_dir, a.plot);
  std::cout << report.summary().dump(2) << '\n';
  return 0;
}

struct ScoreArgs {
  std::string checkpoint;
  std::string features;
  std::string output_dir;
  std::optional<std::int64_t> frame_count;
};

int run_score(const ScoreArgs& a) {
  const denet::TrainState state = denet::load_checkpoint(a.checkpoint);
  denet::FeatureSequence seq;
  seq.video_id = fs::path(a.features).stem().string();
  seq.clips = denet::read_feature_file(a.features);
  seq.frame_count = a.frame_count.value_or(seq.clips.rows() * seq.clip_len);
  const auto& mc = state.model.config();
  if (seq.clips.cols() != mc.mstm.dim) {
    throw denet::ValidationError(a.features + ": feature width " + std::to_string(seq.clips.cols()) +
                                 " does not match the checkpoint (" + std::to_string(mc.mstm.dim) + ")");
  }
  const auto segments = denet::resample_to_segments(seq, mc.segments);
  const auto frames = denet::frame_scores(state.model.score(segments.x), seq.frame_count);

  std::ofstream file;
  if (!a.output_dir.empty()) {
    fs::create_directories(a.output_dir);
    file.open(fs::path(a.output_dir) / (seq.video_id + "_scores.csv"), std::ios::trunc);
    if (!file) throw denet::IoError("cannot write scores in " + a.output_dir);
  }
  std::ostream& out = a.output_dir.empty() ? std::cout : file;
  out.precision(17);
  out << "frame,score\n";
  for (std::size_t j = 0; j < frames.size(); ++j) out << j << ',' << frames[j] << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dynamic erasing network for weakly supervised video anomaly detection"};
  app.require_subcommand(1);

  SynthArgs synth;
  auto* cmd_synth = app.add_subcommand("synth", "Generate a synthetic weakly-labelled dataset");
  cmd_synth->add_option("--config", synth.config, "Synthetic dataset config (JSON)");
  cmd_synth->add_option("--seed", synth.seed, "Generator seed (falls back to DENET_SEED)");
  cmd_synth->add_option("--output-dir", synth.output_dir, "Directory for features, gt and manifests");

  TrainArgs train;
  auto* cmd_train = app.add_subcommand("train", "Train on a manifest of feature files");
  cmd_train->add_option("--config", train.config, "Training config (JSON)");
  cmd_train->add_option("--manifest", train.manifest, "Training manifest CSV");
  cmd_train->add_option("--output-dir", train.output_dir, "Directory for checkpoints and metrics");
  cmd_train->add_option("--resume", train.resume, "Continue from a checkpoint");
  cmd_train->add_option("--seed", train.seed, "Seed (falls back to DENET_SEED)");
  cmd_train->add_option("--iterations", train.iterations, "Iteration budget");
  cmd_train->add_option("--checkpoint-every", train.checkpoint_every, "Periodic checkpoint interval");
  cmd_train->add_option("--scales", train.scales, "Number of temporal scales");
  cmd_train->add_option("--delta", train.delta, "Erase threshold");
  cmd_train->add_option("--learning-rate", train.learning_rate, "Adam learning rate");
  cmd_train->add_flag("--no-erase", train.no_erase, "Single un-erased pass (lambda2 = 0)");
  cmd_train->add_flag("--static-erase", train.static_erase, "Erase every abnormal video (no assessment)");
  cmd_train->add_flag("--audit-erase", train.audit_erase, "Write erase_audit.jsonl");

  EvalArgs eval;
  auto* cmd_eval = app.add_subcommand("eval", "Frame-level AUC / AP on a test manifest");
  cmd_eval->add_option("--checkpoint", eval.checkpoint, "Checkpoint archive")->required();
  cmd_eval->add_option("--manifest", eval.manifest, "Test manifest CSV with gt paths")->required();
  cmd_eval->add_option("--output-dir", eval.output_dir, "Directory for report.json and curves");
  cmd_eval->add_flag("--plot", eval.plot, "Also write per-video SVG score curves");

  ScoreArgs score;
  auto* cmd_score = app.add_subcommand("score", "Per-frame scores for one feature file");
  cmd_score->add_option("--checkpoint", score.checkpoint, "Checkpoint archive")->required();
  cmd_score->add_option("--features", score.features, "Feature file (DNF1)")->required();
  cmd_score->add_option("--frame-count", score.frame_count, "Frames in the video (default clips * 16)");
  cmd_score->add_option("--output-dir", score.output_dir, "Write <id>_scores.csv here instead of stdout");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    if (*cmd_synth) return run_synth(synth);
    if (*cmd_train) return run_train(train);
    if (*cmd_eval) return run_eval(eval);
    if (*cmd_score) return run_score(score);
  } catch (const denet::ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const denet::IoError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "runtime failure: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitUsage;
}
