#pragma once

// Two-pass (un-erase / erase) training loop, batch construction, Adam with
// decoupled weight decay, and checkpoint archives.

#include "denet/dynamic_erasing.hpp"
#include "denet/feature_store.hpp"
#include "denet/model.hpp"
#include "denet/objectives.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace denet {

struct TrainConfig {
  int segments = 64;
  int scales = 3;
  int heads = 8;
  int mlp_hidden = 0;  // 0 = 4 * dim
  double encoder_dropout = 0.1;
  double head_dropout = 0.6;
  double delta = 0.8;
  int batch_size = 64;  // half abnormal, half normal
  double learning_rate = 1e-5;
  double weight_decay = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::int64_t max_iterations = 1000;
  std::int64_t checkpoint_every = 0;  // 0 = only the final checkpoint
  std::uint64_t seed = 0;
  LossWeights weights;
  EraseMode erase_mode = EraseMode::dynamic;

  void validate() const;
  nlohmann::json to_json() const;
  /// Accepts any subset of the keys written by to_json(); unknown keys are
  /// rejected with a ConfigError naming the key.
  static TrainConfig from_json(const nlohmann::json& j);
  /// Applies the keys of `j` on top of this config.
  void merge_json(const nlohmann::json& j);
  static bool is_key(const std::string& key);

  ModelConfig model_config(int dim) const;
};

std::string to_string(EraseMode mode);
EraseMode erase_mode_from_string(const std::string& s);

struct AdamState {
  std::int64_t step = 0;
  std::vector<Matrix> m, v;
};

/// One Adam step. Parameters flagged `decay` first shrink by
/// lr * weight_decay (decoupled); biases, LayerNorm and PE do not.
void adam_update(ParameterStore& params, const GradientSet& grads, AdamState& state, const TrainConfig& cfg);

struct TrainState {
  TrainConfig config;
  DeNet model;
  AdamState adam;
  Rng rng;
  std::int64_t iteration = 0;
};

/// Fresh state: the model is initialised from the first draw of a generator
/// seeded with config.seed; the same generator then drives training.
TrainState init_state(const TrainConfig& config, int dim);

/// Indices into the dataset; abnormal[i] is paired with normal[i].
struct Batch {
  std::vector<std::size_t> abnormal;
  std::vector<std::size_t> normal;
};

/// batch_size / 2 videos of each class. A class with at least that many
/// videos is sampled without replacement, otherwise with replacement.
/// Throws DatasetError if a class is absent.
Batch make_batch(const std::vector<SegmentFeatures>& data, int batch_size, Rng& rng);

/// Batch inputs after the dynamic-erasing step. Pointers refer into the
/// dataset, which must outlive this object.
struct PreparedBatch {
  std::vector<const SegmentFeatures*> abnormal, normal;
  std::vector<Matrix> erased_abnormal;  // empty when the erased pass is skipped
  std::vector<EraseDecision> decisions;
};

/// Scores the batch in evaluation mode and applies dynamic erasing.
PreparedBatch prepare_batch(const DeNet& model, const std::vector<SegmentFeatures>& data, const Batch& batch,
                            double delta, EraseMode mode);

/// Both passes and the total loss, one tape per abnormal/normal pair.
/// With `grads` set, adds d(total)/d(params) into it. Dropout masks are drawn
/// from ctx.rng in pair order.
LossReport batch_loss(const DeNet& model, const PreparedBatch& batch, const LossWeights& weights,
                      const ForwardContext& ctx, GradientSet* grads);

struct StepResult {
  LossReport report;
  std::vector<EraseDecision> decisions;
  double fraction_erased_videos = 0.0;
  double mean_erased_segments = 0.0;
};

/// One full iteration: batch, DE decisions, both passes, one Adam update.
/// Throws DataError naming the batch's videos if the loss is not finite.
StepResult train_step(TrainState& state, const std::vector<SegmentFeatures>& data);

struct TrainOptions {
  std::filesystem::path output_dir;  // empty: no files written
  bool audit_erase = false;
  std::function<void(const TrainState&, const StepResult&)> on_step;
};

/// Runs until state.iteration == config.max_iterations, writing
/// metrics.csv, periodic checkpoint_<iter>.ckpt and checkpoint.ckpt.
void train(TrainState& state, const std::vector<SegmentFeatures>& data, const TrainOptions& options = {});

// ---- checkpoints ----------------------------------------------------------------

inline constexpr const char* kCheckpointVersion = "denet-ckpt-v1";

/// Archive bytes: "denet-ckpt-v1\n", u64 metadata length, JSON metadata,
/// u32 tensor count, then per tensor u32 name length, name, u32 rows,
/// u32 cols, u8 dtype (1 = float64 little-endian), row-major data.
std::string serialize_checkpoint(const TrainState& state);
TrainState deserialize_checkpoint(const std::string& bytes, const std::string& source = "<memory>");

void save_checkpoint(const std::filesystem::path& path, const TrainState& state);
TrainState load_checkpoint(const std::filesystem::path& path);

}  // namespace denet
