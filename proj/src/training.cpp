#include "denet/training.hpp"

#include "denet/error.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

namespace denet {

// ---- config ------------------------------------------------------------------

std::string to_string(EraseMode mode) {
  switch (mode) {
    case EraseMode::dynamic:
      return "dynamic";
    case EraseMode::none:
      return "none";
    case EraseMode::static_all:
      return "static";
  }
  return "dynamic";
}

EraseMode erase_mode_from_string(const std::string& s) {
  if (s == "dynamic") return EraseMode::dynamic;
  if (s == "none") return EraseMode::none;
  if (s == "static") return EraseMode::static_all;
  throw ConfigError("unknown erase_mode '" + s + "' (expected dynamic, none or static)");
}

void TrainConfig::validate() const {
  check_segment_count(segments, scales);
  if (segments % 2 != 0) throw ConfigError("segment count must be even");
  if (heads < 1) throw ConfigError("heads must be positive");
  if (mlp_hidden < 0) throw ConfigError("mlp_hidden must be non-negative");
  if (!(encoder_dropout >= 0.0 && encoder_dropout < 1.0)) throw ConfigError("encoder_dropout must be in [0, 1)");
  if (!(head_dropout >= 0.0 && head_dropout < 1.0)) throw ConfigError("head_dropout must be in [0, 1)");
  if (!(delta > 0.0 && delta < 1.0)) throw ConfigError("delta must be in (0, 1)");
  if (batch_size < 2 || batch_size % 2 != 0) throw ConfigError("batch_size must be a positive even number");
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be non-negative");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("Adam betas must be in [0, 1)");
  if (!(adam_eps > 0.0)) throw ConfigError("adam_eps must be positive");
  if (max_iterations < 0) throw ConfigError("max_iterations must be non-negative");
  if (checkpoint_every < 0) throw ConfigError("checkpoint_every must be non-negative");
  weights.validate();
}

nlohmann::json TrainConfig::to_json() const {
  return nlohmann::json{{"segments", segments},
                        {"scales", scales},
                        {"heads", heads},
                        {"mlp_hidden", mlp_hidden},
                        {"encoder_dropout", encoder_dropout},
                        {"head_dropout", head_dropout},
                        {"delta", delta},
                        {"batch_size", batch_size},
                        {"learning_rate", learning_rate},
                        {"weight_decay", weight_decay},
                        {"beta1", beta1},
                        {"beta2", beta2},
                        {"adam_eps", adam_eps},
                        {"max_iterations", max_iterations},
                        {"checkpoint_every", checkpoint_every},
                        {"seed", seed},
                        {"alpha1", weights.alpha1},
                        {"alpha2", weights.alpha2},
                        {"lambda1", weights.lambda1},
                        {"lambda2", weights.lambda2},
                        {"erase_mode", to_string(erase_mode)}};
}

namespace {

using Setter = std::function<void(TrainConfig&, const nlohmann::json&)>;

const std::map<std::string, Setter>& train_setters() {
  static const std::map<std::string, Setter> setters = {
      {"segments", [](TrainConfig& c, const nlohmann::json& v) { c.segments = v.get<int>(); }},
      {"scales", [](TrainConfig& c, const nlohmann::json& v) { c.scales = v.get<int>(); }},
      {"heads", [](TrainConfig& c, const nlohmann::json& v) { c.heads = v.get<int>(); }},
      {"mlp_hidden", [](TrainConfig& c, const nlohmann::json& v) { c.mlp_hidden = v.get<int>(); }},
      {"encoder_dropout", [](TrainConfig& c, const nlohmann::json& v) { c.encoder_dropout = v.get<double>(); }},
      {"head_dropout", [](TrainConfig& c, const nlohmann::json& v) { c.head_dropout = v.get<double>(); }},
      {"delta", [](TrainConfig& c, const nlohmann::json& v) { c.delta = v.get<double>(); }},
      {"batch_size", [](TrainConfig& c, const nlohmann::json& v) { c.batch_size = v.get<int>(); }},
      {"learning_rate", [](TrainConfig& c, const nlohmann::json& v) { c.learning_rate = v.get<double>(); }},
      {"weight_decay", [](TrainConfig& c, const nlohmann::json& v) { c.weight_decay = v.get<double>(); }},
      {"beta1", [](TrainConfig& c, const nlohmann::json& v) { c.beta1 = v.get<double>(); }},
      {"beta2", [](TrainConfig& c, const nlohmann::json& v) { c.beta2 = v.get<double>(); }},
      {"adam_eps", [](TrainConfig& c, const nlohmann::json& v) { c.adam_eps = v.get<double>(); }},
      {"max_iterations", [](TrainConfig& c, const nlohmann::json& v) { c.max_iterations = v.get<std::int64_t>(); }},
      {"checkpoint_every", [](TrainConfig& c, const nlohmann::json& v) { c.checkpoint_every = v.get<std::int64_t>(); }},
      {"seed", [](TrainConfig& c, const nlohmann::json& v) { c.seed = v.get<std::uint64_t>(); }},
      {"alpha1", [](TrainConfig& c, const nlohmann::json& v) { c.weights.alpha1 = v.get<double>(); }},
      {"alpha2", [](TrainConfig& c, const nlohmann::json& v) { c.weights.alpha2 = v.get<double>(); }},
      {"lambda1", [](TrainConfig& c, const nlohmann::json& v) { c.weights.lambda1 = v.get<double>(); }},
      {"lambda2", [](TrainConfig& c, const nlohmann::json& v) { c.weights.lambda2 = v.get<double>(); }},
      {"erase_mode",
       [](TrainConfig& c, const nlohmann::json& v) { c.erase_mode = erase_mode_from_string(v.get<std::string>()); }},
  };
  return setters;
}

}  // namespace

bool TrainConfig::is_key(const std::string& key) { return train_setters().count(key) != 0; }

void TrainConfig::merge_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("train config must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    auto it = train_setters().find(key);
    if (it == train_setters().end()) throw ConfigError("unknown train config key: " + key);
    try {
      it->second(*this, value);
    } catch (const nlohmann::json::exception&) {
      throw ConfigError("bad value for train config key: " + key);
    }
  }
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.merge_json(j);
  c.validate();
  return c;
}

ModelConfig TrainConfig::model_config(int dim) const {
  ModelConfig m;
  m.segments = segments;
  m.mstm.scales = scales;
  m.mstm.dim = dim;
  m.mstm.heads = heads;
  m.mstm.mlp_hidden = mlp_hidden;
  m.mstm.dropout = encoder_dropout;
  m.head.dropout = head_dropout;
  m.validate();
  return m;
}

// ---- optimizer -----------------------------------------------------------------

void adam_update(ParameterStore& params, const GradientSet& grads, AdamState& state, const TrainConfig& cfg) {
  if (grads.size() != params.size()) throw ShapeError("gradient set does not match parameters");
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.push_back(Matrix::Zero(p.value.rows(), p.value.cols()));
      state.v.push_back(Matrix::Zero(p.value.rows(), p.value.cols()));
    }
  }
  ++state.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Matrix& w = params[i].value;
    const Matrix& g = grads[i];
    state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
    state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g.cwiseProduct(g);
    if (params[i].decay && cfg.weight_decay > 0.0) w *= 1.0 - cfg.learning_rate * cfg.weight_decay;
    w.array() -= cfg.learning_rate * (state.m[i].array() / bc1) / ((state.v[i].array() / bc2).sqrt() + cfg.adam_eps);
  }
}

// ---- state / batching -----------------------------------------------------------

TrainState init_state(const TrainConfig& config, int dim) {
  config.validate();
  Rng rng(config.seed);
  const std::uint64_t init_seed = rng();
  return TrainState{config, DeNet(config.model_config(dim), init_seed), AdamState{}, rng, 0};
}

Batch make_batch(const std::vector<SegmentFeatures>& data, int batch_size, Rng& rng) {
  if (batch_size < 2 || batch_size % 2 != 0) throw DatasetError("batch size must be a positive even number");
  std::vector<std::size_t> pools[2];
  for (std::size_t i = 0; i < data.size(); ++i) pools[data[i].label == 1 ? 1 : 0].push_back(i);
  if (pools[0].empty()) throw DatasetError("training data has no normal videos");
  if (pools[1].empty()) throw DatasetError("training data has no abnormal videos");
  const std::size_t half = static_cast<std::size_t>(batch_size / 2);
  auto draw = [&](std::vector<std::size_t> pool) {
    std::vector<std::size_t> out;
    if (pool.size() >= half) {
      // Partial Fisher-Yates: first `half` entries become the sample.
      for (std::size_t i = 0; i < half; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, pool.size() - 1);
        std::swap(pool[i], pool[pick(rng)]);
        out.push_back(pool[i]);
      }
    } else {
      std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
      for (std::size_t i = 0; i < half; ++i) out.push_back(pool[pick(rng)]);
    }
    return out;
  };
  Batch b;
  b.abnormal = draw(pools[1]);
  b.normal = draw(pools[0]);
  return b;
}

PreparedBatch prepare_batch(const DeNet& model, const std::vector<SegmentFeatures>& data, const Batch& batch,
                            double delta, EraseMode mode) {
  PreparedBatch pb;
  for (std::size_t i : batch.abnormal) pb.abnormal.push_back(&data.at(i));
  for (std::size_t i : batch.normal) pb.normal.push_back(&data.at(i));
  if (mode == EraseMode::none) return pb;

  std::vector<SegmentScores> a_scores, n_scores;
  for (const auto* v : pb.abnormal) a_scores.push_back(model.score(v->x));
  for (const auto* v : pb.normal) n_scores.push_back(model.score(v->x));
  std::vector<ErasureInput> a_in, n_in;
  for (std::size_t i = 0; i < pb.abnormal.size(); ++i) a_in.push_back({pb.abnormal[i]->video_id, &pb.abnormal[i]->x, &a_scores[i]});
  for (std::size_t i = 0; i < pb.normal.size(); ++i) n_in.push_back({pb.normal[i]->video_id, &pb.normal[i]->x, &n_scores[i]});
  BatchErasure be = apply_batch(a_in, n_in, delta, mode);
  pb.erased_abnormal = std::move(be.erased);
  pb.decisions = std::move(be.decisions);
  return pb;
}

LossReport batch_loss(const DeNet& model, const PreparedBatch& batch, const LossWeights& weights,
                      const ForwardContext& ctx, GradientSet* grads) {
  const std::size_t pairs = batch.abnormal.size();
  if (pairs == 0 || pairs != batch.normal.size()) throw DatasetError("batch must pair abnormal and normal videos");
  const bool erased_pass = !batch.erased_abnormal.empty();
  if (erased_pass && batch.erased_abnormal.size() != pairs) throw DatasetError("erased features do not match the batch");
  const double inv = 1.0 / static_cast<double>(pairs);

  LossReport sum;
  for (std::size_t i = 0; i < pairs; ++i) {
    ad::Tape tape(&model.params(), grads);
    const auto au = model.forward(tape, batch.abnormal[i]->x, ctx);
    const auto nu = model.forward(tape, batch.normal[i]->x, ctx);
    const VideoPass a_u[] = {{au.features, au.scores}};
    const VideoPass n_u[] = {{nu.features, nu.scores}};
    CombinedLoss loss;
    if (erased_pass) {
      const auto ae = model.forward(tape, batch.erased_abnormal[i], ctx);
      const auto ne = model.forward(tape, batch.normal[i]->x, ctx);
      const VideoPass a_e[] = {{ae.features, ae.scores}};
      const VideoPass n_e[] = {{ne.features, ne.scores}};
      loss = combined_loss(a_u, n_u, a_e, n_e, weights);
    } else {
      LossWeights w = weights;
      w.lambda2 = 0.0;
      loss = combined_loss(a_u, n_u, {}, {}, w);
    }
    if (!std::isfinite(loss.report.total)) {
      throw DataError("non-finite loss for pair (" + batch.abnormal[i]->video_id + ", " + batch.normal[i]->video_id + ")");
    }
    if (grads != nullptr) tape.backward(loss.total, inv);
    sum.l_score_u += loss.report.l_score_u * inv;
    sum.l_fea_u += loss.report.l_fea_u * inv;
    sum.l_u += loss.report.l_u * inv;
    sum.l_score_e += loss.report.l_score_e * inv;
    sum.l_fea_e += loss.report.l_fea_e * inv;
    sum.l_e += loss.report.l_e * inv;
    sum.total += loss.report.total * inv;
  }
  return sum;
}

StepResult train_step(TrainState& state, const std::vector<SegmentFeatures>& data) {
  const TrainConfig& cfg = state.config;
  const Batch batch = make_batch(data, cfg.batch_size, state.rng);
  PreparedBatch pb;
  GradientSet grads = zero_gradients(state.model.params());
  StepResult result;
  try {
    pb = prepare_batch(state.model, data, batch, cfg.delta, cfg.erase_mode);
    result.report = batch_loss(state.model, pb, cfg.weights, ForwardContext{true, &state.rng}, &grads);
  } catch (const DataError& e) {
    std::string ids;
    for (auto i : batch.abnormal) ids += " " + data[i].video_id;
    for (auto i : batch.normal) ids += " " + data[i].video_id;
    throw DataError(std::string(e.what()) + " at iteration " + std::to_string(state.iteration) + "; batch:" + ids);
  }
  for (const auto& g : grads) {
    if (!g.allFinite()) throw DataError("non-finite gradient at iteration " + std::to_string(state.iteration));
  }
  adam_update(state.model.params(), grads, state.adam, cfg);
  ++state.iteration;

  std::size_t erased_videos = 0, erased_segments = 0;
  for (const auto& d : pb.decisions) {
    if (!d.erased_indices.empty()) ++erased_videos;
    erased_segments += d.erased_indices.size();
  }
  if (!pb.abnormal.empty()) {
    result.fraction_erased_videos = static_cast<double>(erased_videos) / static_cast<double>(pb.abnormal.size());
    result.mean_erased_segments = static_cast<double>(erased_segments) / static_cast<double>(pb.abnormal.size());
  }
  result.decisions = std::move(pb.decisions);
  return result;
}

void train(TrainState& state, const std::vector<SegmentFeatures>& data, const TrainOptions& options) {
  const TrainConfig& cfg = state.config;
  for (const auto& v : data) {
    if (v.x.rows() != cfg.segments || v.x.cols() != state.model.config().mstm.dim) {
      throw ShapeError("training video " + v.video_id + " does not match the model's T x D");
    }
  }
  std::ofstream metrics, audit;
  const bool write = !options.output_dir.empty();
  if (write) {
    std::filesystem::create_directories(options.output_dir);
    const bool fresh = state.iteration == 0;
    metrics.open(options.output_dir / "metrics.csv", fresh ? std::ios::trunc : std::ios::app);
    if (!metrics) throw IoError("cannot open metrics log in " + options.output_dir.string());
    if (fresh) metrics << "iteration,l_u,l_e,total,fraction_erased_videos,mean_erased_segments\n";
    metrics.precision(17);
    if (options.audit_erase) {
      audit.open(options.output_dir / "erase_audit.jsonl", fresh ? std::ios::trunc : std::ios::app);
      if (!audit) throw IoError("cannot open erase audit log in " + options.output_dir.string());
    }
  }

  while (state.iteration < cfg.max_iterations) {
    const StepResult r = train_step(state, data);
    if (write) {
      metrics << state.iteration << ',' << r.report.l_u << ',' << r.report.l_e << ',' << r.report.total << ','
              << r.fraction_erased_videos << ',' << r.mean_erased_segments << '\n';
      if (options.audit_erase) {
        for (const auto& d : r.decisions) {
          nlohmann::json j = d.to_json();
          j["iteration"] = state.iteration;
          audit << j.dump() << '\n';
        }
      }
      if (cfg.checkpoint_every > 0 && state.iteration % cfg.checkpoint_every == 0) {
        char name[64];
        std::snprintf(name, sizeof name, "checkpoint_%06lld.ckpt", static_cast<long long>(state.iteration));
        save_checkpoint(options.output_dir / name, state);
      }
    }
    if (options.on_step) options.on_step(state, r);
  }
  if (write) save_checkpoint(options.output_dir / "checkpoint.ckpt", state);
}

// ---- checkpoints ----------------------------------------------------------------

namespace {

constexpr char kMagic[] = "denet-ckpt-v1\n";

template <typename T>
void put(std::string& out, T v) {
  if constexpr (std::endian::native == std::endian::big) {
    auto bytes = std::bit_cast<std::array<char, sizeof(T)>>(v);
    std::reverse(bytes.begin(), bytes.end());
    out.append(bytes.data(), bytes.size());
  } else {
    char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    out.append(buf, sizeof(T));
  }
}

class Reader {
 public:
  Reader(const std::string& bytes, std::string source) : bytes_(bytes), source_(std::move(source)) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    T v;
    if constexpr (std::endian::native == std::endian::big) {
      std::array<char, sizeof(T)> b;
      std::memcpy(b.data(), bytes_.data() + pos_, sizeof(T));
      std::reverse(b.begin(), b.end());
      v = std::bit_cast<T>(b);
    } else {
      std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    }
    pos_ += sizeof(T);
    return v;
  }

  std::string take(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw ValidationError("truncated checkpoint: " + source_);
  }

  const std::string& bytes_;
  std::string source_;
  std::size_t pos_ = 0;
};

void put_tensor(std::string& out, const std::string& name, const Matrix& m) {
  put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
  out += name;
  put<std::uint32_t>(out, static_cast<std::uint32_t>(m.rows()));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(m.cols()));
  put<std::uint8_t>(out, 1);
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) put<double>(out, m(r, c));
}

}  // namespace

std::string serialize_checkpoint(const TrainState& state) {
  std::ostringstream rng_text;
  rng_text << state.rng;
  nlohmann::json meta{{"version", kCheckpointVersion},
                      {"train_config", state.config.to_json()},
                      {"model_config", state.model.config().to_json()},
                      {"iteration", state.iteration},
                      {"adam_step", state.adam.step},
                      {"rng_state", rng_text.str()}};
  const std::string meta_text = meta.dump();

  std::string out(kMagic);
  put<std::uint64_t>(out, meta_text.size());
  out += meta_text;
  const ParameterStore& params = state.model.params();
  const bool with_adam = !state.adam.m.empty();
  put<std::uint32_t>(out, static_cast<std::uint32_t>(params.size() * (with_adam ? 3 : 1)));
  for (const auto& p : params) put_tensor(out, p.name, p.value);
  if (with_adam) {
    for (std::size_t i = 0; i < params.size(); ++i) put_tensor(out, "adam.m/" + params[i].name, state.adam.m[i]);
    for (std::size_t i = 0; i < params.size(); ++i) put_tensor(out, "adam.v/" + params[i].name, state.adam.v[i]);
  }
  return out;
}

TrainState deserialize_checkpoint(const std::string& bytes, const std::string& source) {
  Reader in(bytes, source);
  if (in.take(sizeof(kMagic) - 1) != kMagic) throw ValidationError("not a denet-ckpt-v1 archive: " + source);
  const auto meta_len = in.get<std::uint64_t>();
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(in.take(static_cast<std::size_t>(meta_len)));
  } catch (const nlohmann::json::exception&) {
    throw ValidationError("corrupt checkpoint metadata: " + source);
  }
  if (meta.value("version", "") != kCheckpointVersion) throw ValidationError("unsupported checkpoint version: " + source);

  const TrainConfig config = TrainConfig::from_json(meta.at("train_config"));
  const ModelConfig model_cfg = ModelConfig::from_json(meta.at("model_config"));
  TrainState state{config, DeNet(model_cfg, 0), AdamState{}, Rng{}, meta.at("iteration").get<std::int64_t>()};
  state.adam.step = meta.at("adam_step").get<std::int64_t>();
  std::istringstream rng_text(meta.at("rng_state").get<std::string>());
  rng_text >> state.rng;
  if (!rng_text) throw ValidationError("corrupt generator state in checkpoint: " + source);

  ParameterStore& params = state.model.params();
  std::map<std::string, Matrix> tensors;
  const auto count = in.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string name = in.take(in.get<std::uint32_t>());
    const auto rows = in.get<std::uint32_t>();
    const auto cols = in.get<std::uint32_t>();
    if (in.get<std::uint8_t>() != 1) throw ValidationError("unsupported tensor dtype in checkpoint: " + source);
    Matrix m(rows, cols);
    for (std::uint32_t r = 0; r < rows; ++r)
      for (std::uint32_t c = 0; c < cols; ++c) m(r, c) = in.get<double>();
    tensors.emplace(name, std::move(m));
  }
  if (!in.done()) throw ValidationError("trailing bytes in checkpoint: " + source);

  auto take_tensor = [&](const std::string& name, const Matrix& like) {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw ValidationError("checkpoint is missing tensor " + name + ": " + source);
    if (it->second.rows() != like.rows() || it->second.cols() != like.cols()) {
      throw ValidationError("checkpoint tensor " + name + " has the wrong shape: " + source);
    }
    return it->second;
  };
  for (auto& p : params) p.value = take_tensor(p.name, p.value);
  if (tensors.size() == 3 * params.size()) {
    for (const auto& p : params) {
      state.adam.m.push_back(take_tensor("adam.m/" + p.name, p.value));
      state.adam.v.push_back(take_tensor("adam.v/" + p.name, p.value));
    }
  } else if (tensors.size() != params.size()) {
    throw ValidationError("unexpected tensor count in checkpoint: " + source);
  }
  return state;
}

void save_checkpoint(const std::filesystem::path& path, const TrainState& state) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const std::string bytes = serialize_checkpoint(state);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

TrainState load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return deserialize_checkpoint(ss.str(), path.string());
}

}  // namespace denet
