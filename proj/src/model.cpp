#include "denet/model.hpp"

#include "denet/error.hpp"
#include "denet/feature_store.hpp"

namespace denet {

void ModelConfig::validate() const {
  mstm.validate();
  head.validate();
  check_segment_count(segments, mstm.scales);
}

nlohmann::json ModelConfig::to_json() const {
  return nlohmann::json{{"segments", segments},
                        {"scales", mstm.scales},
                        {"dim", mstm.dim},
                        {"heads", mstm.heads},
                        {"encoder_layers", mstm.encoder_layers},
                        {"mlp_hidden", mstm.hidden()},
                        {"encoder_dropout", mstm.dropout},
                        {"head_hidden1", head.hidden1},
                        {"head_hidden2", head.hidden2},
                        {"head_dropout", head.dropout}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  try {
    ModelConfig c;
    c.segments = j.at("segments").get<int>();
    c.mstm.scales = j.at("scales").get<int>();
    c.mstm.dim = j.at("dim").get<int>();
    c.mstm.heads = j.at("heads").get<int>();
    c.mstm.encoder_layers = j.at("encoder_layers").get<int>();
    c.mstm.mlp_hidden = j.at("mlp_hidden").get<int>();
    c.mstm.dropout = j.at("encoder_dropout").get<double>();
    c.head.hidden1 = j.at("head_hidden1").get<int>();
    c.head.hidden2 = j.at("head_hidden2").get<int>();
    c.head.dropout = j.at("head_dropout").get<double>();
    c.validate();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("bad model config: ") + e.what());
  }
}

DeNet::DeNet(const ModelConfig& cfg, std::uint64_t init_seed) : DeNet(cfg, Rng(init_seed)) {}

DeNet::DeNet(const ModelConfig& cfg, Rng&& rng)
    : cfg_(cfg),
      mstm_((cfg.validate(), cfg.mstm), cfg.segments, store_, rng),
      head_(cfg.mstm.dim, cfg.head, store_, rng) {}

DeNet::Output DeNet::forward(ad::Tape& tape, const Matrix& x, const ForwardContext& ctx) const {
  if (!x.allFinite()) throw DataError("non-finite segment features");
  ad::Var features = mstm_.forward(tape.constant(x), ctx);
  return Output{features, head_.score(features, ctx)};
}

SegmentScores DeNet::score(const Matrix& x) const {
  ad::Tape tape(&store_, nullptr);
  return forward(tape, x, ForwardContext{}).scores.value().col(0);
}

}  // namespace denet
