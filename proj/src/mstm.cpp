#include "denet/mstm.hpp"

#include "denet/error.hpp"
#include "denet/feature_store.hpp"

#include <cmath>
#include <cstdint>
#include <string>

namespace denet {

void ScaleConfig::validate() const {
  if (scales < 1) throw ConfigError("scales must be >= 1");
  if (dim < 1) throw ConfigError("feature dim must be >= 1");
  if (heads < 1 || dim % heads != 0) {
    throw ConfigError("feature dim " + std::to_string(dim) + " is not divisible by heads " + std::to_string(heads));
  }
  if (encoder_layers != 1) throw ConfigError("only one encoder layer per scale is supported");
  if (mlp_hidden < 0) throw ConfigError("mlp_hidden must be non-negative");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must be in [0, 1)");
}

ad::Var dropout(ad::Var x, double p, const ForwardContext& ctx) {
  if (!ctx.training || p <= 0.0) return x;
  if (ctx.rng == nullptr) throw Error("training-mode forward needs a generator");
  // keep iff a 53-bit uniform draw falls below (1 - p) * 2^53
  const auto threshold = static_cast<std::uint64_t>(std::ldexp(1.0 - p, 53));
  const double s = 1.0 / (1.0 - p);
  Matrix mask(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < mask.rows(); ++r)
    for (Eigen::Index c = 0; c < mask.cols(); ++c) mask(r, c) = ((*ctx.rng)() >> 11) < threshold ? s : 0.0;
  return ad::mask_mul(x, mask);
}

std::vector<int> scale_lengths(int segments, int scales) {
  check_segment_count(segments, scales);
  std::vector<int> lengths;
  for (int s = 1; s <= scales; ++s) lengths.push_back(segments >> (s - 1));
  return lengths;
}

Mstm::Mstm(const ScaleConfig& cfg, int segments, ParameterStore& store, Rng& rng)
    : cfg_(cfg), segments_(segments) {
  cfg_.validate();
  const auto lengths = scale_lengths(segments, cfg_.scales);
  const Eigen::Index d = cfg_.dim;
  const Eigen::Index h = cfg_.hidden();
  for (int s = 1; s <= cfg_.scales; ++s) {
    const std::string pre = "mstm.scale" + std::to_string(s) + ".";
    const Eigen::Index k = Eigen::Index{1} << (s - 1);
    ScaleParams p{};
    p.conv_w = store.add(pre + "conv.weight", fan_in_uniform(k * d, d, k * d, rng), true);
    p.conv_b = store.add(pre + "conv.bias", fan_in_uniform(1, d, k * d, rng), false);
    p.pos = store.add(pre + "pos_embedding", Matrix::Zero(lengths[static_cast<std::size_t>(s - 1)], d), false);
    p.in_w = store.add(pre + "attn.in_proj.weight", fan_in_uniform(d, 3 * d, d, rng), true);
    p.in_b = store.add(pre + "attn.in_proj.bias", fan_in_uniform(1, 3 * d, d, rng), false);
    p.out_w = store.add(pre + "attn.out_proj.weight", fan_in_uniform(d, d, d, rng), true);
    p.out_b = store.add(pre + "attn.out_proj.bias", fan_in_uniform(1, d, d, rng), false);
    p.norm1_g = store.add(pre + "norm1.weight", Matrix::Ones(1, d), false);
    p.norm1_b = store.add(pre + "norm1.bias", Matrix::Zero(1, d), false);
    p.fc1_w = store.add(pre + "mlp.fc1.weight", fan_in_uniform(d, h, d, rng), true);
    p.fc1_b = store.add(pre + "mlp.fc1.bias", fan_in_uniform(1, h, d, rng), false);
    p.fc2_w = store.add(pre + "mlp.fc2.weight", fan_in_uniform(h, d, h, rng), true);
    p.fc2_b = store.add(pre + "mlp.fc2.bias", fan_in_uniform(1, d, h, rng), false);
    p.norm2_g = store.add(pre + "norm2.weight", Matrix::Ones(1, d), false);
    p.norm2_b = store.add(pre + "norm2.bias", Matrix::Zero(1, d), false);
    scale_.push_back(p);
  }
  const Eigen::Index fan = cfg_.scales * d;
  agg_w_ = store.add("mstm.aggregate.weight", fan_in_uniform(fan, d, fan, rng), true);
  agg_b_ = store.add("mstm.aggregate.bias", fan_in_uniform(1, d, fan, rng), false);
}

ad::Var Mstm::local_conv(ad::Var x, int s) const {
  if (s < 1 || s > cfg_.scales) throw ShapeError("scale index out of range");
  const Eigen::Index k = Eigen::Index{1} << (s - 1);
  if (x.rows() % k != 0) throw ShapeError("segment count not divisible by conv stride " + std::to_string(k));
  if (x.cols() != cfg_.dim) throw ShapeError("feature width does not match the model");
  ad::Tape& t = *x.tape;
  const ScaleParams& p = scale_params(s);
  ad::Var windows = k == 1 ? x : ad::group_rows(x, k);
  return ad::add_row(ad::matmul(windows, t.param(p.conv_w)), t.param(p.conv_b));
}

ad::Var Mstm::attention(ad::Var h, const ScaleParams& p) const {
  ad::Tape& t = *h.tape;
  const Eigen::Index d = cfg_.dim;
  const Eigen::Index dh = d / cfg_.heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  ad::Var qkv = ad::add_row(ad::matmul(h, t.param(p.in_w)), t.param(p.in_b));
  std::vector<ad::Var> heads;
  heads.reserve(static_cast<std::size_t>(cfg_.heads));
  for (int i = 0; i < cfg_.heads; ++i) {
    ad::Var q = ad::slice_cols(qkv, i * dh, dh);
    ad::Var k = ad::slice_cols(qkv, d + i * dh, dh);
    ad::Var v = ad::slice_cols(qkv, 2 * d + i * dh, dh);
    ad::Var w = ad::softmax_rows(ad::scale(ad::matmul(q, ad::transpose(k)), inv_sqrt));
    heads.push_back(ad::matmul(w, v));
  }
  ad::Var merged = cfg_.heads == 1 ? heads.front() : ad::concat_cols(heads);
  return ad::add_row(ad::matmul(merged, t.param(p.out_w)), t.param(p.out_b));
}

ad::Var Mstm::global_encode(ad::Var xbar, int s, const ForwardContext& ctx) const {
  if (s < 1 || s > cfg_.scales) throw ShapeError("scale index out of range");
  ad::Tape& t = *xbar.tape;
  const ScaleParams& p = scale_params(s);
  ad::Var pe = t.param(p.pos);
  if (pe.rows() != xbar.rows() || pe.cols() != xbar.cols()) {
    throw ShapeError("scale " + std::to_string(s) + " input length " + std::to_string(xbar.rows()) +
                     " does not match positional encoding length " + std::to_string(pe.rows()));
  }
  ad::Var h = ad::add(xbar, pe);
  ad::Var a = dropout(attention(h, p), cfg_.dropout, ctx);
  ad::Var h1 = ad::layer_norm(ad::add(h, a), t.param(p.norm1_g), t.param(p.norm1_b));
  ad::Var m = ad::relu(ad::add_row(ad::matmul(h1, t.param(p.fc1_w)), t.param(p.fc1_b)));
  m = dropout(m, cfg_.dropout, ctx);
  m = dropout(ad::add_row(ad::matmul(m, t.param(p.fc2_w)), t.param(p.fc2_b)), cfg_.dropout, ctx);
  return ad::layer_norm(ad::add(h1, m), t.param(p.norm2_g), t.param(p.norm2_b));
}

ad::Var Mstm::align(ad::Var xhat_s, int segments) {
  const Eigen::Index rows = xhat_s.rows();
  if (rows < 1 || segments % rows != 0) {
    throw ShapeError("cannot align " + std::to_string(rows) + " rows to " + std::to_string(segments));
  }
  const Eigen::Index k = segments / rows;
  return k == 1 ? xhat_s : ad::repeat_rows(xhat_s, k);
}

ad::Var Mstm::aggregate(const std::vector<ad::Var>& aligned) const {
  if (static_cast<int>(aligned.size()) != cfg_.scales) throw ShapeError("aggregate expects one input per scale");
  for (const auto& a : aligned) {
    if (a.rows() != aligned.front().rows() || a.cols() != cfg_.dim) throw ShapeError("aggregate input shape mismatch");
  }
  ad::Tape& t = *aligned.front().tape;
  ad::Var cat = aligned.size() == 1 ? aligned.front() : ad::concat_cols(aligned);
  return ad::add_row(ad::matmul(cat, t.param(agg_w_)), t.param(agg_b_));
}

ad::Var Mstm::forward(ad::Var x, const ForwardContext& ctx) const {
  if (x.rows() != segments_) {
    throw ShapeError("expected " + std::to_string(segments_) + " segments, got " + std::to_string(x.rows()));
  }
  std::vector<ad::Var> aligned;
  aligned.reserve(static_cast<std::size_t>(cfg_.scales));
  for (int s = 1; s <= cfg_.scales; ++s) {
    aligned.push_back(align(global_encode(local_conv(x, s), s, ctx), segments_));
  }
  return aggregate(aligned);
}

Matrix Mstm::forward(const ParameterStore& store, const Matrix& x) const {
  ad::Tape tape(&store, nullptr);
  return forward(tape.constant(x), ForwardContext{}).value();
}

}  // namespace denet
