#pragma once

// Multi-scale temporal modelling: per-scale strided convolution, a post-norm
// transformer encoder per scale, alignment by row repetition and a fused
// affine aggregation back to T x D.

#include "denet/autodiff.hpp"
#include "denet/parameters.hpp"

#include <json.hpp>

#include <vector>

namespace denet {

struct ScaleConfig {
  int scales = 3;
  int dim = 1024;
  int heads = 8;
  int encoder_layers = 1;
  int mlp_hidden = 0;  // 0 means 4 * dim
  double dropout = 0.1;

  int hidden() const { return mlp_hidden > 0 ? mlp_hidden : 4 * dim; }
  void validate() const;
};

/// Training flag plus the generator dropout masks are drawn from. Masks are
/// drawn in a fixed order, so identical generator state gives identical
/// masks.
struct ForwardContext {
  bool training = false;
  Rng* rng = nullptr;
};

/// Inverted dropout: returns x unchanged in eval mode or when p == 0.
ad::Var dropout(ad::Var x, double p, const ForwardContext& ctx);

/// Lengths of the scale ladder, T / 2^(s-1) for s = 1..S.
std::vector<int> scale_lengths(int segments, int scales);

class Mstm {
 public:
  /// Parameter indices of one scale's conv + encoder.
  struct ScaleParams {
    std::size_t conv_w, conv_b, pos;
    std::size_t in_w, in_b, out_w, out_b;
    std::size_t norm1_g, norm1_b;
    std::size_t fc1_w, fc1_b, fc2_w, fc2_b;
    std::size_t norm2_g, norm2_b;
  };

  /// Registers all parameters in `store` (names "mstm.scale<s>.*" and
  /// "mstm.aggregate.*") initialised from `rng`.
  Mstm(const ScaleConfig& cfg, int segments, ParameterStore& store, Rng& rng);

  const ScaleConfig& config() const { return cfg_; }
  int segments() const { return segments_; }
  const ScaleParams& scale_params(int s) const { return scale_.at(static_cast<std::size_t>(s - 1)); }
  std::size_t aggregate_weight() const { return agg_w_; }
  std::size_t aggregate_bias() const { return agg_b_; }

  /// Strided conv at scale s (1-based): kernel = stride = 2^(s-1), no
  /// padding, no activation.
  ad::Var local_conv(ad::Var x, int s) const;

  /// One post-norm encoder layer on (xbar + PE^s).
  ad::Var global_encode(ad::Var xbar, int s, const ForwardContext& ctx) const;

  /// Repeats each row T / rows times.
  static ad::Var align(ad::Var xhat_s, int segments);

  /// Concatenate along features and project S*D -> D.
  ad::Var aggregate(const std::vector<ad::Var>& aligned) const;

  ad::Var forward(ad::Var x, const ForwardContext& ctx) const;

  /// Evaluation-mode forward on a throwaway tape.
  Matrix forward(const ParameterStore& store, const Matrix& x) const;

 private:
  ad::Var attention(ad::Var h, const ScaleParams& p) const;

  ScaleConfig cfg_;
  int segments_;
  std::vector<ScaleParams> scale_;
  std::size_t agg_w_ = 0, agg_b_ = 0;
};

}  // namespace denet
