#include "surgtag/fusion.hpp"

#include "surgtag/errors.hpp"

namespace surgtag {

std::string to_string(FusionMode mode) { return mode == FusionMode::attention ? "attention" : "average"; }

FusionMode fusion_mode_from_string(const std::string& text) {
  if (text == "attention") return FusionMode::attention;
  if (text == "average") return FusionMode::average;
  throw ConfigError("unknown fusion mode '" + text + "' (expected attention|average)");
}

std::vector<ParamSpec> describe_fusion_params(const FusionConfig& config, std::size_t dim) {
  if (config.mode == FusionMode::average) return {};
  std::vector<ParamSpec> specs;
  if (config.use_positional) specs.push_back({"fusion.position", {config.max_frames, dim}});
  for (const char* w : {"wq", "wk", "wv", "wo"}) specs.push_back({std::string("fusion.attn.") + w, {dim, dim}});
  specs.push_back({"fusion.norm.gamma", {dim}});
  specs.push_back({"fusion.norm.beta", {dim}});
  return specs;
}

void TemporalFusion::declare(ParameterStore& store, const FusionConfig& config, std::size_t dim, Rng& rng) {
  if (config.mode == FusionMode::average) return;
  if (config.heads == 0 || dim % config.heads != 0) {
    throw ConfigError("fusion: dim " + std::to_string(dim) + " not divisible by " + std::to_string(config.heads) + " heads");
  }
  if (config.max_frames == 0) throw ConfigError("fusion: max_frames must be positive");
  if (config.use_positional) store.add_uniform("fusion.position", {config.max_frames, dim}, dim, rng);
  AttentionWeights::create(store, "fusion.attn", dim, rng);
  LayerNormParams::create(store, "fusion.norm", dim);
}

TemporalFusion TemporalFusion::bind(const ParameterStore& store, const FusionConfig& config, std::size_t dim) {
  TemporalFusion f;
  f.config_ = config;
  f.dim_ = dim;
  if (config.mode == FusionMode::average) return f;
  if (config.use_positional) f.position_ = store.get("fusion.position").tensor;
  f.attention_ = AttentionWeights::bind(store, "fusion.attn");
  f.norm_ = LayerNormParams::bind(store, "fusion.norm");
  return f;
}

Tensor TemporalFusion::fuse(const Tensor& frames) const {
  if (frames.ndim() != 3) throw DimensionError("fuse expects [N,T,D], got " + shape_str(frames.shape()));
  const std::size_t n = frames.dim(0);
  if (frames.dim(2) != dim_) {
    throw DimensionError("fuse: feature dim " + std::to_string(frames.dim(2)) + " != " + std::to_string(dim_));
  }
  if (config_.mode == FusionMode::average) return mean_axis(frames, 0);
  if (n > config_.max_frames) {
    throw ConfigError("fuse: " + std::to_string(n) + " frames exceed max_frames " + std::to_string(config_.max_frames));
  }
  Tensor seq = permute(frames, {1, 0, 2});  // [T, N, D]
  if (config_.use_positional) seq = add(seq, slice_rows(position_, 0, n));
  Tensor attended = multi_head_attention(seq, seq, seq, attention_, config_.heads);
  Tensor mixed = norm_(add(seq, attended));
  return mean_axis(mixed, 1);
}

}  // namespace surgtag
