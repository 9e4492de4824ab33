#include "surgtag/tag_decoder.hpp"

#include <cmath>

#include "surgtag/errors.hpp"

namespace surgtag {

void TagDecoder::declare(ParameterStore& store, const TagDecoderConfig& config, std::size_t dim, Rng& rng) {
  if (config.heads == 0 || dim % config.heads != 0) {
    throw ConfigError("tag decoder: dim " + std::to_string(dim) + " not divisible by " + std::to_string(config.heads) + " heads");
  }
  for (std::size_t l = 0; l < config.layers; ++l) {
    const std::string prefix = "tag_decoder.block" + std::to_string(l);
    LayerNormParams::create(store, prefix + ".query_norm", dim);
    LayerNormParams::create(store, prefix + ".memory_norm", dim);
    AttentionWeights::create(store, prefix + ".cross_attn", dim, rng);
    LayerNormParams::create(store, prefix + ".mlp_norm", dim);
    MlpParams::create(store, prefix + ".mlp", dim, rng);
  }
  LayerNormParams::create(store, "tag_decoder.final_norm", dim);
  LinearParams::create(store, "tag_decoder.head", dim, 1, rng);
}

TagDecoder TagDecoder::bind(const ParameterStore& store, const TagDecoderConfig& config, std::size_t dim) {
  TagDecoder dec;
  dec.config_ = config;
  dec.dim_ = dim;
  for (std::size_t l = 0; l < config.layers; ++l) {
    const std::string prefix = "tag_decoder.block" + std::to_string(l);
    dec.blocks_.push_back({LayerNormParams::bind(store, prefix + ".query_norm"),
                           LayerNormParams::bind(store, prefix + ".memory_norm"),
                           AttentionWeights::bind(store, prefix + ".cross_attn"),
                           LayerNormParams::bind(store, prefix + ".mlp_norm"), MlpParams::bind(store, prefix + ".mlp")});
  }
  dec.final_norm_ = LayerNormParams::bind(store, "tag_decoder.final_norm");
  dec.head_ = LinearParams::bind(store, "tag_decoder.head");
  return dec;
}

Tensor TagDecoder::decode(const Tensor& visual, const Tensor& tag_embeddings) const {
  if (visual.ndim() != 2 || visual.dim(1) != dim_) {
    throw ConfigError("tag decoder expects visual [T," + std::to_string(dim_) + "], got " + shape_str(visual.shape()));
  }
  if (tag_embeddings.ndim() != 2 || tag_embeddings.dim(1) != dim_) {
    throw ConfigError("tag embedding dim does not match decoder dim " + std::to_string(dim_) + ": " +
                      shape_str(tag_embeddings.shape()));
  }
  Tensor q = tag_embeddings;
  for (const auto& b : blocks_) {
    Tensor memory = b.memory_norm(visual);
    q = add(q, multi_head_attention(b.query_norm(q), memory, memory, b.cross_attention, config_.heads));
    q = add(q, b.mlp(b.mlp_norm(q)));
  }
  Tensor logits = head_(final_norm_(q));  // [K, 1]
  return reshape(logits, {tag_embeddings.dim(0)});
}

TagPrediction apply_threshold(const std::vector<double>& logits, double threshold) {
  if (!(threshold > 0.0 && threshold < 1.0)) {
    throw ValidationError("threshold must lie in (0,1), got " + std::to_string(threshold));
  }
  TagPrediction pred;
  pred.logits = logits;
  pred.threshold = threshold;
  pred.probabilities.reserve(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const double z = logits[i];
    const double p = z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
    pred.probabilities.push_back(p);
    if (p >= threshold) pred.selected.push_back(i);
  }
  return pred;
}

}  // namespace surgtag
