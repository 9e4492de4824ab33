#pragma once

#include <vector>

#include "surgtag/nn.hpp"

namespace surgtag {

struct TagDecoderConfig {
  std::size_t layers = 2;
  std::size_t heads = 4;
};

struct TagDecoderBlock {
  LayerNormParams query_norm;
  LayerNormParams memory_norm;
  AttentionWeights cross_attention;
  LayerNormParams mlp_norm;
  MlpParams mlp;
};

/// Cross-attention tag decoder. Every tag query attends only to the visual
/// tokens (there is no attention between tags), so a tag's logit depends on
/// nothing but its own embedding and the image. Appending tags therefore
/// leaves existing logits bitwise unchanged.
class TagDecoder {
 public:
  TagDecoder() = default;
  static void declare(ParameterStore& store, const TagDecoderConfig& config, std::size_t dim, Rng& rng);
  static TagDecoder bind(const ParameterStore& store, const TagDecoderConfig& config, std::size_t dim);

  /// visual [T, D], tag_embeddings [K, D] -> logits [K].
  Tensor decode(const Tensor& visual, const Tensor& tag_embeddings) const;

 private:
  TagDecoderConfig config_;
  std::size_t dim_ = 0;
  std::vector<TagDecoderBlock> blocks_;
  LayerNormParams final_norm_;
  LinearParams head_;
};

/// Thresholded multi-label output.
struct TagPrediction {
  std::vector<double> logits;
  std::vector<double> probabilities;
  std::vector<std::size_t> selected;  // ascending tag indices
  double threshold = 0.5;
};

/// Selects every tag with sigmoid(logit) >= threshold. The threshold must lie
/// strictly inside (0, 1).
TagPrediction apply_threshold(const std::vector<double>& logits, double threshold = 0.5);

}  // namespace surgtag
