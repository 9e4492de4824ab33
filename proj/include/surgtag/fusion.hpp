#pragma once

#include <string>
#include <utility>
#include <vector>

#include "surgtag/nn.hpp"

namespace surgtag {

enum class FusionMode { attention, average };

std::string to_string(FusionMode mode);
FusionMode fusion_mode_from_string(const std::string& text);

struct FusionConfig {
  std::size_t max_frames = 8;
  std::size_t heads = 4;
  bool use_positional = true;
  FusionMode mode = FusionMode::attention;
};

/// Name and shape of one fusion parameter, in checkpoint order.
struct ParamSpec {
  std::string name;
  Shape shape;
};

/// Fusion parameters for a given feature dim. Average mode has none.
std::vector<ParamSpec> describe_fusion_params(const FusionConfig& config, std::size_t dim);

/// Temporal-attention fusion: [N, T, D] frame tokens -> [T, D] video tokens.
///
/// Attention mode adds a learned per-frame embedding (when enabled) to every
/// token of frame n, regroups the tensor as T sequences of length N (one per
/// token position), runs shared multi-head self-attention over each sequence
/// with a residual connection and layer norm, then averages over frames.
/// Average mode is the parameter-free mean over the frame axis.
class TemporalFusion {
 public:
  TemporalFusion() = default;
  static void declare(ParameterStore& store, const FusionConfig& config, std::size_t dim, Rng& rng);
  static TemporalFusion bind(const ParameterStore& store, const FusionConfig& config, std::size_t dim);

  Tensor fuse(const Tensor& frames) const;
  const FusionConfig& config() const { return config_; }

 private:
  FusionConfig config_;
  std::size_t dim_ = 0;
  Tensor position_;  // [max_frames, D]
  AttentionWeights attention_;
  LayerNormParams norm_;
};

}  // namespace surgtag
