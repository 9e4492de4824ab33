#pragma once

#include <vector>

#include "surgtag/image.hpp"
#include "surgtag/nn.hpp"

namespace surgtag {

struct EncoderConfig {
  std::size_t image_height = 32;
  std::size_t image_width = 32;
  std::size_t channels = 3;
  std::size_t patch_size = 8;
  std::size_t dim = 64;
  std::size_t layers = 2;
  std::size_t heads = 4;

  std::size_t tokens() const { return (image_height / patch_size) * (image_width / patch_size); }
  std::size_t patch_features() const { return patch_size * patch_size * channels; }
  void validate() const;
};

/// Non-overlapping patches in raster order, each flattened as (y, x, channel).
/// Returns [T, patch^2 * C].
Tensor patchify(const ImageRaster& image, const EncoderConfig& config, Dtype dtype = Dtype::f64);

struct EncoderBlock {
  LayerNormParams norm1;
  AttentionWeights attention;
  LayerNormParams norm2;
  MlpParams mlp;
};

/// Patch-embedding transformer standing in for a pretrained vision backbone.
/// Parameters live under `encoder.*`; one set is shared by every frame.
class ImageEncoder {
 public:
  ImageEncoder() = default;
  static void declare(ParameterStore& store, const EncoderConfig& config, Rng& rng);
  static ImageEncoder bind(const ParameterStore& store, const EncoderConfig& config);

  /// [T, D] token features.
  Tensor encode_image(const ImageRaster& image, Dtype dtype = Dtype::f64) const;
  /// [N, T, D]; frame n of the output is encode_image(frames[n]).
  Tensor encode_frames(const std::vector<ImageRaster>& frames, Dtype dtype = Dtype::f64) const;

  const EncoderConfig& config() const { return config_; }

 private:
  EncoderConfig config_;
  LinearParams patch_embed_;
  Tensor position_;
  std::vector<EncoderBlock> blocks_;
  LayerNormParams final_norm_;
};

}  // namespace surgtag
