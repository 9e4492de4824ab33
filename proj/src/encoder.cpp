#include "surgtag/encoder.hpp"

#include "surgtag/errors.hpp"

namespace surgtag {

void EncoderConfig::validate() const {
  if (patch_size == 0 || dim == 0 || heads == 0) throw ConfigError("encoder: patch_size, dim and heads must be positive");
  if (dim % heads != 0) {
    throw ConfigError("encoder: dim " + std::to_string(dim) + " not divisible by " + std::to_string(heads) + " heads");
  }
  if (image_height % patch_size != 0 || image_width % patch_size != 0 || tokens() == 0) {
    throw ConfigError("encoder: image " + std::to_string(image_height) + "x" + std::to_string(image_width) +
                      " must be a nonzero multiple of patch size " + std::to_string(patch_size));
  }
  if (channels != 1 && channels != 3) throw ConfigError("encoder: channels must be 1 or 3");
}

Tensor patchify(const ImageRaster& image, const EncoderConfig& config, Dtype dtype) {
  image.validate();
  const std::size_t p = config.patch_size;
  if (p == 0 || image.height % p != 0 || image.width % p != 0) {
    throw ConfigError("patchify: image " + std::to_string(image.height) + "x" + std::to_string(image.width) +
                      " must be a multiple of " + std::to_string(p));
  }
  const std::size_t rows = image.height / p;
  const std::size_t cols = image.width / p;
  const std::size_t c = image.channels;
  std::vector<double> out;
  out.reserve(image.pixels.size());
  for (std::size_t pr = 0; pr < rows; ++pr) {
    for (std::size_t pc = 0; pc < cols; ++pc) {
      for (std::size_t y = 0; y < p; ++y) {
        for (std::size_t x = 0; x < p; ++x) {
          for (std::size_t ch = 0; ch < c; ++ch) out.push_back(image.at(pr * p + y, pc * p + x, ch));
        }
      }
    }
  }
  return Tensor::from({rows * cols, p * p * c}, std::move(out), dtype);
}

void ImageEncoder::declare(ParameterStore& store, const EncoderConfig& config, Rng& rng) {
  config.validate();
  const std::size_t d = config.dim;
  LinearParams::create(store, "encoder.patch_embed", config.patch_features(), d, rng);
  store.add_uniform("encoder.position", {config.tokens(), d}, d, rng);
  for (std::size_t l = 0; l < config.layers; ++l) {
    const std::string prefix = "encoder.block" + std::to_string(l);
    LayerNormParams::create(store, prefix + ".norm1", d);
    AttentionWeights::create(store, prefix + ".attn", d, rng);
    LayerNormParams::create(store, prefix + ".norm2", d);
    MlpParams::create(store, prefix + ".mlp", d, rng);
  }
  LayerNormParams::create(store, "encoder.final_norm", d);
}

ImageEncoder ImageEncoder::bind(const ParameterStore& store, const EncoderConfig& config) {
  config.validate();
  ImageEncoder enc;
  enc.config_ = config;
  enc.patch_embed_ = LinearParams::bind(store, "encoder.patch_embed");
  enc.position_ = store.get("encoder.position").tensor;
  if (enc.patch_embed_.weight.shape() != Shape{config.patch_features(), config.dim} ||
      enc.position_.shape() != Shape{config.tokens(), config.dim}) {
    throw ConfigError("encoder parameters do not match the encoder config");
  }
  for (std::size_t l = 0; l < config.layers; ++l) {
    const std::string prefix = "encoder.block" + std::to_string(l);
    enc.blocks_.push_back({LayerNormParams::bind(store, prefix + ".norm1"), AttentionWeights::bind(store, prefix + ".attn"),
                           LayerNormParams::bind(store, prefix + ".norm2"), MlpParams::bind(store, prefix + ".mlp")});
  }
  enc.final_norm_ = LayerNormParams::bind(store, "encoder.final_norm");
  return enc;
}

Tensor ImageEncoder::encode_image(const ImageRaster& image, Dtype dtype) const {
  if (image.height != config_.image_height || image.width != config_.image_width || image.channels != config_.channels) {
    throw ConfigError("encoder expects " + std::to_string(config_.image_height) + "x" + std::to_string(config_.image_width) +
                      "x" + std::to_string(config_.channels) + " images, got " + std::to_string(image.height) + "x" +
                      std::to_string(image.width) + "x" + std::to_string(image.channels));
  }
  Tensor x = add(patch_embed_(patchify(image, config_, dtype)), position_);
  for (std::size_t l = 0; l < blocks_.size(); ++l) {
    const EncoderBlock& b = blocks_[l];
    Tensor h = b.norm1(x);
    x = add(x, multi_head_attention(h, h, h, b.attention, config_.heads));
    x = add(x, b.mlp(b.norm2(x)));
    if (!all_finite(x)) throw NumericError("encoder: non-finite activations after layer " + std::to_string(l));
  }
  return final_norm_(x);
}

Tensor ImageEncoder::encode_frames(const std::vector<ImageRaster>& frames, Dtype dtype) const {
  if (frames.empty()) throw ValidationError("encode_frames: no frames");
  for (const auto& f : frames) {
    if (f.height != frames.front().height || f.width != frames.front().width || f.channels != frames.front().channels) {
      throw ValidationError("encode_frames: frames have different dimensions");
    }
  }
  std::vector<Tensor> features;
  features.reserve(frames.size());
  for (const auto& f : frames) features.push_back(encode_image(f, dtype));
  return stack(features);
}

}  // namespace surgtag
