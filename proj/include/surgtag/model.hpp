#pragma once

#include <atomic>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "surgtag/embedding.hpp"
#include "surgtag/encoder.hpp"
#include "surgtag/fusion.hpp"
#include "surgtag/tag_decoder.hpp"
#include "surgtag/text_decoder.hpp"
#include "surgtag/vocabulary.hpp"

namespace surgtag {

struct ModelConfig {
  EncoderConfig encoder;
  FusionConfig fusion;
  TagDecoderConfig tag_decoder;
  TextDecoderConfig text_decoder;

  std::size_t dim() const { return encoder.dim; }
};

/// Name of the frozen [K, D] tag-embedding parameter.
inline constexpr const char* kTagEmbeddingParam = "text_encoder.tag_embeddings";

/// Image encoder + temporal fusion + tag decoder (+ optional caption head),
/// with the tag vocabulary and its frozen embeddings. All parameters live in
/// one ParameterStore; the modules are views bound to it by name.
class Model {
 public:
  /// Fresh model with seeded initialization. `text_vocab_size` == 0 omits the
  /// caption head (inference-only models).
  Model(ModelConfig config, TagVocabulary vocab, const TagEmbeddingTable& embeddings, std::size_t text_vocab_size,
        std::uint64_t seed);
  /// Model over existing parameters (e.g. loaded from a checkpoint).
  Model(ModelConfig config, TagVocabulary vocab, ParameterStore params);

  const ModelConfig& config() const { return config_; }
  const TagVocabulary& vocabulary() const { return vocab_; }
  ParameterStore& parameters() { return params_; }
  const ParameterStore& parameters() const { return params_; }
  /// Re-fetch module views after parameters were replaced.
  void rebind();

  /// Input precision for inference; f32 rounds every activation to binary32.
  void set_precision(Dtype dtype) { precision_ = dtype; }
  Dtype precision() const { return precision_; }

  Tensor encode_image(const ImageRaster& image) const;
  Tensor encode_frames(const std::vector<ImageRaster>& frames) const;
  Tensor fuse(const Tensor& frames) const;
  /// Logits [K] for visual tokens [T, D]; requires K >= 1.
  Tensor tag_logits(const Tensor& visual) const;
  /// Logits as plain values; empty when the vocabulary is empty.
  std::vector<double> decode(const Tensor& visual) const;

  /// Frozen [K, D] embeddings (undefined when K == 0).
  Tensor tag_embeddings() const;
  bool has_text_decoder() const { return text_decoder_.has_value(); }
  const TextDecoder& text_decoder() const;

  /// Appends tags (category other, split both) with provider embeddings.
  void extend_vocabulary(const std::vector<std::string>& names, const TagEmbeddingTable& provider);
  /// Appends entries as given (names must already be normalized).
  void append_tags(const std::vector<TagEntry>& entries, const TagEmbeddingTable& provider);

  std::uint64_t decode_calls() const { return counters_->decode.load(); }
  std::uint64_t fuse_calls() const { return counters_->fuse.load(); }
  void reset_counters() const;

 private:
  struct Counters {
    std::atomic<std::uint64_t> decode{0};
    std::atomic<std::uint64_t> fuse{0};
  };

  ModelConfig config_;
  TagVocabulary vocab_;
  ParameterStore params_;
  Dtype precision_ = Dtype::f32;
  ImageEncoder encoder_;
  TemporalFusion fusion_;
  TagDecoder tag_decoder_;
  std::optional<TextDecoder> text_decoder_;
  std::shared_ptr<Counters> counters_ = std::make_shared<Counters>();
};

/// Validates `names` and returns `vocab` with them appended (category other,
/// split both). Rejects empty names and duplicates, naming the tag.
TagVocabulary extend_vocabulary(const TagVocabulary& vocab, const std::vector<std::string>& names,
                                const TagEmbeddingTable& provider);

/// Indices of `count` frames spread at regular intervals over `available`
/// frames (all of them when count >= available).
std::vector<std::size_t> sample_frame_indices(std::size_t available, std::size_t count);

/// encode -> decode -> threshold.
TagPrediction infer_image(const Model& model, const ImageRaster& image, double threshold = 0.5);
/// Samples up to `max_frames` frames, encodes them, fuses once and decodes once.
/// A single frame still goes through the fusion layer.
TagPrediction infer_video(const Model& model, const std::vector<ImageRaster>& frames, double threshold = 0.5,
                          std::size_t max_frames = 8);
/// Per-frame image inference; selected tags are the union over frames and the
/// reported logit of each tag is its maximum over frames.
TagPrediction infer_video_imagewise(const Model& model, const std::vector<ImageRaster>& frames, double threshold = 0.5);

}  // namespace surgtag
