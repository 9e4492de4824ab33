#include "surgtag/model.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "surgtag/errors.hpp"

namespace surgtag {

namespace {

Tensor embedding_rows(const TagVocabulary& vocab, const TagEmbeddingTable& provider, std::size_t dim) {
  if (provider.dim() != dim) {
    throw ConfigError("embedding dim " + std::to_string(provider.dim()) + " does not match model dim " + std::to_string(dim));
  }
  std::vector<double> values;
  values.reserve(vocab.size() * dim);
  for (const auto& e : vocab.entries()) {
    auto v = provider.embed(e.name);
    values.insert(values.end(), v.begin(), v.end());
  }
  return Tensor::from({vocab.size(), dim}, std::move(values));
}

}  // namespace

Model::Model(ModelConfig config, TagVocabulary vocab, const TagEmbeddingTable& embeddings, std::size_t text_vocab_size,
             std::uint64_t seed)
    : config_(std::move(config)), vocab_(std::move(vocab)) {
  Rng rng(seed);
  const std::size_t d = config_.dim();
  ImageEncoder::declare(params_, config_.encoder, rng);
  TemporalFusion::declare(params_, config_.fusion, d, rng);
  TagDecoder::declare(params_, config_.tag_decoder, d, rng);
  if (text_vocab_size > 0) TextDecoder::declare(params_, config_.text_decoder, d, text_vocab_size, rng);
  if (!vocab_.empty()) params_.add(kTagEmbeddingParam, embedding_rows(vocab_, embeddings, d), true);
  rebind();
}

Model::Model(ModelConfig config, TagVocabulary vocab, ParameterStore params)
    : config_(std::move(config)), vocab_(std::move(vocab)), params_(std::move(params)) {
  rebind();
}

void Model::rebind() {
  const std::size_t d = config_.dim();
  encoder_ = ImageEncoder::bind(params_, config_.encoder);
  fusion_ = TemporalFusion::bind(params_, config_.fusion, d);
  tag_decoder_ = TagDecoder::bind(params_, config_.tag_decoder, d);
  if (params_.contains("text_decoder.token_embedding")) {
    text_decoder_ = TextDecoder::bind(params_, config_.text_decoder, d);
  } else {
    text_decoder_.reset();
  }
  if (vocab_.empty()) {
    if (params_.contains(kTagEmbeddingParam)) throw ConfigError("tag embeddings present for an empty vocabulary");
  } else {
    const Parameter& p = params_.get(kTagEmbeddingParam);
    if (p.tensor.shape() != Shape{vocab_.size(), d}) {
      throw ConfigError("tag embeddings " + shape_str(p.tensor.shape()) + " do not match vocabulary size " +
                        std::to_string(vocab_.size()));
    }
    if (!p.frozen) throw ConfigError("tag embeddings must be frozen");
  }
}

Tensor Model::encode_image(const ImageRaster& image) const { return encoder_.encode_image(image, precision_); }

Tensor Model::encode_frames(const std::vector<ImageRaster>& frames) const {
  return encoder_.encode_frames(frames, precision_);
}

Tensor Model::fuse(const Tensor& frames) const {
  ++counters_->fuse;
  return fusion_.fuse(frames);
}

Tensor Model::tag_embeddings() const {
  if (vocab_.empty()) return {};
  return params_.get(kTagEmbeddingParam).tensor;
}

Tensor Model::tag_logits(const Tensor& visual) const {
  if (vocab_.empty()) throw ValidationError("tag_logits on an empty vocabulary");
  ++counters_->decode;
  return tag_decoder_.decode(visual, tag_embeddings());
}

std::vector<double> Model::decode(const Tensor& visual) const {
  if (vocab_.empty()) {
    ++counters_->decode;
    return {};
  }
  Tensor logits = tag_logits(visual);
  return {logits.data().begin(), logits.data().end()};
}

const TextDecoder& Model::text_decoder() const {
  if (!text_decoder_) throw ConfigError("model has no text decoder");
  return *text_decoder_;
}

void Model::extend_vocabulary(const std::vector<std::string>& names, const TagEmbeddingTable& provider) {
  TagVocabulary extended = surgtag::extend_vocabulary(vocab_, names, provider);
  std::vector<TagEntry> added(extended.entries().begin() + static_cast<std::ptrdiff_t>(vocab_.size()),
                              extended.entries().end());
  append_tags(added, provider);
}

void Model::append_tags(const std::vector<TagEntry>& entries, const TagEmbeddingTable& provider) {
  if (entries.empty()) return;
  TagVocabulary extended = vocab_;
  TagVocabulary added;
  for (const auto& e : entries) {
    if (e.name.empty() || e.name != normalize_tag(e.name)) throw ValidationError("invalid tag name: '" + e.name + "'");
    if (extended.contains(e.name)) throw ValidationError("tag already in vocabulary: " + e.name);
    extended.add(e);
    added.add(e);
  }
  const std::size_t d = config_.dim();
  Tensor rows = embedding_rows(added, provider, d);
  if (vocab_.empty()) {
    params_.add(kTagEmbeddingParam, rows, true);
  } else {
    Tensor old = params_.get(kTagEmbeddingParam).tensor;
    std::vector<double> values(old.data().begin(), old.data().end());
    values.insert(values.end(), rows.data().begin(), rows.data().end());
    params_.replace(kTagEmbeddingParam, Tensor::from({extended.size(), d}, std::move(values)));
  }
  vocab_ = std::move(extended);
  rebind();
}

void Model::reset_counters() const {
  counters_->decode = 0;
  counters_->fuse = 0;
}

TagVocabulary extend_vocabulary(const TagVocabulary& vocab, const std::vector<std::string>& names,
                                const TagEmbeddingTable& provider) {
  TagVocabulary out = vocab;
  for (const auto& raw : names) {
    const std::string name = normalize_tag(raw);
    if (name.empty()) throw ValidationError("cannot add an empty tag name");
    if (out.contains(name)) throw ValidationError("tag already in vocabulary: " + name);
    provider.embed(name);
    out.add({name, TagCategory::other, TagSplit::both});
  }
  return out;
}

std::vector<std::size_t> sample_frame_indices(std::size_t available, std::size_t count) {
  if (available == 0) throw ValidationError("no frames to sample from");
  if (count == 0) throw ValidationError("frame count must be positive");
  std::vector<std::size_t> idx;
  if (count >= available) {
    for (std::size_t i = 0; i < available; ++i) idx.push_back(i);
    return idx;
  }
  if (count == 1) return {(available - 1) / 2};
  for (std::size_t i = 0; i < count; ++i) {
    const double pos = static_cast<double>(i) * static_cast<double>(available - 1) / static_cast<double>(count - 1);
    idx.push_back(static_cast<std::size_t>(std::floor(pos + 0.5)));
  }
  return idx;
}

TagPrediction infer_image(const Model& model, const ImageRaster& image, double threshold) {
  NoGradGuard guard;
  return apply_threshold(model.decode(model.encode_image(image)), threshold);
}

TagPrediction infer_video(const Model& model, const std::vector<ImageRaster>& frames, double threshold,
                          std::size_t max_frames) {
  NoGradGuard guard;
  std::vector<ImageRaster> picked;
  for (std::size_t i : sample_frame_indices(frames.size(), max_frames)) picked.push_back(frames[i]);
  Tensor fused = model.fuse(model.encode_frames(picked));
  return apply_threshold(model.decode(fused), threshold);
}

TagPrediction infer_video_imagewise(const Model& model, const std::vector<ImageRaster>& frames, double threshold) {
  if (frames.empty()) throw ValidationError("imagewise inference needs at least one frame");
  std::vector<double> best;
  std::set<std::size_t> selected;
  for (const auto& frame : frames) {
    TagPrediction p = infer_image(model, frame, threshold);
    if (best.empty()) {
      best = p.logits;
    } else {
      for (std::size_t k = 0; k < best.size(); ++k) best[k] = std::max(best[k], p.logits[k]);
    }
    selected.insert(p.selected.begin(), p.selected.end());
  }
  TagPrediction out = apply_threshold(best, threshold);
  out.selected.assign(selected.begin(), selected.end());
  return out;
}

}  // namespace surgtag
