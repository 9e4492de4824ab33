#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "surgtag/nn.hpp"

namespace surgtag {

/// Lowercased whitespace word tokenizer for transcript captions.
/// Ids 0-3 are reserved for the special tokens.
class CaptionTokenizer {
 public:
  static constexpr std::size_t kBos = 0;
  static constexpr std::size_t kEos = 1;
  static constexpr std::size_t kUnk = 2;
  static constexpr std::size_t kPad = 3;
  static constexpr std::size_t kNumSpecials = 4;

  CaptionTokenizer();
  /// Words with frequency >= min_freq, ordered by frequency desc then word asc.
  static CaptionTokenizer build(const std::vector<std::string>& corpus, std::size_t min_freq = 2);

  std::vector<std::size_t> encode(std::string_view text) const;
  std::string decode(const std::vector<std::size_t>& ids) const;
  std::size_t id_of(std::string_view word) const;
  const std::string& word(std::size_t id) const;
  std::size_t size() const { return words_.size(); }

  /// Teacher-forcing targets: encode(text) + EOS, truncated to max_len.
  std::vector<std::size_t> caption_targets(std::string_view text, std::size_t max_len) const;

  /// TSV `word<TAB>id`, specials first.
  static CaptionTokenizer read_tsv(const std::filesystem::path& path);
  void write_tsv(const std::filesystem::path& path) const;

  bool operator==(const CaptionTokenizer& other) const { return words_ == other.words_; }

 private:
  std::vector<std::string> words_;
  std::map<std::string, std::size_t, std::less<>> ids_;
};

struct TextDecoderConfig {
  std::size_t heads = 4;
  std::size_t max_len = 32;
};

/// One-block caption head used only by training: causal self-attention over
/// the caption prefix, cross-attention over [visual tokens; tag context],
/// then a vocabulary projection. Parameters live under `text_decoder.*`.
class TextDecoder {
 public:
  TextDecoder() = default;
  static void declare(ParameterStore& store, const TextDecoderConfig& config, std::size_t dim, std::size_t vocab_size,
                      Rng& rng);
  static TextDecoder bind(const ParameterStore& store, const TextDecoderConfig& config, std::size_t dim);

  /// Teacher-forced cross-entropy at each target position, shape [L]. The
  /// decoder input is BOS followed by targets[0..L-1). `tag_context` may be
  /// undefined when no tags condition the caption.
  Tensor position_losses(const Tensor& visual, const Tensor& tag_context, const std::vector<std::size_t>& targets) const;
  /// Mean of position_losses.
  Tensor caption_loss(const Tensor& visual, const Tensor& tag_context, const std::vector<std::size_t>& targets) const;

  std::size_t vocab_size() const { return vocab_size_; }

 private:
  TextDecoderConfig config_;
  std::size_t dim_ = 0;
  std::size_t vocab_size_ = 0;
  Tensor token_embedding_;  // [V, D]
  Tensor position_;         // [max_len, D]
  LayerNormParams self_norm_;
  AttentionWeights self_attention_;
  LayerNormParams cross_norm_;
  LayerNormParams memory_norm_;
  AttentionWeights cross_attention_;
  LayerNormParams mlp_norm_;
  MlpParams mlp_;
  LayerNormParams final_norm_;
  LinearParams head_;
};

}  // namespace surgtag
