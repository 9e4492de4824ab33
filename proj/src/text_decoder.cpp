#include "surgtag/text_decoder.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

#include "surgtag/errors.hpp"

namespace surgtag {

namespace {

std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> words;
  std::string current;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isspace(c)) {
      if (!current.empty()) words.push_back(std::move(current));
      current.clear();
    } else {
      current.push_back(static_cast<char>(std::tolower(c)));
    }
  }
  if (!current.empty()) words.push_back(std::move(current));
  return words;
}

}  // namespace

CaptionTokenizer::CaptionTokenizer() {
  for (const char* s : {"<bos>", "<eos>", "<unk>", "<pad>"}) {
    ids_.emplace(s, words_.size());
    words_.emplace_back(s);
  }
}

CaptionTokenizer CaptionTokenizer::build(const std::vector<std::string>& corpus, std::size_t min_freq) {
  std::map<std::string, std::size_t> counts;
  for (const auto& text : corpus) {
    for (auto& w : split_words(text)) ++counts[w];
  }
  std::vector<std::pair<std::string, std::size_t>> kept;
  for (auto& [w, c] : counts) {
    if (c >= min_freq) kept.emplace_back(w, c);
  }
  std::stable_sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  CaptionTokenizer tok;
  for (auto& [w, c] : kept) {
    if (tok.ids_.count(w)) continue;  // a literal "<unk>" in text stays special
    tok.ids_.emplace(w, tok.words_.size());
    tok.words_.push_back(w);
  }
  return tok;
}

std::size_t CaptionTokenizer::id_of(std::string_view word) const {
  auto it = ids_.find(word);
  return it == ids_.end() ? kUnk : it->second;
}

const std::string& CaptionTokenizer::word(std::size_t id) const {
  if (id >= words_.size()) throw ValidationError("token id " + std::to_string(id) + " out of range");
  return words_[id];
}

std::vector<std::size_t> CaptionTokenizer::encode(std::string_view text) const {
  std::vector<std::size_t> ids;
  for (const auto& w : split_words(text)) ids.push_back(id_of(w));
  return ids;
}

std::string CaptionTokenizer::decode(const std::vector<std::size_t>& ids) const {
  std::string out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i) out.push_back(' ');
    out += word(ids[i]);
  }
  return out;
}

std::vector<std::size_t> CaptionTokenizer::caption_targets(std::string_view text, std::size_t max_len) const {
  auto ids = encode(text);
  ids.push_back(kEos);
  if (ids.size() > max_len) ids.resize(max_len);
  return ids;
}

CaptionTokenizer CaptionTokenizer::read_tsv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open tokenizer: " + path.string());
  CaptionTokenizer tok;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw FormatError(path.string() + ":" + std::to_string(line_no) + ": missing tab");
    const std::string w = line.substr(0, tab);
    std::size_t id = 0;
    try {
      id = std::stoul(line.substr(tab + 1));
    } catch (const std::logic_error&) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": invalid id");
    }
    if (id < kNumSpecials) {
      if (tok.words_[id] != w) throw FormatError(path.string() + ":" + std::to_string(line_no) + ": special id mismatch");
      continue;
    }
    if (id != tok.words_.size() || tok.ids_.count(w)) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": ids must be dense and words unique");
    }
    tok.ids_.emplace(w, id);
    tok.words_.push_back(w);
  }
  return tok;
}

void CaptionTokenizer::write_tsv(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write tokenizer: " + path.string());
  for (std::size_t i = 0; i < words_.size(); ++i) out << words_[i] << '\t' << i << '\n';
  if (!out) throw IoError("write failed: " + path.string());
}

void TextDecoder::declare(ParameterStore& store, const TextDecoderConfig& config, std::size_t dim,
                          std::size_t vocab_size, Rng& rng) {
  if (config.heads == 0 || dim % config.heads != 0) throw ConfigError("text decoder: dim not divisible by heads");
  if (config.max_len == 0) throw ConfigError("text decoder: max_len must be positive");
  store.add_uniform("text_decoder.token_embedding", {vocab_size, dim}, dim, rng);
  store.add_uniform("text_decoder.position", {config.max_len, dim}, dim, rng);
  LayerNormParams::create(store, "text_decoder.self_norm", dim);
  AttentionWeights::create(store, "text_decoder.self_attn", dim, rng);
  LayerNormParams::create(store, "text_decoder.cross_norm", dim);
  LayerNormParams::create(store, "text_decoder.memory_norm", dim);
  AttentionWeights::create(store, "text_decoder.cross_attn", dim, rng);
  LayerNormParams::create(store, "text_decoder.mlp_norm", dim);
  MlpParams::create(store, "text_decoder.mlp", dim, rng);
  LayerNormParams::create(store, "text_decoder.final_norm", dim);
  LinearParams::create(store, "text_decoder.head", dim, vocab_size, rng);
}

TextDecoder TextDecoder::bind(const ParameterStore& store, const TextDecoderConfig& config, std::size_t dim) {
  TextDecoder t;
  t.config_ = config;
  t.dim_ = dim;
  t.token_embedding_ = store.get("text_decoder.token_embedding").tensor;
  t.vocab_size_ = t.token_embedding_.dim(0);
  t.position_ = store.get("text_decoder.position").tensor;
  if (t.position_.dim(0) != config.max_len) throw ConfigError("text decoder position table does not match max_len");
  t.self_norm_ = LayerNormParams::bind(store, "text_decoder.self_norm");
  t.self_attention_ = AttentionWeights::bind(store, "text_decoder.self_attn");
  t.cross_norm_ = LayerNormParams::bind(store, "text_decoder.cross_norm");
  t.memory_norm_ = LayerNormParams::bind(store, "text_decoder.memory_norm");
  t.cross_attention_ = AttentionWeights::bind(store, "text_decoder.cross_attn");
  t.mlp_norm_ = LayerNormParams::bind(store, "text_decoder.mlp_norm");
  t.mlp_ = MlpParams::bind(store, "text_decoder.mlp");
  t.final_norm_ = LayerNormParams::bind(store, "text_decoder.final_norm");
  t.head_ = LinearParams::bind(store, "text_decoder.head");
  return t;
}

Tensor TextDecoder::position_losses(const Tensor& visual, const Tensor& tag_context,
                                    const std::vector<std::size_t>& targets) const {
  if (targets.empty()) throw ValidationError("caption target is empty");
  if (targets.size() > config_.max_len) {
    throw ValidationError("caption target length " + std::to_string(targets.size()) + " exceeds max_len " +
                          std::to_string(config_.max_len));
  }
  const std::size_t len = targets.size();
  std::vector<std::size_t> inputs{CaptionTokenizer::kBos};
  inputs.insert(inputs.end(), targets.begin(), targets.end() - 1);

  Tensor x = add(gather_rows(token_embedding_, inputs), slice_rows(position_, 0, len));
  Tensor mask = causal_mask(len);
  Tensor h = self_norm_(x);
  x = add(x, multi_head_attention(h, h, h, self_attention_, config_.heads, &mask));
  Tensor memory = tag_context.defined() ? concat_rows({visual, tag_context}) : visual;
  memory = memory_norm_(memory);
  x = add(x, multi_head_attention(cross_norm_(x), memory, memory, cross_attention_, config_.heads));
  x = add(x, mlp_(mlp_norm_(x)));
  Tensor logits = head_(final_norm_(x));  // [L, V]
  return cross_entropy_rows(logits, targets);
}

Tensor TextDecoder::caption_loss(const Tensor& visual, const Tensor& tag_context,
                                 const std::vector<std::size_t>& targets) const {
  return mean(position_losses(visual, tag_context, targets));
}

}  // namespace surgtag
