#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace surgtag {

enum class ProviderId { hashed, file };

/// Frozen text embeddings for tag names.
///
/// The hashed provider embeds any string: character trigrams of "<name>" are
/// feature-hashed into `dim` buckets with +-1 signs from a second hash, then
/// L2-normalized. The file provider serves vectors from a table and falls
/// back to the hashed provider (same dim) for names it does not contain.
class TagEmbeddingTable {
 public:
  explicit TagEmbeddingTable(std::size_t dim = 64);

  /// Reads `#dim=<D>` then `tag<TAB>v1,...,vD` rows; vectors are re-normalized.
  static TagEmbeddingTable load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  /// Unit-norm vector for the normalized name. Throws ValidationError if the
  /// name is empty after normalization.
  std::vector<float> embed(std::string_view name) const;
  /// Adds or replaces a table row (normalized, unit norm).
  void set(std::string_view name, std::vector<float> vector);

  std::size_t dim() const { return dim_; }
  ProviderId provider() const { return provider_; }
  const std::map<std::string, std::vector<float>>& entries() const { return entries_; }

 private:
  std::size_t dim_;
  ProviderId provider_ = ProviderId::hashed;
  std::map<std::string, std::vector<float>> entries_;
};

/// The hashed embedding of an already-normalized, nonempty name.
std::vector<float> hashed_embedding(std::string_view normalized, std::size_t dim);

double cosine_similarity(const std::vector<float>& a, const std::vector<float>& b);

}  // namespace surgtag
