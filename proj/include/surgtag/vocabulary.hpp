#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace surgtag {

/// Lowercase (ASCII), trim, and collapse internal whitespace runs to one space.
std::string normalize_tag(std::string_view text);

enum class TagCategory { instrument, verb, target, organ, phase, procedure, other };
enum class TagSplit { pretrain, finetune, both };

std::string to_string(TagCategory category);
std::string to_string(TagSplit split);
TagCategory category_from_string(std::string_view text);
TagSplit split_from_string(std::string_view text);

struct TagEntry {
  std::string name;
  TagCategory category = TagCategory::other;
  TagSplit split = TagSplit::both;

  bool operator==(const TagEntry&) const = default;
};

/// Ordered tag list; position defines the logit index.
class TagVocabulary {
 public:
  TagVocabulary() = default;
  explicit TagVocabulary(std::vector<TagEntry> entries);

  /// Appends a normalized entry. Throws ValidationError on empty or duplicate names.
  std::size_t add(TagEntry entry);
  std::optional<std::size_t> find(std::string_view name) const;
  bool contains(std::string_view name) const { return find(name).has_value(); }

  const TagEntry& operator[](std::size_t i) const { return entries_[i]; }
  const std::vector<TagEntry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  std::vector<std::string> names() const;

  bool operator==(const TagVocabulary& other) const { return entries_ == other.entries_; }

  /// TSV rows `name<TAB>category<TAB>split`; lines starting with '#' are comments.
  static TagVocabulary read_tsv(const std::filesystem::path& path);
  void write_tsv(const std::filesystem::path& path) const;
  std::string to_tsv() const;

 private:
  std::vector<TagEntry> entries_;
  std::map<std::string, std::size_t, std::less<>> index_;
};

}  // namespace surgtag
