#include "surgtag/vocabulary.hpp"

#include <cctype>
#include <fstream>
#include <sstream>

#include "surgtag/errors.hpp"

namespace surgtag {

std::string normalize_tag(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  bool pending_space = false;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isspace(c)) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out.push_back(' ');
    pending_space = false;
    out.push_back(static_cast<char>(std::tolower(c)));
  }
  return out;
}

std::string to_string(TagCategory category) {
  switch (category) {
    case TagCategory::instrument: return "instrument";
    case TagCategory::verb: return "verb";
    case TagCategory::target: return "target";
    case TagCategory::organ: return "organ";
    case TagCategory::phase: return "phase";
    case TagCategory::procedure: return "procedure";
    case TagCategory::other: return "other";
  }
  return "other";
}

std::string to_string(TagSplit split) {
  switch (split) {
    case TagSplit::pretrain: return "pretrain";
    case TagSplit::finetune: return "finetune";
    case TagSplit::both: return "both";
  }
  return "both";
}

TagCategory category_from_string(std::string_view text) {
  for (auto c : {TagCategory::instrument, TagCategory::verb, TagCategory::target, TagCategory::organ, TagCategory::phase,
                 TagCategory::procedure, TagCategory::other}) {
    if (to_string(c) == text) return c;
  }
  throw ValidationError("unknown tag category '" + std::string(text) + "'");
}

TagSplit split_from_string(std::string_view text) {
  for (auto s : {TagSplit::pretrain, TagSplit::finetune, TagSplit::both}) {
    if (to_string(s) == text) return s;
  }
  throw ValidationError("unknown tag split '" + std::string(text) + "'");
}

TagVocabulary::TagVocabulary(std::vector<TagEntry> entries) {
  for (auto& e : entries) add(std::move(e));
}

std::size_t TagVocabulary::add(TagEntry entry) {
  entry.name = normalize_tag(entry.name);
  if (entry.name.empty()) throw ValidationError("tag name is empty after normalization");
  if (index_.count(entry.name)) throw ValidationError("duplicate tag: " + entry.name);
  index_.emplace(entry.name, entries_.size());
  entries_.push_back(std::move(entry));
  return entries_.size() - 1;
}

std::optional<std::size_t> TagVocabulary::find(std::string_view name) const {
  auto it = index_.find(name);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::vector<std::string> TagVocabulary::names() const {
  std::vector<std::string> out;
  out.reserve(entries_.size());
  for (const auto& e : entries_) out.push_back(e.name);
  return out;
}

TagVocabulary TagVocabulary::read_tsv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open vocabulary: " + path.string());
  TagVocabulary vocab;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> cols;
    std::stringstream ss(line);
    std::string col;
    while (std::getline(ss, col, '\t')) cols.push_back(col);
    if (cols.size() < 3) throw FormatError(path.string() + ":" + std::to_string(line_no) + ": expected name, category, split");
    try {
      vocab.add({cols[0], category_from_string(cols[1]), split_from_string(cols[2])});
    } catch (const ValidationError& e) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return vocab;
}

std::string TagVocabulary::to_tsv() const {
  std::string out = "#name\tcategory\tsplit\n";
  for (const auto& e : entries_) out += e.name + "\t" + to_string(e.category) + "\t" + to_string(e.split) + "\n";
  return out;
}

void TagVocabulary::write_tsv(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write vocabulary: " + path.string());
  out << to_tsv();
  if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace surgtag
