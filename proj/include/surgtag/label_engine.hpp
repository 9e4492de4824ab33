#pragma once

#include <chrono>
#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "surgtag/json_client.hpp"
#include "surgtag/vocabulary.hpp"

namespace surgtag {

/// Category -> normalized phrases, loaded from `category<TAB>phrase` rows.
struct Gazetteer {
  std::map<TagCategory, std::set<std::string>> lexicons;
  std::filesystem::path source;

  static Gazetteer read_tsv(const std::filesystem::path& path);
  void add(TagCategory category, std::string_view phrase);
  bool contains(TagCategory category, std::string_view phrase) const;
};

/// One matched phrase; [begin, end) is a byte range in the trimmed sentence.
struct EntityMatch {
  std::string tag;
  TagCategory category = TagCategory::other;
  std::size_t begin = 0;
  std::size_t end = 0;

  bool operator==(const EntityMatch&) const = default;
};

/// <instrument, verb, target>; the span runs from the instrument to the target.
struct ActionTriplet {
  std::string instrument;
  std::string verb;
  std::string target;
  TagCategory target_category = TagCategory::target;
  std::size_t sentence_id = 0;
  std::size_t begin = 0;
  std::size_t end = 0;

  /// "instrument,verb,target"
  std::string composed() const { return instrument + "," + verb + "," + target; }
  bool operator==(const ActionTriplet&) const = default;
};

struct VlmAnnotation {
  std::string image_ref;
  std::vector<std::string> tags;
  std::optional<std::string> caption;

  bool operator==(const VlmAnnotation&) const = default;
};

/// Case-insensitive, longest-match-first dictionary scan on word boundaries.
/// Verb phrases are left to extract_actions, which matches them by lemma.
std::vector<EntityMatch> extract_entities(std::string_view sentence, const Gazetteer& gazetteer);

/// Rule-based lemma for an (already lowercase) English verb form.
std::string lemmatize_verb(std::string_view token);

/// Nearest-match triplets: for each token whose lemma is in the verb lexicon,
/// the closest preceding instrument and the closest following target or organ.
std::vector<ActionTriplet> extract_actions(std::string_view sentence, const Gazetteer& gazetteer,
                                           std::size_t sentence_id = 0);

struct AnnotateOptions {
  std::size_t max_retries = 3;
  std::chrono::milliseconds base_backoff{200};
  std::size_t concurrency = 4;
};

struct AnnotationError {
  std::string image_ref;
  std::string message;
  std::size_t attempts = 0;
};

struct AnnotationResult {
  std::vector<VlmAnnotation> annotations;  // input order, failures omitted
  std::vector<AnnotationError> errors;     // input order
  std::vector<std::string> log;            // one line per failed attempt
};

/// Validates one service response into an annotation (FormatError if invalid).
VlmAnnotation parse_annotation(const std::string& image_ref, const nlohmann::json& response);

/// One request per image. Transport failures are retried with exponential
/// backoff; malformed responses and exhausted retries become per-image errors.
AnnotationResult annotate_images(const std::vector<std::string>& image_refs, JsonClient& client,
                                 const std::vector<std::string>& vocab_hint = {}, const AnnotateOptions& options = {});

/// Reads `phrase` lines (blank lines and '#' comments skipped), normalized.
std::set<std::string> read_stoplist(const std::filesystem::path& path);

/// Counts tags from all three sources and keeps those with count >= min_freq
/// that are not stoplisted, ordered by count desc then name. Triplets
/// contribute their components and the composed "i,v,t" tag. A tag's
/// category is the lowest specific category (enum order) any source gives
/// it, or `other`, so the result does not depend on input order.
TagVocabulary build_vocabulary(const std::vector<EntityMatch>& entities, const std::vector<ActionTriplet>& triplets,
                               const std::vector<VlmAnnotation>& annotations, std::size_t min_freq = 3,
                               const std::set<std::string>& stoplist = {}, TagSplit split = TagSplit::both);

/// Entity and action tags of one sentence as a sorted, duplicate-free list.
std::vector<std::string> sentence_tags(std::string_view sentence, const Gazetteer& gazetteer);

}  // namespace surgtag
