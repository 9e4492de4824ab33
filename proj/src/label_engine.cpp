#include "surgtag/label_engine.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <fstream>
#include <thread>
#include <unordered_map>

#include "surgtag/errors.hpp"

namespace surgtag {

namespace {

struct Token {
  std::string text;
  std::size_t begin;
  std::size_t end;
};

bool is_word_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '-'; }

std::string_view trim(std::string_view s) {
  const auto ws = [](char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; };
  while (!s.empty() && ws(s.front())) s.remove_prefix(1);
  while (!s.empty() && ws(s.back())) s.remove_suffix(1);
  return s;
}

std::vector<Token> tokenize(std::string_view text) {
  std::vector<Token> tokens;
  std::size_t i = 0;
  while (i < text.size()) {
    if (!is_word_char(text[i])) {
      ++i;
      continue;
    }
    Token t{{}, i, i};
    while (i < text.size() && is_word_char(text[i])) {
      t.text.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(text[i]))));
      ++i;
    }
    t.end = i;
    tokens.push_back(std::move(t));
  }
  return tokens;
}

std::string join_tokens(const std::vector<Token>& tokens, std::size_t begin, std::size_t end) {
  std::string out;
  for (std::size_t i = begin; i < end; ++i) {
    if (i > begin) out.push_back(' ');
    out += tokens[i].text;
  }
  return out;
}

struct TokenMatch {
  EntityMatch match;
  std::size_t first;  // token range [first, last)
  std::size_t last;
};

std::vector<TokenMatch> match_tokens(const std::vector<Token>& tokens, const Gazetteer& gaz) {
  std::unordered_map<std::string, TagCategory> phrases;
  std::size_t longest = 0;
  for (const auto& [category, lexicon] : gaz.lexicons) {
    if (category == TagCategory::verb) continue;
    for (const auto& phrase : lexicon) {
      phrases.emplace(phrase, category);  // map order: lowest category wins
      longest = std::max<std::size_t>(longest, std::count(phrase.begin(), phrase.end(), ' ') + 1);
    }
  }
  std::vector<TokenMatch> out;
  std::size_t i = 0;
  while (i < tokens.size()) {
    bool found = false;
    for (std::size_t len = std::min(longest, tokens.size() - i); len >= 1; --len) {
      auto it = phrases.find(join_tokens(tokens, i, i + len));
      if (it == phrases.end()) continue;
      out.push_back({{it->first, it->second, tokens[i].begin, tokens[i + len - 1].end}, i, i + len});
      i += len;
      found = true;
      break;
    }
    if (!found) ++i;
  }
  return out;
}

bool ends_with(std::string_view s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

bool is_vowel(char c) { return c == 'a' || c == 'e' || c == 'i' || c == 'o' || c == 'u'; }

bool is_consonant(char c) { return std::isalpha(static_cast<unsigned char>(c)) && !is_vowel(c); }

const std::unordered_map<std::string, std::string>& verb_exceptions() {
  static const std::unordered_map<std::string, std::string> table = {
      {"cutting", "cut"},      {"cut", "cut"},           {"put", "put"},         {"putting", "put"},
      {"set", "set"},          {"setting", "set"},       {"held", "hold"},       {"holding", "hold"},
      {"taken", "take"},       {"took", "take"},         {"made", "make"},       {"done", "do"},
      {"did", "do"},           {"does", "do"},           {"is", "be"},           {"are", "be"},
      {"was", "be"},           {"were", "be"},           {"been", "be"},         {"being", "be"},
      {"has", "have"},         {"had", "have"},          {"having", "have"},     {"uses", "use"},
      {"used", "use"},         {"using", "use"},         {"added", "add"},       {"adding", "add"},
      {"controlled", "control"}, {"controlling", "control"}, {"tied", "tie"},    {"ties", "tie"},
      {"tying", "tie"},        {"seen", "see"},          {"saw", "see"},         {"went", "go"},
      {"gone", "go"},          {"goes", "go"},           {"bled", "bleed"},      {"lying", "lie"},
      {"dying", "die"},        {"changed", "change"},    {"changing", "change"}, {"placed", "place"},
  };
  return table;
}

// Stem endings after which a dropped silent "e" is restored (coagulat-ed,
// mobiliz-ed, divid-ed, remov-ed, ...), when preceded by a consonant.
bool needs_e(std::string_view stem) {
  if (stem.size() < 3) return false;
  static const char* const endings[] = {"at", "iz", "id", "ov", "iv", "uc", "os", "is", "ac", "ur"};
  for (const char* e : endings) {
    if (ends_with(stem, e) && is_consonant(stem[stem.size() - 3])) return true;
  }
  // consonant + l (stapl-ed, handl-ed), but not a doubled l
  const char last = stem.back();
  const char prev = stem[stem.size() - 2];
  if (last == 'l' && is_consonant(prev) && prev != 'l') return true;
  if ((last == 'v') && (prev == 'l' || prev == 'r')) return true;  // involv-ed, preserv-ed
  return false;
}

std::string undo_ed_ing(std::string stem) {
  const std::size_t n = stem.size();
  if (n >= 3 && stem[n - 1] == stem[n - 2] && is_consonant(stem[n - 1]) && stem[n - 1] != 'l' && stem[n - 1] != 's' &&
      stem[n - 1] != 'z') {
    stem.pop_back();  // clipp-ed -> clip
    return stem;
  }
  if (needs_e(stem)) stem.push_back('e');
  return stem;
}

}  // namespace

void Gazetteer::add(TagCategory category, std::string_view phrase) {
  const std::string normalized = join_tokens(tokenize(phrase), 0, tokenize(phrase).size());
  if (normalized.empty()) throw ValidationError("empty gazetteer phrase");
  lexicons[category].insert(normalized);
}

bool Gazetteer::contains(TagCategory category, std::string_view phrase) const {
  auto it = lexicons.find(category);
  if (it == lexicons.end()) return false;
  const auto tokens = tokenize(phrase);
  return it->second.count(join_tokens(tokens, 0, tokens.size())) != 0;
}

Gazetteer Gazetteer::read_tsv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open gazetteer: " + path.string());
  Gazetteer gaz;
  gaz.source = path;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty() || line[0] == '#') continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw FormatError(path.string() + ":" + std::to_string(line_no) + ": expected category<TAB>phrase");
    try {
      gaz.add(category_from_string(trim(std::string_view(line).substr(0, tab))), line.substr(tab + 1));
    } catch (const ValidationError& e) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return gaz;
}

std::vector<EntityMatch> extract_entities(std::string_view sentence, const Gazetteer& gazetteer) {
  std::vector<EntityMatch> out;
  for (auto& m : match_tokens(tokenize(trim(sentence)), gazetteer)) out.push_back(std::move(m.match));
  return out;
}

std::string lemmatize_verb(std::string_view token) {
  std::string w(token);
  for (char& c : w) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  auto ex = verb_exceptions().find(w);
  if (ex != verb_exceptions().end()) return ex->second;
  const auto stem_ok = [](std::size_t len) { return len >= 3; };
  if (ends_with(w, "ies") && stem_ok(w.size() - 2)) return w.substr(0, w.size() - 3) + "y";
  if (ends_with(w, "ied") && stem_ok(w.size() - 2)) return w.substr(0, w.size() - 3) + "y";
  if (ends_with(w, "es") && stem_ok(w.size() - 2)) {
    const std::string stem = w.substr(0, w.size() - 2);
    if (ends_with(stem, "s") || ends_with(stem, "x") || ends_with(stem, "z") || ends_with(stem, "ch") ||
        ends_with(stem, "sh")) {
      return stem;
    }
  }
  if (ends_with(w, "ed") && stem_ok(w.size() - 2)) return undo_ed_ing(w.substr(0, w.size() - 2));
  if (ends_with(w, "ing") && stem_ok(w.size() - 3)) return undo_ed_ing(w.substr(0, w.size() - 3));
  if (ends_with(w, "s") && !ends_with(w, "ss") && stem_ok(w.size() - 1)) return w.substr(0, w.size() - 1);
  return w;
}

std::vector<ActionTriplet> extract_actions(std::string_view sentence, const Gazetteer& gazetteer, std::size_t sentence_id) {
  const auto tokens = tokenize(trim(sentence));
  const auto matches = match_tokens(tokens, gazetteer);
  auto verbs = gazetteer.lexicons.find(TagCategory::verb);
  if (verbs == gazetteer.lexicons.end()) return {};
  std::vector<bool> covered(tokens.size(), false);
  for (const auto& m : matches) {
    for (std::size_t i = m.first; i < m.last; ++i) covered[i] = true;
  }
  std::vector<ActionTriplet> out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (covered[i]) continue;
    std::string lemma = lemmatize_verb(tokens[i].text);
    if (!verbs->second.count(lemma)) {
      if (!verbs->second.count(tokens[i].text)) continue;
      lemma = tokens[i].text;
    }
    const TokenMatch* instrument = nullptr;
    const TokenMatch* target = nullptr;
    for (const auto& m : matches) {
      if (m.match.category == TagCategory::instrument && m.last <= i) instrument = &m;
      if ((m.match.category == TagCategory::target || m.match.category == TagCategory::organ) && m.first > i && !target) {
        target = &m;
      }
    }
    if (!instrument || !target) continue;
    out.push_back({instrument->match.tag, lemma, target->match.tag, target->match.category, sentence_id,
                   instrument->match.begin, target->match.end});
  }
  return out;
}

VlmAnnotation parse_annotation(const std::string& image_ref, const nlohmann::json& response) {
  if (!response.is_object()) throw FormatError("response is not a JSON object");
  VlmAnnotation a;
  a.image_ref = image_ref;
  if (response.contains("tags")) {
    const auto& tags = response.at("tags");
    if (!tags.is_array()) throw FormatError("'tags' must be an array of strings");
    for (const auto& t : tags) {
      if (!t.is_string()) throw FormatError("'tags' must be an array of strings");
      std::string name = normalize_tag(t.get<std::string>());
      if (!name.empty() && std::find(a.tags.begin(), a.tags.end(), name) == a.tags.end()) a.tags.push_back(name);
    }
  }
  if (response.contains("caption") && !response.at("caption").is_null()) {
    if (!response.at("caption").is_string()) throw FormatError("'caption' must be a string");
    a.caption = response.at("caption").get<std::string>();
  }
  if (a.tags.empty() && !a.caption) throw FormatError("response has neither tags nor a caption");
  return a;
}

AnnotationResult annotate_images(const std::vector<std::string>& image_refs, JsonClient& client,
                                 const std::vector<std::string>& vocab_hint, const AnnotateOptions& options) {
  struct Slot {
    std::optional<VlmAnnotation> annotation;
    std::optional<AnnotationError> error;
    std::vector<std::string> log;
  };
  std::vector<Slot> slots(image_refs.size());
  std::atomic<std::size_t> next{0};

  auto work = [&] {
    for (std::size_t i = next++; i < image_refs.size(); i = next++) {
      const std::string& ref = image_refs[i];
      nlohmann::json request = {{"image_ref", ref}};
      if (!vocab_hint.empty()) request["candidate_tags"] = vocab_hint;
      Slot& slot = slots[i];
      for (std::size_t attempt = 1;; ++attempt) {
        try {
          slot.annotation = parse_annotation(ref, client.request(request));
          break;
        } catch (const TransportError& e) {
          slot.log.push_back(ref + ": attempt " + std::to_string(attempt) + " failed: " + e.what());
          if (attempt > options.max_retries) {
            slot.error = AnnotationError{ref, e.what(), attempt};
            break;
          }
          std::this_thread::sleep_for(options.base_backoff * (1LL << (attempt - 1)));
        } catch (const std::exception& e) {
          slot.log.push_back(ref + ": attempt " + std::to_string(attempt) + " failed: " + e.what());
          slot.error = AnnotationError{ref, e.what(), attempt};
          break;
        }
      }
    }
  };

  const std::size_t workers = std::max<std::size_t>(1, std::min(options.concurrency, image_refs.size()));
  std::vector<std::thread> threads;
  for (std::size_t t = 1; t < workers; ++t) threads.emplace_back(work);
  work();
  for (auto& t : threads) t.join();

  AnnotationResult result;
  for (auto& s : slots) {
    if (s.annotation) result.annotations.push_back(std::move(*s.annotation));
    if (s.error) result.errors.push_back(std::move(*s.error));
    for (auto& l : s.log) result.log.push_back(std::move(l));
  }
  return result;
}

std::set<std::string> read_stoplist(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open stoplist: " + path.string());
  std::set<std::string> out;
  for (std::string line; std::getline(in, line);) {
    if (!line.empty() && line[0] == '#') continue;
    std::string phrase = normalize_tag(line);
    if (!phrase.empty()) out.insert(phrase);
  }
  return out;
}

TagVocabulary build_vocabulary(const std::vector<EntityMatch>& entities, const std::vector<ActionTriplet>& triplets,
                               const std::vector<VlmAnnotation>& annotations, std::size_t min_freq,
                               const std::set<std::string>& stoplist, TagSplit split) {
  struct Stat {
    std::size_t count = 0;
    TagCategory category = TagCategory::other;
  };
  std::map<std::string, Stat> stats;
  auto bump = [&](const std::string& raw, TagCategory category) {
    const std::string name = normalize_tag(raw);
    if (name.empty()) return;
    Stat& s = stats[name];
    ++s.count;
    if (category != TagCategory::other && (s.category == TagCategory::other || category < s.category)) s.category = category;
  };
  for (const auto& e : entities) bump(e.tag, e.category);
  for (const auto& t : triplets) {
    bump(t.instrument, TagCategory::instrument);
    bump(t.verb, TagCategory::verb);
    bump(t.target, t.target_category);
    bump(t.composed(), TagCategory::other);
  }
  for (const auto& a : annotations) {
    for (const auto& tag : a.tags) bump(tag, TagCategory::other);
  }
  std::vector<std::pair<std::string, Stat>> kept;
  for (const auto& [name, s] : stats) {
    if (s.count >= min_freq && !stoplist.count(name)) kept.emplace_back(name, s);
  }
  std::stable_sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) { return a.second.count > b.second.count; });
  TagVocabulary vocab;
  for (const auto& [name, s] : kept) vocab.add({name, s.category, split});
  return vocab;
}

std::vector<std::string> sentence_tags(std::string_view sentence, const Gazetteer& gazetteer) {
  std::set<std::string> tags;
  for (const auto& e : extract_entities(sentence, gazetteer)) tags.insert(e.tag);
  for (const auto& t : extract_actions(sentence, gazetteer)) {
    tags.insert(t.instrument);
    tags.insert(t.verb);
    tags.insert(t.target);
    tags.insert(t.composed());
  }
  return {tags.begin(), tags.end()};
}

}  // namespace surgtag
