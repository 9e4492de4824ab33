#include "surgtag/data_engine.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "surgtag/errors.hpp"

namespace surgtag {

namespace {

std::vector<std::string> words_of(std::string_view text) {
  std::vector<std::string> words;
  std::string current;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isalnum(c)) {
      current.push_back(static_cast<char>(std::tolower(c)));
    } else if (!current.empty()) {
      words.push_back(std::move(current));
      current.clear();
    }
  }
  if (!current.empty()) words.push_back(std::move(current));
  return words;
}

bool contains_phrase(const std::vector<std::string>& words, const std::vector<std::string>& phrase) {
  if (phrase.empty() || phrase.size() > words.size()) return false;
  for (std::size_t i = 0; i + phrase.size() <= words.size(); ++i) {
    if (std::equal(phrase.begin(), phrase.end(), words.begin() + static_cast<std::ptrdiff_t>(i))) return true;
  }
  return false;
}

std::string format_seconds(double s) {
  std::ostringstream os;
  os << s;
  return os.str();
}

}  // namespace

std::vector<TranscriptSegment> ingest_transcript(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open transcript: " + path.string());
  nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
  const std::string where = path.string() + ": ";
  if (j.is_discarded() || !j.is_object()) throw FormatError(where + "not a JSON object");
  if (!j.contains("video_id") || !j["video_id"].is_string() || j["video_id"].get<std::string>().empty()) {
    throw FormatError(where + "missing string 'video_id'");
  }
  if (!j.contains("duration_s") || !j["duration_s"].is_number() || j["duration_s"].get<double>() <= 0.0) {
    throw FormatError(where + "'duration_s' must be a positive number");
  }
  if (!j.contains("segments") || !j["segments"].is_array()) throw FormatError(where + "missing 'segments' array");
  const std::string video = j["video_id"].get<std::string>();
  const double duration = j["duration_s"].get<double>();
  std::vector<TranscriptSegment> out;
  for (std::size_t i = 0; i < j["segments"].size(); ++i) {
    const auto& s = j["segments"][i];
    const std::string at = where + "segment " + std::to_string(i) + ": ";
    if (!s.is_object() || !s.contains("start_s") || !s.contains("end_s") || !s.contains("text") ||
        !s["start_s"].is_number() || !s["end_s"].is_number() || !s["text"].is_string()) {
      throw FormatError(at + "expected numeric start_s/end_s and string text");
    }
    TranscriptSegment seg{video, i, s["start_s"].get<double>(), s["end_s"].get<double>(), s["text"].get<std::string>()};
    if (!(seg.end_s > seg.start_s)) throw FormatError(at + "end_s must be greater than start_s");
    if (seg.start_s < 0.0 || seg.end_s > duration) {
      throw FormatError(at + "times must lie within [0, " + format_seconds(duration) + "]");
    }
    if (!out.empty()) {
      if (seg.start_s < out.back().start_s) throw FormatError(at + "start times are not monotonic");
      if (seg.start_s < out.back().end_s) throw FormatError(at + "overlaps segment " + std::to_string(i - 1));
    }
    out.push_back(std::move(seg));
  }
  return out;
}

std::vector<std::string> default_stop_phrases() { return {"slide", "diagram", "agenda", "thank you"}; }

std::vector<std::string> read_stop_phrases(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open stop phrases: " + path.string());
  std::vector<std::string> out;
  for (std::string line; std::getline(in, line);) {
    if (!line.empty() && line[0] == '#') continue;
    std::string p = normalize_tag(line);
    if (!p.empty()) out.push_back(p);
  }
  return out;
}

std::unique_ptr<JsonClient> make_stop_phrase_filter(std::vector<std::string> phrases) {
  std::vector<std::vector<std::string>> tokenized;
  for (const auto& p : phrases) tokenized.push_back(words_of(p));
  return std::make_unique<FunctionJsonClient>([tokenized](const nlohmann::json& req) -> nlohmann::json {
    if (!req.is_object() || !req.contains("text") || !req["text"].is_string()) {
      throw FormatError("filter request needs a string 'text'");
    }
    const auto words = words_of(req["text"].get<std::string>());
    for (const auto& p : tokenized) {
      if (contains_phrase(words, p)) return {{"visual", false}};
    }
    return {{"visual", true}};
  });
}

std::unique_ptr<JsonClient> make_service_client(const std::string& spec) {
  if (spec == "mock") return make_stop_phrase_filter();
  if (spec.rfind("http://", 0) == 0) return std::make_unique<HttpJsonClient>(spec);
  if (spec.rfind("cmd:", 0) == 0) {
    std::istringstream is(spec.substr(4));
    std::vector<std::string> argv;
    for (std::string a; is >> a;) argv.push_back(a);
    return std::make_unique<SubprocessJsonClient>(argv);
  }
  throw ConfigError("unknown service '" + spec + "' (expected mock, http://... or cmd:...)");
}

FilterDecision filter_nonvisual(const TranscriptSegment& segment, JsonClient& client) {
  try {
    const nlohmann::json res = client.request({{"text", segment.text}});
    if (!res.contains("visual") || !res["visual"].is_boolean()) throw FormatError("filter response needs boolean 'visual'");
    return {res["visual"].get<bool>(), std::nullopt};
  } catch (const std::exception& e) {
    return {false, sample_id_for(segment) + ": filter failed, segment dropped: " + e.what()};
  }
}

std::vector<FrameRef> read_frame_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open frame manifest: " + path.string());
  std::vector<FrameRef> frames;
  std::size_t line_no = 0;
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const auto tab = line.find('\t');
    const std::string at = path.string() + ":" + std::to_string(line_no) + ": ";
    if (tab == std::string::npos || tab + 1 == line.size()) throw FormatError(at + "expected timestamp_s<TAB>path");
    double ts = 0.0;
    try {
      std::size_t used = 0;
      ts = std::stod(line.substr(0, tab), &used);
      if (used != tab) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      throw FormatError(at + "invalid timestamp");
    }
    frames.push_back({ts, line.substr(tab + 1)});
  }
  std::stable_sort(frames.begin(), frames.end(), [](const FrameRef& a, const FrameRef& b) { return a.timestamp < b.timestamp; });
  return frames;
}

std::vector<FrameRef> sample_frames(const TranscriptSegment& segment, const std::vector<FrameRef>& frames, std::size_t n) {
  if (n == 0) throw ValidationError("frame count must be at least 1");
  std::vector<FrameRef> in_range;
  for (const auto& f : frames) {
    if (f.timestamp >= segment.start_s && f.timestamp <= segment.end_s) in_range.push_back(f);
  }
  if (in_range.empty()) {
    throw ValidationError("no frames within [" + format_seconds(segment.start_s) + ", " + format_seconds(segment.end_s) +
                          "] for segment " + sample_id_for(segment));
  }
  std::vector<FrameRef> out;
  for (std::size_t i = 0; i < n; ++i) {
    const double t = n == 1 ? (segment.start_s + segment.end_s) / 2.0
                            : segment.start_s + static_cast<double>(i) * (segment.end_s - segment.start_s) /
                                                    static_cast<double>(n - 1);
    auto it = std::lower_bound(in_range.begin(), in_range.end(), t,
                               [](const FrameRef& f, double v) { return f.timestamp < v; });
    if (it == in_range.end()) {
      --it;
    } else if (it != in_range.begin() && t - std::prev(it)->timestamp <= it->timestamp - t) {
      --it;
    }
    out.push_back(*it);
  }
  return out;
}

nlohmann::ordered_json DatasetStats::to_json() const {
  nlohmann::ordered_json j;
  j["clips_in"] = clips_in;
  j["nonvisual"] = nonvisual;
  j["clips_without_tags"] = clips_without_tags;
  j["samples_out"] = samples_out;
  j["tags_dropped"] = tags_dropped;
  j["unique_tags"] = unique_tags;
  return j;
}

std::string sample_id_for(const TranscriptSegment& segment) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%04zu", segment.index);
  return segment.video_id + "-" + buf;
}

Dataset assemble_dataset(const std::vector<ClipAnnotation>& clips, const TagVocabulary& vocab, TagSplit split) {
  if (split == TagSplit::both) throw ValidationError("dataset split must be pretrain or finetune");
  Dataset ds;
  std::set<std::string> unique;
  for (const auto& clip : clips) {
    ++ds.stats.clips_in;
    if (!clip.visual) {
      ++ds.stats.nonvisual;
      continue;
    }
    std::vector<std::size_t> ids;
    for (const auto& tag : clip.tags) {
      auto idx = vocab.find(normalize_tag(tag));
      if (!idx) {
        ++ds.stats.tags_dropped;
      } else if (std::find(ids.begin(), ids.end(), *idx) == ids.end()) {
        ids.push_back(*idx);
      }
    }
    if (ids.empty() || clip.frames.empty()) {
      ++ds.stats.clips_without_tags;
      continue;
    }
    std::sort(ids.begin(), ids.end());
    TripletSample s;
    s.sample_id = sample_id_for(clip.segment);
    for (const auto& f : clip.frames) s.frame_refs.push_back(f.path);
    s.text = clip.segment.text;
    for (std::size_t i : ids) {
      s.tags.push_back(vocab[i].name);
      unique.insert(vocab[i].name);
    }
    s.split = split;
    ds.samples.push_back(std::move(s));
  }
  ds.stats.samples_out = ds.samples.size();
  ds.stats.unique_tags = unique.size();
  return ds;
}

std::string to_jsonl(const std::vector<TripletSample>& samples) {
  std::string out;
  for (const auto& s : samples) {
    nlohmann::ordered_json j;
    j["sample_id"] = s.sample_id;
    j["frame_refs"] = s.frame_refs;
    j["text"] = s.text;
    j["tags"] = s.tags;
    j["split"] = to_string(s.split);
    out += j.dump(-1, ' ', false, nlohmann::json::error_handler_t::strict);
    out.push_back('\n');
  }
  return out;
}

void write_dataset(const std::filesystem::path& path, const std::vector<TripletSample>& samples) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write dataset: " + path.string());
  out << to_jsonl(samples);
  if (!out) throw IoError("write failed: " + path.string());
}

std::vector<TripletSample> read_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open dataset: " + path.string());
  std::vector<TripletSample> out;
  std::size_t line_no = 0;
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    if (line.empty()) continue;
    const std::string at = path.string() + ":" + std::to_string(line_no) + ": ";
    nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object()) throw FormatError(at + "invalid JSON");
    try {
      TripletSample s;
      s.sample_id = j.at("sample_id").get<std::string>();
      s.frame_refs = j.at("frame_refs").get<std::vector<std::string>>();
      s.text = j.at("text").get<std::string>();
      s.tags = j.at("tags").get<std::vector<std::string>>();
      s.split = split_from_string(j.at("split").get<std::string>());
      if (s.frame_refs.empty()) throw FormatError("sample has no frames");
      out.push_back(std::move(s));
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(at + e.what());
    } catch (const Error& e) {
      throw FormatError(at + e.what());
    }
  }
  return out;
}

Gazetteer gazetteer_from_vocabulary(const TagVocabulary& vocab) {
  Gazetteer gaz;
  for (const auto& e : vocab.entries()) {
    if (e.name.find(',') != std::string::npos) continue;
    gaz.add(e.category, e.name);
  }
  return gaz;
}

PipelineResult run_data_pipeline(const std::vector<std::filesystem::path>& transcripts,
                                 const std::filesystem::path& frames_dir, const TagVocabulary& vocab,
                                 const Gazetteer& gazetteer, JsonClient& filter, const PipelineOptions& options) {
  std::map<std::string, std::vector<TranscriptSegment>> videos;
  for (const auto& path : transcripts) {
    auto segments = ingest_transcript(path);
    if (segments.empty()) continue;
    const std::string id = segments.front().video_id;
    if (videos.count(id)) throw FormatError(path.string() + ": duplicate video_id '" + id + "'");
    videos.emplace(id, std::move(segments));
  }
  PipelineResult result;
  std::vector<ClipAnnotation> clips;
  for (const auto& [video, segments] : videos) {
    const auto manifest = frames_dir / (video + ".tsv");
    std::vector<FrameRef> frames = read_frame_manifest(manifest);
    for (auto& f : frames) f.path = std::filesystem::path(f.path).lexically_normal().generic_string();
    for (const auto& seg : segments) {
      ClipAnnotation clip;
      clip.segment = seg;
      FilterDecision d = filter_nonvisual(seg, filter);
      if (d.error) result.log.push_back(*d.error);
      clip.visual = d.visual;
      if (clip.visual) {
        clip.tags = sentence_tags(seg.text, gazetteer);
        try {
          clip.frames = sample_frames(seg, frames, options.frames_per_clip);
        } catch (const ValidationError& e) {
          result.log.push_back(e.what());
        }
      }
      clips.push_back(std::move(clip));
    }
  }
  result.dataset = assemble_dataset(clips, vocab, options.split);
  return result;
}

nlohmann::ordered_json VocabularyBuild::stats() const {
  nlohmann::ordered_json j;
  j["sentences"] = sentences;
  j["entities"] = entities.size();
  j["triplets"] = triplets.size();
  j["tags"] = vocab.size();
  std::map<std::string, std::size_t> per_category;
  for (const auto& e : vocab.entries()) ++per_category[to_string(e.category)];
  j["per_category"] = per_category;
  return j;
}

VocabularyBuild build_vocabulary_from_transcripts(const std::vector<std::filesystem::path>& transcripts,
                                                  const Gazetteer& gazetteer,
                                                  const std::vector<VlmAnnotation>& annotations, std::size_t min_freq,
                                                  const std::set<std::string>& stoplist, TagSplit split) {
  VocabularyBuild out;
  for (const auto& path : transcripts) {
    for (const auto& seg : ingest_transcript(path)) {
      auto entities = extract_entities(seg.text, gazetteer);
      out.entities.insert(out.entities.end(), entities.begin(), entities.end());
      auto triplets = extract_actions(seg.text, gazetteer, out.sentences);
      out.triplets.insert(out.triplets.end(), triplets.begin(), triplets.end());
      ++out.sentences;
    }
  }
  out.vocab = build_vocabulary(out.entities, out.triplets, annotations, min_freq, stoplist, split);
  return out;
}

}  // namespace surgtag
