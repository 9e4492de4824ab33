#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "surgtag/json_client.hpp"
#include "surgtag/label_engine.hpp"
#include "surgtag/vocabulary.hpp"

namespace surgtag {

struct TranscriptSegment {
  std::string video_id;
  std::size_t index = 0;
  double start_s = 0.0;
  double end_s = 0.0;
  std::string text;

  bool operator==(const TranscriptSegment&) const = default;
};

/// Reads `{"video_id", "duration_s", "segments": [{"start_s","end_s","text"}]}`.
/// Segments must be sorted, non-overlapping and inside [0, duration]; any
/// violation is a FormatError naming the segment index.
std::vector<TranscriptSegment> ingest_transcript(const std::filesystem::path& path);

/// Default stop phrases of the rule-based filter.
std::vector<std::string> default_stop_phrases();
std::vector<std::string> read_stop_phrases(const std::filesystem::path& path);

/// In-process filter service: `{"text"}` -> `{"visual": false}` iff the text
/// contains a stop phrase on word boundaries (case-insensitive).
std::unique_ptr<JsonClient> make_stop_phrase_filter(std::vector<std::string> phrases = default_stop_phrases());

/// Connects a filter or annotation service: "mock" (stop-phrase filter),
/// "http://..." or "cmd:<program> [args...]".
std::unique_ptr<JsonClient> make_service_client(const std::string& spec);

struct FilterDecision {
  bool visual = false;
  std::optional<std::string> error;  // set when the client failed (segment dropped)
};

FilterDecision filter_nonvisual(const TranscriptSegment& segment, JsonClient& client);

struct FrameRef {
  double timestamp = 0.0;
  std::string path;

  bool operator==(const FrameRef&) const = default;
};

/// `timestamp_s<TAB>path` rows, returned sorted by timestamp.
std::vector<FrameRef> read_frame_manifest(const std::filesystem::path& path);

/// N target times at regular intervals over the segment (midpoint for N=1),
/// each mapped to the nearest frame inside the segment, ties to the earlier.
std::vector<FrameRef> sample_frames(const TranscriptSegment& segment, const std::vector<FrameRef>& frames, std::size_t n);

struct ClipAnnotation {
  TranscriptSegment segment;
  bool visual = false;
  std::vector<std::string> tags;
  std::vector<FrameRef> frames;
};

struct TripletSample {
  std::string sample_id;
  std::vector<std::string> frame_refs;
  std::string text;
  std::vector<std::string> tags;
  TagSplit split = TagSplit::pretrain;

  bool operator==(const TripletSample&) const = default;
};

struct DatasetStats {
  std::size_t clips_in = 0;
  std::size_t nonvisual = 0;
  std::size_t clips_without_tags = 0;
  std::size_t samples_out = 0;
  std::size_t tags_dropped = 0;
  std::size_t unique_tags = 0;

  nlohmann::ordered_json to_json() const;
};

struct Dataset {
  std::vector<TripletSample> samples;
  DatasetStats stats;
};

/// Visual clips with at least one vocabulary tag become samples, with tags in
/// vocabulary order; out-of-vocabulary tags are dropped and counted.
Dataset assemble_dataset(const std::vector<ClipAnnotation>& clips, const TagVocabulary& vocab, TagSplit split);

/// "<video_id>-<index:04>"
std::string sample_id_for(const TranscriptSegment& segment);

/// One JSON object per line, keys in the order sample_id, frame_refs, text, tags, split.
std::string to_jsonl(const std::vector<TripletSample>& samples);
void write_dataset(const std::filesystem::path& path, const std::vector<TripletSample>& samples);
std::vector<TripletSample> read_dataset(const std::filesystem::path& path);

/// Uses the vocabulary itself as the gazetteer (composed triplet tags excluded).
Gazetteer gazetteer_from_vocabulary(const TagVocabulary& vocab);

struct PipelineOptions {
  std::size_t frames_per_clip = 1;
  TagSplit split = TagSplit::pretrain;
};

struct PipelineResult {
  Dataset dataset;
  std::vector<std::string> log;
};

/// ingest -> filter -> tag -> sample -> assemble over several transcripts,
/// in video_id then segment order. Frame manifests are
/// `<frames_dir>/<video_id>.tsv`; frame refs stay relative to `frames_dir`.
PipelineResult run_data_pipeline(const std::vector<std::filesystem::path>& transcripts,
                                 const std::filesystem::path& frames_dir, const TagVocabulary& vocab,
                                 const Gazetteer& gazetteer, JsonClient& filter, const PipelineOptions& options);

struct VocabularyBuild {
  TagVocabulary vocab;
  std::vector<EntityMatch> entities;
  std::vector<ActionTriplet> triplets;
  std::size_t sentences = 0;

  nlohmann::ordered_json stats() const;
};

/// Label engine over every segment of the given transcripts (sentence ids
/// count up across files in the given order), plus optional VLM annotations.
VocabularyBuild build_vocabulary_from_transcripts(const std::vector<std::filesystem::path>& transcripts,
                                                  const Gazetteer& gazetteer,
                                                  const std::vector<VlmAnnotation>& annotations, std::size_t min_freq,
                                                  const std::set<std::string>& stoplist, TagSplit split = TagSplit::both);

}  // namespace surgtag
