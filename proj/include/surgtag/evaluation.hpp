#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "surgtag/data_engine.hpp"
#include "surgtag/model.hpp"

namespace surgtag {

/// Scores (probabilities) and multi-hot truth of one sample over K classes.
struct EvalRecord {
  std::string sample_id;
  std::vector<double> scores;
  std::vector<int> truth;

  bool operator==(const EvalRecord&) const = default;
};

/// Mean of precision@k over the ranks k holding a positive, after a stable
/// descending sort by score (ties keep input order). nullopt when there is no
/// positive: such classes are excluded, not scored 0.
std::optional<double> average_precision(const std::vector<double>& scores, const std::vector<int>& truth);

/// (1 + b^2) p r / (b^2 p + r), 0 when the denominator is 0.
double f_beta(double precision, double recall, double beta);

struct ThresholdChoice {
  double threshold = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f = 0.0;
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;
};

/// Micro-averaged P/R/F at a threshold; a pair is predicted iff score >= threshold.
ThresholdChoice confusion_at(const std::vector<EvalRecord>& records, double threshold, double beta);

/// Tries 0, every midpoint between adjacent distinct scores, and 1; returns
/// the candidate with the highest micro F_beta (ties to the lowest threshold).
ThresholdChoice search_threshold(const std::vector<EvalRecord>& records, double beta = 0.5);

struct ClassReport {
  std::string name;
  TagCategory category = TagCategory::other;
  std::size_t support = 0;
  std::optional<double> ap;
  double precision = 0.0;
  double recall = 0.0;
  double f = 0.0;
};

struct EvalReport {
  std::vector<ClassReport> classes;
  double beta = 0.5;
  ThresholdChoice threshold;  // micro P/R/F at the chosen threshold
  std::optional<double> map;  // over classes with support >= 1
  double macro_precision = 0.0;
  double macro_recall = 0.0;
  double macro_f = 0.0;
  /// Mean AP of supported classes per group: instrument, verb, target
  /// (targets and organs), triplet (composed tags) and all.
  std::vector<std::pair<std::string, std::optional<double>>> groups;
  std::vector<std::pair<std::string, std::size_t>> group_classes;

  nlohmann::ordered_json to_json() const;
};

/// Every record must have vocab.size() scores and truths.
EvalReport evaluate(const std::vector<EvalRecord>& records, const TagVocabulary& vocab, double beta = 0.5);

/// Table-shaped CSV: one row per method, columns instrument, verb, target, all.
std::string report_csv(const std::vector<std::pair<std::string, EvalReport>>& reports);

std::vector<EvalRecord> read_records(const std::filesystem::path& path);
void write_records(const std::filesystem::path& path, const std::vector<EvalRecord>& records);

enum class InferenceMode { image, video, imagewise };
std::string to_string(InferenceMode mode);
InferenceMode inference_mode_from_string(std::string_view text);

/// Runs the model over dataset samples and turns logits into records
/// (scores = sigmoid). image uses the middle frame, video fuses up to
/// fusion.max_frames frames, imagewise takes per-tag maxima over all frames.
/// Unreadable samples are reported through `log` and skipped.
std::vector<EvalRecord> predict_records(const Model& model, const std::vector<TripletSample>& samples,
                                        const std::filesystem::path& frames_root, InferenceMode mode,
                                        const std::function<void(const std::string&)>& log = {});

}  // namespace surgtag
