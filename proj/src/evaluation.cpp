#include "surgtag/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "surgtag/errors.hpp"

namespace surgtag {

namespace {

ThresholdChoice make_choice(double threshold, std::size_t tp, std::size_t fp, std::size_t fn, double beta) {
  ThresholdChoice c;
  c.threshold = threshold;
  c.tp = tp;
  c.fp = fp;
  c.fn = fn;
  c.precision = tp + fp == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fp);
  c.recall = tp + fn == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fn);
  c.f = f_beta(c.precision, c.recall, beta);
  return c;
}

void check_records(const std::vector<EvalRecord>& records, std::size_t k) {
  for (const auto& r : records) {
    if (r.scores.size() != k || r.truth.size() != k) {
      throw ValidationError("record " + r.sample_id + " has " + std::to_string(r.scores.size()) + " scores and " +
                            std::to_string(r.truth.size()) + " truths, expected " + std::to_string(k));
    }
    for (std::size_t i = 0; i < k; ++i) {
      if (!(r.scores[i] >= 0.0 && r.scores[i] <= 1.0)) {
        throw ValidationError("record " + r.sample_id + ": score outside [0, 1]");
      }
      if (r.truth[i] != 0 && r.truth[i] != 1) throw ValidationError("record " + r.sample_id + ": truth must be 0 or 1");
    }
  }
}

std::string group_of(const TagEntry& e) {
  if (std::count(e.name.begin(), e.name.end(), ',') == 2) return "triplet";
  switch (e.category) {
    case TagCategory::instrument:
      return "instrument";
    case TagCategory::verb:
      return "verb";
    case TagCategory::target:
    case TagCategory::organ:
      return "target";
    default:
      return "";
  }
}

nlohmann::ordered_json optional_number(const std::optional<double>& v) {
  return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr);
}

}  // namespace

std::optional<double> average_precision(const std::vector<double>& scores, const std::vector<int>& truth) {
  if (scores.size() != truth.size()) throw ValidationError("average_precision: scores and truth differ in length");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  std::size_t hits = 0;
  double sum = 0.0;
  for (std::size_t rank = 0; rank < order.size(); ++rank) {
    if (truth[order[rank]] == 1) {
      ++hits;
      sum += static_cast<double>(hits) / static_cast<double>(rank + 1);
    }
  }
  if (hits == 0) return std::nullopt;
  return sum / static_cast<double>(hits);
}

double f_beta(double precision, double recall, double beta) {
  // The identity p == r => F == p holds for every beta; return it exactly.
  if (precision == recall) return precision;
  const double b2 = beta * beta;
  const double denom = b2 * precision + recall;
  if (denom == 0.0) return 0.0;
  return (1.0 + b2) * precision * recall / denom;
}

ThresholdChoice confusion_at(const std::vector<EvalRecord>& records, double threshold, double beta) {
  std::size_t tp = 0, fp = 0, fn = 0;
  for (const auto& r : records) {
    for (std::size_t i = 0; i < r.scores.size(); ++i) {
      const bool predicted = r.scores[i] >= threshold;
      if (predicted && r.truth[i] == 1) ++tp;
      if (predicted && r.truth[i] == 0) ++fp;
      if (!predicted && r.truth[i] == 1) ++fn;
    }
  }
  return make_choice(threshold, tp, fp, fn, beta);
}

ThresholdChoice search_threshold(const std::vector<EvalRecord>& records, double beta) {
  if (records.empty()) throw ValidationError("search_threshold needs at least one record");
  check_records(records, records.front().scores.size());
  std::vector<std::pair<double, int>> pairs;
  std::size_t positives = 0;
  for (const auto& r : records) {
    for (std::size_t i = 0; i < r.scores.size(); ++i) {
      pairs.emplace_back(r.scores[i], r.truth[i]);
      positives += static_cast<std::size_t>(r.truth[i]);
    }
  }
  std::sort(pairs.begin(), pairs.end(), [](const auto& a, const auto& b) { return a.first > b.first; });

  std::vector<double> distinct;
  for (const auto& [s, t] : pairs) {
    if (distinct.empty() || distinct.back() != s) distinct.push_back(s);
  }
  std::vector<double> candidates{1.0};
  for (std::size_t i = 0; i + 1 < distinct.size(); ++i) candidates.push_back((distinct[i] + distinct[i + 1]) / 2.0);
  candidates.push_back(0.0);  // descending order

  std::vector<ThresholdChoice> choices;
  std::size_t next = 0, tp = 0, fp = 0;
  for (double t : candidates) {
    while (next < pairs.size() && pairs[next].first >= t) {
      (pairs[next].second == 1 ? tp : fp)++;
      ++next;
    }
    choices.push_back(make_choice(t, tp, fp, positives - tp, beta));
  }
  // Ascending scan so equal F keeps the lowest threshold.
  ThresholdChoice best = choices.back();
  for (auto it = choices.rbegin(); it != choices.rend(); ++it) {
    if (it->f > best.f) best = *it;
  }
  return best;
}

EvalReport evaluate(const std::vector<EvalRecord>& records, const TagVocabulary& vocab, double beta) {
  const std::size_t k = vocab.size();
  check_records(records, k);
  EvalReport rep;
  rep.beta = beta;
  if (!records.empty()) rep.threshold = search_threshold(records, beta);

  const std::vector<std::string> group_names = {"instrument", "verb", "target", "triplet", "all"};
  std::map<std::string, std::vector<double>> group_aps;
  std::vector<double> aps;
  double sum_p = 0.0, sum_r = 0.0, sum_f = 0.0;
  for (std::size_t c = 0; c < k; ++c) {
    ClassReport cls;
    cls.name = vocab[c].name;
    cls.category = vocab[c].category;
    std::vector<double> scores;
    std::vector<int> truth;
    for (const auto& r : records) {
      scores.push_back(r.scores[c]);
      truth.push_back(r.truth[c]);
      cls.support += static_cast<std::size_t>(r.truth[c]);
    }
    cls.ap = average_precision(scores, truth);
    std::size_t tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
      const bool predicted = scores[i] >= rep.threshold.threshold;
      tp += predicted && truth[i] == 1;
      fp += predicted && truth[i] == 0;
      fn += !predicted && truth[i] == 1;
    }
    const ThresholdChoice at = make_choice(rep.threshold.threshold, tp, fp, fn, beta);
    cls.precision = at.precision;
    cls.recall = at.recall;
    cls.f = at.f;
    if (cls.ap) {
      aps.push_back(*cls.ap);
      sum_p += cls.precision;
      sum_r += cls.recall;
      sum_f += cls.f;
      group_aps["all"].push_back(*cls.ap);
      const std::string g = group_of(vocab[c]);
      if (!g.empty()) group_aps[g].push_back(*cls.ap);
    }
    rep.classes.push_back(std::move(cls));
  }
  if (!aps.empty()) {
    const double n = static_cast<double>(aps.size());
    rep.map = std::accumulate(aps.begin(), aps.end(), 0.0) / n;
    rep.macro_precision = sum_p / n;
    rep.macro_recall = sum_r / n;
    rep.macro_f = sum_f / n;
  }
  for (const auto& g : group_names) {
    const auto& v = group_aps[g];
    std::optional<double> mean;
    if (!v.empty()) mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    rep.groups.emplace_back(g, mean);
    rep.group_classes.emplace_back(g, v.size());
  }
  return rep;
}

nlohmann::ordered_json EvalReport::to_json() const {
  nlohmann::ordered_json j;
  j["beta"] = beta;
  j["averaging"] = {{"threshold_search", "micro"}, {"map", "macro over classes with support >= 1"}};
  j["triplet_protocol"] = "component-grouped mAP over composed instrument,verb,target tags";
  j["threshold"] = threshold.threshold;
  j["micro"] = {{"precision", threshold.precision}, {"recall", threshold.recall}, {"f", threshold.f},
                {"tp", threshold.tp},               {"fp", threshold.fp},         {"fn", threshold.fn}};
  j["macro"] = {{"precision", macro_precision}, {"recall", macro_recall}, {"f", macro_f}};
  j["map"] = optional_number(map);
  nlohmann::ordered_json g = nlohmann::ordered_json::object();
  for (std::size_t i = 0; i < groups.size(); ++i) {
    g[groups[i].first] = {{"map", optional_number(groups[i].second)}, {"classes", group_classes[i].second}};
  }
  j["groups"] = g;
  j["classes"] = nlohmann::ordered_json::array();
  for (const auto& c : classes) {
    nlohmann::ordered_json row;
    row["name"] = c.name;
    row["category"] = to_string(c.category);
    row["support"] = c.support;
    row["ap"] = optional_number(c.ap);
    row["precision"] = c.precision;
    row["recall"] = c.recall;
    row["f"] = c.f;
    j["classes"].push_back(row);
  }
  return j;
}

std::string report_csv(const std::vector<std::pair<std::string, EvalReport>>& reports) {
  std::string out = "method,instrument,verb,target,all\n";
  for (const auto& [method, rep] : reports) {
    out += method;
    for (const char* g : {"instrument", "verb", "target", "all"}) {
      out.push_back(',');
      for (const auto& [name, value] : rep.groups) {
        if (name == g && value) {
          char buf[32];
          std::snprintf(buf, sizeof(buf), "%.4f", *value);
          out += buf;
        }
      }
    }
    out.push_back('\n');
  }
  return out;
}

std::vector<EvalRecord> read_records(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open records: " + path.string());
  std::vector<EvalRecord> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string at = path.string() + ":" + std::to_string(line_no) + ": ";
    auto j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object()) throw FormatError(at + "invalid JSON");
    try {
      EvalRecord r;
      r.sample_id = j.at("sample_id").get<std::string>();
      r.scores = j.at("scores").get<std::vector<double>>();
      r.truth = j.at("truth").get<std::vector<int>>();
      out.push_back(std::move(r));
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(at + e.what());
    }
  }
  return out;
}

void write_records(const std::filesystem::path& path, const std::vector<EvalRecord>& records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write records: " + path.string());
  for (const auto& r : records) {
    nlohmann::ordered_json j;
    j["sample_id"] = r.sample_id;
    j["scores"] = r.scores;
    j["truth"] = r.truth;
    out << j.dump() << '\n';
  }
  if (!out) throw IoError("write failed: " + path.string());
}

std::string to_string(InferenceMode mode) {
  switch (mode) {
    case InferenceMode::image:
      return "image";
    case InferenceMode::video:
      return "video";
    default:
      return "imagewise";
  }
}

InferenceMode inference_mode_from_string(std::string_view text) {
  if (text == "image") return InferenceMode::image;
  if (text == "video") return InferenceMode::video;
  if (text == "imagewise") return InferenceMode::imagewise;
  throw ConfigError("unknown mode '" + std::string(text) + "' (expected image|video|imagewise)");
}

std::vector<EvalRecord> predict_records(const Model& model, const std::vector<TripletSample>& samples,
                                        const std::filesystem::path& frames_root, InferenceMode mode,
                                        const std::function<void(const std::string&)>& log) {
  const auto& vocab = model.vocabulary();
  std::vector<EvalRecord> out;
  for (const auto& s : samples) {
    std::vector<ImageRaster> frames;
    try {
      if (s.frame_refs.empty()) throw ValidationError("no frame refs");
      for (const auto& ref : s.frame_refs) frames.push_back(read_image(frames_root / ref));
    } catch (const Error& e) {
      if (log) log("sample " + s.sample_id + " skipped: " + e.what());
      continue;
    }
    TagPrediction pred;
    switch (mode) {
      case InferenceMode::image:
        pred = infer_image(model, frames[sample_frame_indices(frames.size(), 1).front()]);
        break;
      case InferenceMode::video:
        pred = infer_video(model, frames, 0.5, model.config().fusion.max_frames);
        break;
      case InferenceMode::imagewise:
        pred = infer_video_imagewise(model, frames);
        break;
    }
    EvalRecord r;
    r.sample_id = s.sample_id;
    r.scores = pred.probabilities;
    r.truth.assign(vocab.size(), 0);
    for (const auto& tag : s.tags) {
      if (auto idx = vocab.find(tag)) r.truth[*idx] = 1;
    }
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace surgtag
