#include <cmath>
#include <fstream>
#include <numeric>

#include "doctest.h"
#include "surgtag/errors.hpp"
#include "surgtag/evaluation.hpp"
#include "test_support.hpp"

using namespace surgtag;
using namespace surgtag::testing;

namespace {

const std::string kEval = std::string(SURGTAG_FIXTURES) + "/eval";

// Independent AP: rank of item i = 1 + #items strictly ahead of it in the
// stable descending order; precision at that rank counts positives ranked at
// or above it.
std::optional<double> brute_ap(const std::vector<double>& s, const std::vector<int>& t) {
  const std::size_t n = s.size();
  auto rank = [&](std::size_t i) {
    std::size_t r = 1;
    for (std::size_t j = 0; j < n; ++j) r += s[j] > s[i] || (s[j] == s[i] && j < i);
    return r;
  };
  double total = 0.0;
  std::size_t pos = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!t[i]) continue;
    ++pos;
    std::size_t hits = 0;
    for (std::size_t j = 0; j < n; ++j) hits += t[j] && rank(j) <= rank(i);
    total += static_cast<double>(hits) / static_cast<double>(rank(i));
  }
  if (pos == 0) return std::nullopt;
  return total / static_cast<double>(pos);
}

std::vector<EvalRecord> random_records(Rng& rng, std::size_t n, std::size_t k, bool quantized) {
  std::vector<EvalRecord> out;
  for (std::size_t i = 0; i < n; ++i) {
    EvalRecord r{"r" + std::to_string(i), {}, {}};
    for (std::size_t c = 0; c < k; ++c) {
      double s = rng.uniform();
      if (quantized) s = std::round(s * 10.0) / 10.0;
      r.scores.push_back(s);
      r.truth.push_back(rng.uniform() < 0.4 ? 1 : 0);
    }
    out.push_back(std::move(r));
  }
  return out;
}

TagVocabulary eval_vocab() { return TagVocabulary::read_tsv(kEval + "/vocab.tsv"); }

}  // namespace

TEST_CASE("average_precision: definition examples") {
  CHECK(*average_precision({0.9, 0.8, 0.1}, {1, 1, 0}) == 1.0);
  CHECK(*average_precision({0.9, 0.1}, {0, 1}) == 0.5);
  CHECK_FALSE(average_precision({0.3, 0.2}, {0, 0}).has_value());
  // tie: the stable order keeps the negative (index 0) ahead
  CHECK(*average_precision({0.5, 0.5}, {0, 1}) == 0.5);
  CHECK(*average_precision({0.5, 0.5}, {1, 0}) == 1.0);
  CHECK_THROWS_AS(average_precision({0.5}, {1, 0}), ValidationError);
}

TEST_CASE("average_precision: matches the brute-force oracle on 100 random instances") {
  Rng rng(101);
  int compared = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 1 + rng.index(12);
    std::vector<double> s(n);
    std::vector<int> t(n);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = trial % 2 ? std::round(rng.uniform() * 5.0) / 5.0 : rng.uniform();
      t[i] = rng.uniform() < 0.5;
    }
    auto a = average_precision(s, t);
    auto b = brute_ap(s, t);
    REQUIRE(a.has_value() == b.has_value());
    if (a) {
      CHECK(std::abs(*a - *b) < 1e-9);
      ++compared;
    }
  }
  CHECK(compared > 80);
}

TEST_CASE("average_precision: invariant under strictly monotone score transforms") {
  Rng rng(7);
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<double> s(10);
    std::vector<int> t(10);
    for (std::size_t i = 0; i < 10; ++i) {
      s[i] = rng.uniform();
      t[i] = i % 3 == 0;
    }
    std::vector<double> warped;
    for (double x : s) warped.push_back(std::pow(x, 3.0) * 0.5 + 0.1);
    CHECK(*average_precision(s, t) == *average_precision(warped, t));
  }
}

TEST_CASE("f_beta: identities and the worked example") {
  for (double x : {0.0, 0.1, 0.37, 0.5, 0.99, 1.0}) {
    for (double beta : {0.5, 1.0, 2.0}) CHECK(f_beta(x, x, beta) == x);
  }
  CHECK(f_beta(1.0, 0.0, 0.5) == 0.0);
  CHECK(f_beta(0.0, 0.0, 0.5) == 0.0);
  CHECK(f_beta(0.6, 0.3, 0.5) == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("search_threshold: tie rule and separable case") {
  std::vector<EvalRecord> same = {{"a", {0.9, 0.9}, {1, 1}}, {"b", {0.9}, {1}}};
  same.pop_back();
  auto t = search_threshold(same);
  CHECK(t.threshold == 0.0);
  CHECK(t.f == 1.0);

  auto sep = search_threshold({{"a", {0.2, 0.8}, {0, 1}}});
  CHECK(sep.threshold > 0.2);
  CHECK(sep.threshold < 0.8);
  CHECK(sep.f == 1.0);
  CHECK_THROWS_AS(search_threshold({}), ValidationError);
}

TEST_CASE("search_threshold: no point of a 10^4 grid beats the candidate set") {
  Rng rng(55);
  for (int trial = 0; trial < 50; ++trial) {
    auto records = random_records(rng, 2 + rng.index(8), 1 + rng.index(5), trial % 3 == 0);
    auto best = search_threshold(records);
    double grid_best = 0.0;
    for (int i = 0; i <= 10000; ++i) {
      grid_best = std::max(grid_best, confusion_at(records, i / 10000.0, 0.5).f);
    }
    CHECK(grid_best <= best.f + 1e-12);
    // the reported F is recomputed from the reported counts exactly
    const double p = best.tp + best.fp ? static_cast<double>(best.tp) / static_cast<double>(best.tp + best.fp) : 0.0;
    const double r = best.tp + best.fn ? static_cast<double>(best.tp) / static_cast<double>(best.tp + best.fn) : 0.0;
    CHECK(best.precision == p);
    CHECK(best.recall == r);
    CHECK(best.f == f_beta(p, r, 0.5));
    auto again = confusion_at(records, best.threshold, 0.5);
    CHECK(again.tp == best.tp);
    CHECK(again.fp == best.fp);
    CHECK(again.fn == best.fn);
  }
}

TEST_CASE("evaluate: pinned 6x5 fixture matches the oracle report") {
  auto records = read_records(kEval + "/records.jsonl");
  REQUIRE(records.size() == 6);
  auto report = evaluate(records, eval_vocab()).to_json();
  std::ifstream in(kEval + "/expected_report.json");
  auto expected = nlohmann::json::parse(in);
  auto near = [](const nlohmann::json& a, const nlohmann::json& b) {
    if (a.is_null() || b.is_null()) return a.is_null() && b.is_null();
    return std::abs(a.get<double>() - b.get<double>()) < 1e-12;
  };
  CHECK(near(report["threshold"], expected["threshold"]));
  CHECK(near(report["map"], expected["map"]));
  for (const char* k : {"precision", "recall", "f"}) {
    CHECK(near(report["micro"][k], expected["micro"][k]));
    CHECK(near(report["macro"][k], expected["macro"][k]));
  }
  for (const char* k : {"tp", "fp", "fn"}) CHECK(report["micro"][k] == expected["micro"][k]);
  for (auto& [g, v] : expected["groups"].items()) {
    INFO(g);
    CHECK(near(report["groups"][g]["map"], v["map"]));
    CHECK(report["groups"][g]["classes"] == v["classes"]);
  }
  REQUIRE(report["classes"].size() == 5);
  for (std::size_t c = 0; c < 5; ++c) {
    const auto& a = report["classes"][c];
    const auto& b = expected["classes"][c];
    CHECK(a["name"] == b["name"]);
    CHECK(a["support"] == b["support"]);
    for (const char* k : {"ap", "precision", "recall", "f"}) CHECK(near(a[k], b[k]));
  }
  CHECK(report["classes"][4]["ap"].is_null());  // zero support, excluded
}

TEST_CASE("evaluate: trivial cases and validation") {
  TagVocabulary one = make_vocab({"hook"});
  auto rep = evaluate({{"a", {0.9}, {1}}, {"b", {0.1}, {0}}}, one);
  CHECK(*rep.map == 1.0);
  CHECK(rep.threshold.precision == 1.0);
  CHECK(rep.threshold.recall == 1.0);
  CHECK(rep.threshold.f == 1.0);
  CHECK(rep.classes[0].f == 1.0);
  CHECK_THROWS_AS(evaluate({{"a", {0.9, 0.1}, {1, 0}}}, one), ValidationError);
  CHECK_THROWS_AS(evaluate({{"a", {1.5}, {1}}}, one), ValidationError);
  CHECK_THROWS_AS(evaluate({{"a", {0.5}, {2}}}, one), ValidationError);
}

TEST_CASE("evaluate: mAP over disjoint class sets is the support-aware mean") {
  Rng rng(12);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t k1 = 1 + rng.index(4), k2 = 1 + rng.index(4);
    auto records = random_records(rng, 10, k1 + k2, false);
    std::vector<std::string> names;
    for (std::size_t c = 0; c < k1 + k2; ++c) names.push_back("t" + std::to_string(c));
    auto split = [&](std::size_t begin, std::size_t end) {
      std::vector<EvalRecord> part;
      for (const auto& r : records) {
        part.push_back({r.sample_id, {r.scores.begin() + begin, r.scores.begin() + end},
                        {r.truth.begin() + begin, r.truth.begin() + end}});
      }
      return evaluate(part, make_vocab({names.begin() + begin, names.begin() + end}));
    };
    auto all = evaluate(records, make_vocab(names));
    auto a = split(0, k1);
    auto b = split(k1, k1 + k2);
    const double na = static_cast<double>(a.group_classes.back().second);
    const double nb = static_cast<double>(b.group_classes.back().second);
    if (na + nb == 0) continue;
    const double expect = ((a.map ? *a.map * na : 0.0) + (b.map ? *b.map * nb : 0.0)) / (na + nb);
    CHECK(*all.map == doctest::Approx(expect).epsilon(1e-12));
  }
}

TEST_CASE("evaluate: deterministic and invariant to record order") {
  Rng rng(31);
  auto records = random_records(rng, 12, 5, false);
  auto vocab = eval_vocab();
  const auto base = evaluate(records, vocab).to_json().dump();
  CHECK(evaluate(records, vocab).to_json().dump() == base);
  for (int trial = 0; trial < 5; ++trial) {
    rng.shuffle(records);
    CHECK(evaluate(records, vocab).to_json().dump() == base);
  }
}

TEST_CASE("records and CSV formats") {
  auto dir = scratch_dir("records");
  std::vector<EvalRecord> records = {{"a", {0.25, 1.0}, {0, 1}}, {"b", {0.0, 0.125}, {1, 0}}};
  write_records(dir / "r.jsonl", records);
  CHECK(read_records(dir / "r.jsonl") == records);
  std::ofstream(dir / "bad.jsonl") << R"({"sample_id": "a", "scores": [0.1]})" << "\n";
  try {
    read_records(dir / "bad.jsonl");
    FAIL("expected FormatError");
  } catch (const FormatError& e) {
    CHECK(std::string(e.what()).find(":1:") != std::string::npos);
  }
  auto rep = evaluate(read_records(kEval + "/records.jsonl"), eval_vocab());
  CHECK(report_csv({{"video", rep}}) == "method,instrument,verb,target,all\nvideo,0.9583,1.0000,0.9500,0.9667\n");
  CHECK(inference_mode_from_string("imagewise") == InferenceMode::imagewise);
  CHECK_THROWS_AS(inference_mode_from_string("frames"), ConfigError);
}

TEST_CASE("predict_records: modes produce records over the same samples") {
  auto dir = scratch_dir("predict");
  auto dataset = write_overfit_fixture(dir, 8);
  Model model(overfit_model_config(), overfit_vocab(), TagEmbeddingTable(16), 0, 2);
  auto samples = read_dataset(dataset);
  samples.push_back({"broken", {"missing.pgm"}, "t", {"hook"}, TagSplit::pretrain});
  std::vector<std::string> log;
  for (auto mode : {InferenceMode::image, InferenceMode::video, InferenceMode::imagewise}) {
    log.clear();
    auto records = predict_records(model, samples, dir, mode, [&](const std::string& m) { log.push_back(m); });
    REQUIRE(records.size() == 8);
    CHECK(log.size() == 1);
    for (std::size_t i = 0; i < 8; ++i) {
      CHECK(records[i].sample_id == samples[i].sample_id);
      CHECK(records[i].scores.size() == 4);
    }
    CHECK(records[0].truth == std::vector<int>{1, 0, 0, 0});
    auto rep = evaluate(records, model.vocabulary());
    CHECK(rep.map.has_value());
  }
}
