#include <algorithm>
#include <set>

#include "doctest.h"
#include "surgtag/errors.hpp"
#include "surgtag/grad_check.hpp"
#include "surgtag/model.hpp"
#include "test_support.hpp"

using namespace surgtag;
using namespace surgtag::testing;

namespace {

Model make_model(std::uint64_t seed, const std::vector<std::string>& names, std::size_t text_vocab = 0) {
  ModelConfig cfg = tiny_config();
  return Model(cfg, make_vocab(names), TagEmbeddingTable(cfg.dim()), text_vocab, seed);
}

std::vector<ImageRaster> random_frames(Rng& rng, std::size_t n) {
  std::vector<ImageRaster> frames;
  for (std::size_t i = 0; i < n; ++i) frames.push_back(random_image(rng, 8, 8, 1));
  return frames;
}

const std::vector<std::string> kTags = {"grasper", "hook", "gallbladder", "dissect", "cystic duct"};

}  // namespace

TEST_CASE("decode: K=0, duplicate embeddings, dim mismatch") {
  Model empty = make_model(1, {});
  Rng rng(2);
  ImageRaster img = random_image(rng, 8, 8, 1);
  CHECK(infer_image(empty, img).logits.empty());
  CHECK(empty.tag_embeddings().defined() == false);

  ParameterStore store;
  TagDecoderConfig cfg;
  cfg.heads = 2;
  Rng r(3);
  TagDecoder::declare(store, cfg, 8, r);
  TagDecoder dec = TagDecoder::bind(store, cfg, 8);
  Tensor visual = random_tensor(r, {4, 8});
  Tensor row = random_tensor(r, {1, 8});
  Tensor logits = dec.decode(visual, concat_rows({row, random_tensor(r, {1, 8}), row}));
  CHECK(logits.shape() == Shape{3});
  CHECK(logits.data()[0] == logits.data()[2]);
  CHECK_THROWS_AS(dec.decode(visual, random_tensor(r, {2, 6})), ConfigError);
  CHECK_THROWS_AS(dec.decode(random_tensor(r, {4, 6}), row), ConfigError);
}

TEST_CASE("decode: per-tag independence under vocabulary permutation") {
  ParameterStore store;
  TagDecoderConfig cfg;
  cfg.heads = 2;
  Rng r(4);
  TagDecoder::declare(store, cfg, 8, r);
  TagDecoder dec = TagDecoder::bind(store, cfg, 8);
  Tensor visual = random_tensor(r, {4, 8});
  std::vector<Tensor> rows;
  for (int i = 0; i < 5; ++i) rows.push_back(random_tensor(r, {1, 8}));
  Tensor base = dec.decode(visual, concat_rows(rows));
  std::vector<std::size_t> perm = {4, 2, 0, 3, 1};
  std::vector<Tensor> permuted;
  for (std::size_t i : perm) permuted.push_back(rows[i]);
  Tensor out = dec.decode(visual, concat_rows(permuted));
  for (std::size_t i = 0; i < perm.size(); ++i) CHECK(out.data()[i] == base.data()[perm[i]]);
}

TEST_CASE("decode: gradient check through the tag decoder") {
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    ParameterStore store;
    TagDecoderConfig cfg;
    cfg.heads = 2;
    Rng r(seed);
    TagDecoder::declare(store, cfg, 4, r);
    TagDecoder dec = TagDecoder::bind(store, cfg, 4);
    std::vector<Parameter> inputs = store.all();
    inputs.push_back({"visual", random_tensor(r, {3, 4}, -1, 1, true), false});
    inputs.push_back({"embeddings", random_tensor(r, {2, 4}, -1, 1, false), true});
    Tensor targets = Tensor::from({2}, {1.0, 0.0});
    auto report = grad_check(
        [&] { return bce_with_logits(dec.decode(inputs[inputs.size() - 2].tensor, inputs.back().tensor), targets); },
        inputs);
    CHECK(report.max_rel_error < 1e-4);
    CHECK(std::find(report.inputs_checked.begin(), report.inputs_checked.end(), "embeddings") ==
          report.inputs_checked.end());
  }
}

TEST_CASE("apply_threshold: boundary, empty selection, monotonicity, range") {
  CHECK(apply_threshold({-40, -40, -40}).selected.empty());
  auto p = apply_threshold({0.0}, 0.5);
  CHECK(p.selected == std::vector<std::size_t>{0});
  CHECK(p.probabilities[0] == 0.5);
  CHECK_THROWS_AS(apply_threshold({0.0}, 0.0), ValidationError);
  CHECK_THROWS_AS(apply_threshold({0.0}, 1.0), ValidationError);
  CHECK_THROWS_AS(apply_threshold({0.0}, -0.2), ValidationError);

  Rng rng(6);
  std::vector<double> logits(40);
  for (double& z : logits) z = rng.uniform(-4, 4);
  std::set<std::size_t> previous;
  bool first = true;
  for (double t = 0.02; t < 1.0; t += 0.02) {
    auto pred = apply_threshold(logits, t);
    std::set<std::size_t> now(pred.selected.begin(), pred.selected.end());
    for (std::size_t i = 0; i < logits.size(); ++i) CHECK((now.count(i) == 1) == (pred.probabilities[i] >= t));
    if (!first) CHECK(std::includes(previous.begin(), previous.end(), now.begin(), now.end()));
    previous = now;
    first = false;
  }
}

TEST_CASE("extend_vocabulary: appends, validates, preserves existing logits bitwise") {
  Model model = make_model(7, kTags);
  Rng rng(8);
  ImageRaster img = random_image(rng, 8, 8, 1);
  auto before = infer_image(model, img).logits;

  TagEmbeddingTable provider(model.config().dim());
  model.extend_vocabulary({"Clipper"}, provider);
  CHECK(model.vocabulary().size() == kTags.size() + 1);
  CHECK(model.vocabulary()[kTags.size()].name == "clipper");
  CHECK(model.vocabulary()[kTags.size()].category == TagCategory::other);
  CHECK(model.vocabulary()[kTags.size()].split == TagSplit::both);
  CHECK(model.parameters().get(kTagEmbeddingParam).frozen);
  auto after = infer_image(model, img).logits;
  REQUIRE(after.size() == before.size() + 1);
  for (std::size_t i = 0; i < before.size(); ++i) CHECK(after[i] == before[i]);

  CHECK_THROWS_AS(model.extend_vocabulary({""}, provider), ValidationError);
  try {
    model.extend_vocabulary({"HOOK"}, provider);
    FAIL("expected ValidationError");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("hook") != std::string::npos);
  }
  CHECK_THROWS_AS(model.extend_vocabulary({"scissors", "scissors"}, provider), ValidationError);
  CHECK(model.vocabulary().size() == kTags.size() + 1);

  Model empty = make_model(7, {});
  empty.extend_vocabulary({"liver", "hook"}, provider);
  CHECK(infer_image(empty, img).logits.size() == 2);
}

TEST_CASE("infer_image: determinism and shape") {
  Model model = make_model(3, kTags);
  Rng rng(1);
  ImageRaster img = random_image(rng, 8, 8, 1);
  auto a = infer_image(model, img, 0.4);
  auto b = infer_image(model, img, 0.4);
  CHECK(a.logits == b.logits);
  CHECK(a.selected == b.selected);
  CHECK(a.logits.size() == kTags.size());
  CHECK(a.threshold == 0.4);
}

TEST_CASE("infer_video: one fuse and one decode; N=1 is not image inference") {
  Model model = make_model(5, kTags);
  Rng rng(2);
  auto frames = random_frames(rng, 8);
  model.reset_counters();
  auto video = infer_video(model, frames);
  CHECK(model.decode_calls() == 1);
  CHECK(model.fuse_calls() == 1);
  CHECK(video.logits.size() == kTags.size());

  model.reset_counters();
  auto imagewise = infer_video_imagewise(model, frames);
  CHECK(model.decode_calls() == 8);
  CHECK(model.fuse_calls() == 0);
  CHECK(imagewise.logits.size() == kTags.size());

  auto single = infer_video(model, {frames[0]});
  auto image = infer_image(model, frames[0]);
  CHECK(single.logits != image.logits);

  CHECK_THROWS_AS(infer_video(model, {}), ValidationError);
  CHECK_THROWS_AS(infer_video_imagewise(model, {}), ValidationError);
}

TEST_CASE("infer_video: frame order matters with positional embeddings") {
  Model model = make_model(11, kTags);
  Rng rng(3);
  auto frames = random_frames(rng, 4);
  auto reversed = frames;
  std::reverse(reversed.begin(), reversed.end());
  CHECK(infer_video(model, frames).logits != infer_video(model, reversed).logits);
}

TEST_CASE("infer_video_imagewise: single frame equals image inference; union law") {
  Model model = make_model(13, kTags);
  Rng rng(4);
  auto frames = random_frames(rng, 1);
  auto one = infer_video_imagewise(model, frames);
  auto img = infer_image(model, frames[0]);
  CHECK(one.logits == img.logits);
  CHECK(one.selected == img.selected);

  frames = random_frames(rng, 5);
  for (double t : {0.3, 0.5, 0.7}) {
    std::set<std::size_t> expected;
    std::vector<double> best(kTags.size(), -1e300);
    for (const auto& f : frames) {
      auto p = infer_image(model, f, t);
      expected.insert(p.selected.begin(), p.selected.end());
      for (std::size_t k = 0; k < best.size(); ++k) best[k] = std::max(best[k], p.logits[k]);
    }
    auto got = infer_video_imagewise(model, frames, t);
    CHECK(std::set<std::size_t>(got.selected.begin(), got.selected.end()) == expected);
    CHECK(got.logits == best);
  }
}

TEST_CASE("sample_frame_indices: regular intervals") {
  CHECK(sample_frame_indices(100, 4) == std::vector<std::size_t>{0, 33, 66, 99});
  CHECK(sample_frame_indices(3, 8) == std::vector<std::size_t>{0, 1, 2});
  CHECK(sample_frame_indices(9, 1) == std::vector<std::size_t>{4});
  CHECK_THROWS_AS(sample_frame_indices(0, 2), ValidationError);
}

TEST_CASE("model: caption head is absent from inference-only models") {
  Model inference = make_model(1, kTags);
  CHECK_FALSE(inference.has_text_decoder());
  CHECK_THROWS_AS(inference.text_decoder(), ConfigError);
  Model trainable = make_model(1, kTags, 20);
  CHECK(trainable.has_text_decoder());
  std::size_t text_params = 0;
  for (const auto& p : trainable.parameters().all()) {
    if (p.name.rfind("text_decoder.", 0) == 0) ++text_params;
  }
  CHECK(trainable.parameters().size() == inference.parameters().size() + text_params);
  // identical inference parameters regardless of the caption head
  Rng rng(9);
  ImageRaster img = random_image(rng, 8, 8, 1);
  CHECK(infer_image(inference, img).logits == infer_image(trainable, img).logits);
}
