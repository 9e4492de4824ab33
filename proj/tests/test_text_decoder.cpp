#include "doctest.h"
#include "surgtag/errors.hpp"
#include "surgtag/grad_check.hpp"
#include "surgtag/text_decoder.hpp"
#include "test_support.hpp"

using namespace surgtag;
using namespace surgtag::testing;

namespace {

struct Fixture {
  ParameterStore store;
  TextDecoder decoder;
};

Fixture make_decoder(std::size_t dim, std::size_t vocab, std::size_t max_len, std::uint64_t seed) {
  Fixture f;
  TextDecoderConfig cfg;
  cfg.heads = 2;
  cfg.max_len = max_len;
  Rng rng(seed);
  TextDecoder::declare(f.store, cfg, dim, vocab, rng);
  f.decoder = TextDecoder::bind(f.store, cfg, dim);
  return f;
}

}  // namespace

TEST_CASE("tokenizer: min_freq, specials, ordering, unknowns") {
  CaptionTokenizer tok = CaptionTokenizer::build({"a a b"}, 2);
  CHECK(tok.id_of("a") == CaptionTokenizer::kNumSpecials);
  CHECK(tok.id_of("b") == CaptionTokenizer::kUnk);
  CHECK(tok.size() == 5);
  CHECK(tok.word(0) == "<bos>");
  CHECK(tok.word(1) == "<eos>");
  CHECK(tok.word(2) == "<unk>");
  CHECK(tok.word(3) == "<pad>");

  CaptionTokenizer empty = CaptionTokenizer::build({}, 2);
  CHECK(empty.size() == 4);

  CaptionTokenizer ordered = CaptionTokenizer::build({"the hook the Clip", "clip the hook"}, 1);
  CHECK(ordered.word(4) == "the");
  CHECK(ordered.word(5) == "clip");
  CHECK(ordered.word(6) == "hook");
  CHECK(ordered.encode("THE  unknown hook") == std::vector<std::size_t>{4, CaptionTokenizer::kUnk, 6});
}

TEST_CASE("tokenizer: decode/encode round trip and TSV round trip") {
  CaptionTokenizer tok = CaptionTokenizer::build({"we dissect the cystic duct", "we clip the cystic artery"}, 1);
  for (std::size_t a = 4; a < tok.size(); ++a) {
    for (std::size_t b = 4; b < tok.size(); ++b) {
      std::vector<std::size_t> ids{a, b, a};
      CHECK(tok.encode(tok.decode(ids)) == ids);
    }
  }
  auto targets = tok.caption_targets("we clip the duct", 3);
  CHECK(targets.size() == 3);
  CHECK(tok.caption_targets("we", 8) == std::vector<std::size_t>{tok.id_of("we"), CaptionTokenizer::kEos});

  auto dir = scratch_dir("tokenizer");
  tok.write_tsv(dir / "tok.tsv");
  CHECK(CaptionTokenizer::read_tsv(dir / "tok.tsv") == tok);
}

TEST_CASE("caption_loss: nonnegative, validation of targets") {
  auto f = make_decoder(8, 10, 6, 1);
  Rng rng(2);
  Tensor visual = random_tensor(rng, {4, 8});
  Tensor ctx = random_tensor(rng, {2, 8});
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<std::size_t> t;
    for (std::size_t i = 0; i < 1 + rng.index(6); ++i) t.push_back(rng.index(10));
    CHECK(f.decoder.caption_loss(visual, ctx, t).item() >= 0.0);
    CHECK(f.decoder.caption_loss(visual, Tensor(), t).item() >= 0.0);
  }
  CHECK_THROWS_AS(f.decoder.caption_loss(visual, ctx, {}), ValidationError);
  CHECK_THROWS_AS(f.decoder.caption_loss(visual, ctx, {1, 2, 3, 4, 5, 6, 7}), ValidationError);
}

TEST_CASE("caption_loss: causality") {
  auto f = make_decoder(8, 12, 8, 3);
  Rng rng(5);
  Tensor visual = random_tensor(rng, {3, 8});
  std::vector<std::size_t> base{4, 5, 6, 7, 8, 9};
  Tensor ref = f.decoder.position_losses(visual, Tensor(), base);
  for (std::size_t j = 0; j < base.size(); ++j) {
    auto changed = base;
    changed[j] = 11;
    Tensor out = f.decoder.position_losses(visual, Tensor(), changed);
    for (std::size_t i = 0; i < j; ++i) CHECK(out.data()[i] == ref.data()[i]);
    CHECK(out.data()[j] != ref.data()[j]);
  }
}

TEST_CASE("caption_loss: gradient check") {
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    auto f = make_decoder(4, 7, 5, seed);
    Rng rng(seed + 50);
    std::vector<Parameter> inputs = f.store.all();
    inputs.push_back({"visual", random_tensor(rng, {3, 4}, -1, 1, true), false});
    inputs.push_back({"context", random_tensor(rng, {2, 4}, -1, 1, true), false});
    std::vector<std::size_t> targets{4, 6, 5, 1};
    auto report = grad_check(
        [&] { return f.decoder.caption_loss(inputs[inputs.size() - 2].tensor, inputs.back().tensor, targets); }, inputs);
    INFO("worst " << report.worst.input << " " << report.worst.rel_error);
    CHECK(report.max_rel_error < 1e-4);
  }
}

TEST_CASE("caption_loss: a single-token target overfits toward zero") {
  auto f = make_decoder(8, 6, 4, 9);
  Rng rng(1);
  Tensor visual = random_tensor(rng, {2, 8});
  const std::vector<std::size_t> target{5};
  double loss = 0.0;
  for (int step = 0; step < 200; ++step) {
    f.store.zero_grad();
    Tensor l = f.decoder.caption_loss(visual, Tensor(), target);
    loss = l.item();
    l.backward();
    for (auto& p : f.store.all()) {
      auto d = p.tensor.mutable_data();
      auto g = p.tensor.grad();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] -= 0.5 * g[i];
    }
  }
  CHECK(loss < 0.01);
}
