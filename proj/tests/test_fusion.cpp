#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "surgtag/errors.hpp"
#include "surgtag/fusion.hpp"
#include "surgtag/grad_check.hpp"
#include "test_support.hpp"

using namespace surgtag;
using namespace surgtag::testing;

namespace {

struct Fixture {
  ParameterStore store;
  TemporalFusion fusion;
};

Fixture make_fusion(FusionConfig cfg, std::size_t dim, std::uint64_t seed = 3) {
  Fixture f;
  Rng rng(seed);
  TemporalFusion::declare(f.store, cfg, dim, rng);
  f.fusion = TemporalFusion::bind(f.store, cfg, dim);
  return f;
}

FusionConfig attention_cfg(bool positional, std::size_t heads = 2) {
  FusionConfig cfg;
  cfg.heads = heads;
  cfg.use_positional = positional;
  return cfg;
}

Tensor permute_frames(const Tensor& x, const std::vector<std::size_t>& order) {
  std::vector<Tensor> frames;
  for (std::size_t i : order) frames.push_back(select(x, i));
  return stack(frames);
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  return m;
}

}  // namespace

TEST_CASE("fuse: shape law for N in {1,2,5,8} in both modes") {
  for (FusionMode mode : {FusionMode::attention, FusionMode::average}) {
    FusionConfig cfg = attention_cfg(true);
    cfg.mode = mode;
    auto f = make_fusion(cfg, 8);
    Rng rng(1);
    for (std::size_t n : {1u, 2u, 5u, 8u}) CHECK(f.fusion.fuse(random_tensor(rng, {n, 3, 8})).shape() == Shape{3, 8});
  }
}

TEST_CASE("fuse: average mode is the exact arithmetic mean and linear") {
  FusionConfig cfg;
  cfg.mode = FusionMode::average;
  auto f = make_fusion(cfg, 6);
  CHECK(f.store.size() == 0);
  Rng rng(11);
  for (std::size_t n : {1u, 3u, 8u}) {
    Tensor x = random_tensor(rng, {n, 4, 6});
    Tensor out = f.fusion.fuse(x);
    for (std::size_t j = 0; j < 24; ++j) {
      double s = 0.0;
      for (std::size_t i = 0; i < n; ++i) s += x.data()[i * 24 + j];
      CHECK(out.data()[j] == s / static_cast<double>(n));
    }
  }
  Tensor x = random_tensor(rng, {5, 4, 6});
  Tensor y = random_tensor(rng, {5, 4, 6});
  const double a = 0.7, b = -1.3;
  Tensor lhs = f.fusion.fuse(add(scale(x, a), scale(y, b)));
  Tensor rhs = add(scale(f.fusion.fuse(x), a), scale(f.fusion.fuse(y), b));
  CHECK(max_abs_diff(lhs, rhs) < 1e-12);
}

TEST_CASE("fuse: N=1 without positions is layer_norm(x + Wo Wv x)") {
  auto f = make_fusion(attention_cfg(false), 8);
  Rng rng(4);
  Tensor x = random_tensor(rng, {1, 3, 8});
  Tensor xt = select(x, 0);
  const auto& p = f.store;
  Tensor expected = layer_norm(add(xt, matmul(matmul(xt, p.get("fusion.attn.wv").tensor), p.get("fusion.attn.wo").tensor)),
                               p.get("fusion.norm.gamma").tensor, p.get("fusion.norm.beta").tensor);
  CHECK(max_abs_diff(f.fusion.fuse(x), expected) < 1e-12);

  for (std::size_t n : {2u, 4u, 8u}) {
    std::vector<Tensor> copies(n, xt);
    CHECK(max_abs_diff(f.fusion.fuse(stack(copies)), expected) < 1e-12);
  }
}

TEST_CASE("fuse: permutation invariance holds iff positional embeddings are disabled") {
  Rng rng(8);
  std::vector<std::size_t> order = {3, 0, 4, 1, 2};
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    auto off = make_fusion(attention_cfg(false), 8, seed);
    Tensor x = random_tensor(rng, {5, 3, 8});
    CHECK(max_abs_diff(off.fusion.fuse(x), off.fusion.fuse(permute_frames(x, order))) < 1e-9);
  }
  auto on = make_fusion(attention_cfg(true), 8, 1);
  Tensor x = random_tensor(rng, {5, 3, 8});
  CHECK(max_abs_diff(on.fusion.fuse(x), on.fusion.fuse(permute_frames(x, order))) > 1e-6);
}

TEST_CASE("fuse: frame-count limits") {
  FusionConfig cfg = attention_cfg(true);
  cfg.max_frames = 4;
  auto f = make_fusion(cfg, 8);
  Rng rng(1);
  CHECK_THROWS_AS(f.fusion.fuse(random_tensor(rng, {5, 2, 8})), ConfigError);
  CHECK_THROWS_AS(f.fusion.fuse(random_tensor(rng, {2, 8})), DimensionError);
  FusionConfig bad = attention_cfg(true, 3);
  ParameterStore s;
  CHECK_THROWS_AS(TemporalFusion::declare(s, bad, 8, rng), ConfigError);
}

TEST_CASE("describe_fusion_params: manifest contents") {
  FusionConfig avg;
  avg.mode = FusionMode::average;
  CHECK(describe_fusion_params(avg, 64).empty());

  FusionConfig cfg;  // attention, max_frames 8, positional
  auto specs = describe_fusion_params(cfg, 64);
  auto pos = std::find_if(specs.begin(), specs.end(), [](const ParamSpec& s) { return s.name == "fusion.position"; });
  REQUIRE(pos != specs.end());
  CHECK(pos->shape == Shape{8, 64});

  ParameterStore store;
  Rng rng(1);
  TemporalFusion::declare(store, cfg, 64, rng);
  REQUIRE(store.size() == specs.size());
  for (std::size_t i = 0; i < specs.size(); ++i) {
    CHECK(store.all()[i].name == specs[i].name);
    CHECK(store.all()[i].tensor.shape() == specs[i].shape);
  }
  CHECK(fusion_mode_from_string(to_string(FusionMode::average)) == FusionMode::average);
  CHECK_THROWS_AS(fusion_mode_from_string("max"), ConfigError);
}

TEST_CASE("fuse: gradient check through the fusion layer") {
  for (bool positional : {true, false}) {
    for (std::uint64_t seed = 1; seed <= 4; ++seed) {
      auto f = make_fusion(attention_cfg(positional), 4, seed);
      Rng rng(seed + 100);
      std::vector<Parameter> inputs = f.store.all();
      inputs.push_back({"x", random_tensor(rng, {3, 2, 4}, -1, 1, true), false});
      Tensor w = random_tensor(rng, {2, 4});
      auto report = grad_check([&] { return sum(mul(f.fusion.fuse(inputs.back().tensor), w)); }, inputs);
      INFO("worst " << report.worst.input);
      CHECK(report.max_rel_error < 1e-4);
    }
  }
}
