#include <cstring>
#include <fstream>

#include "doctest.h"
#include "surgtag/encoder.hpp"
#include "surgtag/errors.hpp"
#include "surgtag/image.hpp"
#include "test_support.hpp"

using namespace surgtag;
using namespace surgtag::testing;

namespace {

// Inverse of patchify, written independently of it.
ImageRaster reconstruct(const Tensor& patches, std::size_t h, std::size_t w, std::size_t c, std::size_t p) {
  ImageRaster img = ImageRaster::blank(h, w, c);
  const std::size_t cols = w / p;
  auto d = patches.data();
  for (std::size_t t = 0; t < patches.dim(0); ++t) {
    const std::size_t y0 = (t / cols) * p;
    const std::size_t x0 = (t % cols) * p;
    std::size_t k = 0;
    for (std::size_t y = 0; y < p; ++y) {
      for (std::size_t x = 0; x < p; ++x) {
        for (std::size_t ch = 0; ch < c; ++ch) img.at(y0 + y, x0 + x, ch) = static_cast<float>(d[t * patches.dim(1) + k++]);
      }
    }
  }
  return img;
}

EncoderConfig small_encoder(std::size_t h = 8, std::size_t w = 8, std::size_t c = 1) {
  EncoderConfig cfg;
  cfg.image_height = h;
  cfg.image_width = w;
  cfg.channels = c;
  cfg.patch_size = 4;
  cfg.dim = 16;
  cfg.layers = 2;
  cfg.heads = 2;
  return cfg;
}

}  // namespace

TEST_CASE("patchify: whole-image patch, raster order, exact inverse") {
  Rng rng(1);
  EncoderConfig cfg = small_encoder(4, 4, 1);
  ImageRaster img = random_image(rng, 4, 4, 1);
  Tensor one = patchify(img, cfg);
  CHECK(one.shape() == Shape{1, 16});
  for (std::size_t i = 0; i < 16; ++i) CHECK(one.data()[i] == static_cast<double>(img.pixels[i]));

  ImageRaster eight = ImageRaster::blank(8, 8, 1);
  for (std::size_t y = 0; y < 8; ++y) {
    for (std::size_t x = 0; x < 8; ++x) eight.at(y, x) = static_cast<float>((y / 4) * 2 + (x / 4)) / 4.0f;
  }
  Tensor four = patchify(eight, small_encoder());
  REQUIRE(four.shape() == Shape{4, 16});
  for (std::size_t t = 0; t < 4; ++t) CHECK(four.at({t, 0}) == static_cast<double>(t) / 4.0);

  for (std::size_t c : {1u, 3u}) {
    ImageRaster x = random_image(rng, 8, 12, c);
    Tensor p = patchify(x, small_encoder(8, 12, c));
    ImageRaster back = reconstruct(p, 8, 12, c, 4);
    CHECK(std::memcmp(back.pixels.data(), x.pixels.data(), x.pixels.size() * sizeof(float)) == 0);
  }
}

TEST_CASE("patchify: indivisible dims name the required multiple") {
  ImageRaster img = ImageRaster::blank(6, 8, 1);
  try {
    patchify(img, small_encoder());
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("multiple of 4") != std::string::npos);
  }
}

TEST_CASE("image: validation rejects out-of-range pixels") {
  ImageRaster img = ImageRaster::blank(4, 4, 1);
  img.pixels[3] = 1.5f;
  CHECK_THROWS_AS(img.validate(), ValidationError);
  img.pixels[3] = std::nanf("");
  CHECK_THROWS_AS(img.validate(), ValidationError);
  ImageRaster two = ImageRaster::blank(4, 4, 1);
  two.channels = 2;
  two.pixels.resize(32);
  CHECK_THROWS_AS(two.validate(), ValidationError);
}

TEST_CASE("image: PGM/PPM and raw tensor round trips") {
  auto dir = scratch_dir("image_io");
  for (std::size_t c : {1u, 3u}) {
    ImageRaster img = ImageRaster::blank(4, 6, c);
    for (std::size_t i = 0; i < img.pixels.size(); ++i) img.pixels[i] = static_cast<float>(i % 256) / 255.0f;
    auto pnm = dir / (c == 1 ? "a.pgm" : "a.ppm");
    write_pnm(img, pnm);
    ImageRaster back = read_image(pnm);
    CHECK(back.height == 4);
    CHECK(back.width == 6);
    CHECK(back.channels == c);
    CHECK(back.pixels == img.pixels);

    auto rt = dir / "a.rt";
    Shape shape = c == 1 ? Shape{4, 6} : Shape{4, 6, 3};
    write_raw_tensor(rt, shape, img.pixels);
    ImageRaster raw = read_image(rt);
    CHECK(raw.channels == c);
    CHECK(raw.pixels == img.pixels);
  }
  CHECK_THROWS_AS(read_image(dir / "missing.pgm"), IoError);
  {
    std::ofstream bad(dir / "bad.pgm");
    bad << "P2\n2 2\n255\n0 0 0 0\n";
  }
  CHECK_THROWS_AS(read_image(dir / "bad.pgm"), FormatError);
}

TEST_CASE("encode_image: shape law, determinism, non-degeneracy") {
  for (auto [h, w] : {std::pair<std::size_t, std::size_t>{8, 8}, {8, 16}, {12, 4}}) {
    EncoderConfig cfg = small_encoder(h, w, 1);
    ParameterStore store;
    Rng rng(5);
    ImageEncoder::declare(store, cfg, rng);
    ImageEncoder enc = ImageEncoder::bind(store, cfg);
    Rng data(9);
    ImageRaster img = random_image(data, h, w, 1);
    Tensor a = enc.encode_image(img);
    CHECK(a.shape() == Shape{(h / 4) * (w / 4), 16});
    CHECK(bitwise_equal(a.data(), enc.encode_image(img).data()));
  }

  EncoderConfig cfg = small_encoder();
  ParameterStore s1, s2;
  Rng r1(77), r2(77);
  ImageEncoder::declare(s1, cfg, r1);
  ImageEncoder::declare(s2, cfg, r2);
  ImageRaster zero = ImageRaster::blank(8, 8, 1);
  ImageRaster poked = zero;
  poked.at(5, 2) = 1.0f;
  Tensor a = ImageEncoder::bind(s1, cfg).encode_image(zero);
  Tensor b = ImageEncoder::bind(s2, cfg).encode_image(zero);
  CHECK(bitwise_equal(a.data(), b.data()));
  Tensor c = ImageEncoder::bind(s1, cfg).encode_image(poked);
  CHECK_FALSE(bitwise_equal(a.data(), c.data()));
}

TEST_CASE("encode_frames: stacking, permutation, heterogeneous frames") {
  EncoderConfig cfg = small_encoder();
  ParameterStore store;
  Rng rng(2);
  ImageEncoder::declare(store, cfg, rng);
  ImageEncoder enc = ImageEncoder::bind(store, cfg);
  std::vector<ImageRaster> frames;
  for (int i = 0; i < 3; ++i) frames.push_back(random_image(rng, 8, 8, 1));

  Tensor single = enc.encode_frames({frames[0]});
  CHECK(single.shape() == Shape{1, 4, 16});
  CHECK(bitwise_equal(select(single, 0).data(), enc.encode_image(frames[0]).data()));

  Tensor all = enc.encode_frames(frames);
  Tensor rev = enc.encode_frames({frames[2], frames[1], frames[0]});
  for (std::size_t i = 0; i < 3; ++i) CHECK(bitwise_equal(select(all, i).data(), select(rev, 2 - i).data()));

  CHECK_THROWS_AS(enc.encode_frames({}), ValidationError);
  CHECK_THROWS_AS(enc.encode_frames({frames[0], ImageRaster::blank(8, 12, 1)}), ValidationError);
}

TEST_CASE("encode_frames: default desk-scale shape") {
  EncoderConfig cfg;  // 32x32x3, patch 8, D=64
  ParameterStore store;
  Rng rng(4);
  ImageEncoder::declare(store, cfg, rng);
  std::vector<ImageRaster> frames;
  for (int i = 0; i < 8; ++i) frames.push_back(random_image(rng, 32, 32, 3));
  NoGradGuard guard;
  CHECK(ImageEncoder::bind(store, cfg).encode_frames(frames, Dtype::f32).shape() == Shape{8, 16, 64});
}

TEST_CASE("encoder: one shared parameter set, no per-frame parameters") {
  ParameterStore store;
  Rng rng(1);
  ImageEncoder::declare(store, small_encoder(), rng);
  for (const auto& p : store.all()) {
    CHECK(p.name.rfind("encoder.", 0) == 0);
    CHECK(p.name.find("frame") == std::string::npos);
  }
  CHECK(store.contains("encoder.position"));
  CHECK(store.get("encoder.position").tensor.shape() == Shape{4, 16});
}

TEST_CASE("encoder: non-finite activations are reported with the layer index") {
  EncoderConfig cfg = small_encoder();
  ParameterStore store;
  Rng rng(1);
  ImageEncoder::declare(store, cfg, rng);
  auto w = store.get("encoder.block1.mlp.fc1.weight").tensor.mutable_data();
  w[0] = std::numeric_limits<double>::infinity();
  ImageRaster img = random_image(rng, 8, 8, 1);
  try {
    ImageEncoder::bind(store, cfg).encode_image(img);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("layer 1") != std::string::npos);
  }
}
