#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "surgtag/data_engine.hpp"
#include "surgtag/image.hpp"
#include "surgtag/model.hpp"
#include "surgtag/nn.hpp"
#include "surgtag/training.hpp"

namespace surgtag::testing {

inline Tensor random_tensor(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0, bool grad = false) {
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = rng.uniform(lo, hi);
  return Tensor::from(std::move(shape), std::move(v), Dtype::f64, grad);
}

inline ImageRaster random_image(Rng& rng, std::size_t h, std::size_t w, std::size_t c) {
  ImageRaster img = ImageRaster::blank(h, w, c);
  for (float& p : img.pixels) p = static_cast<float>(rng.uniform());
  return img;
}

inline bool bitwise_equal(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] != b[i]) return false;
  }
  return true;
}

/// Small model configuration that keeps tests fast.
inline ModelConfig tiny_config(std::size_t dim = 16, std::size_t heads = 2) {
  ModelConfig cfg;
  cfg.encoder.image_height = 8;
  cfg.encoder.image_width = 8;
  cfg.encoder.channels = 1;
  cfg.encoder.patch_size = 4;
  cfg.encoder.dim = dim;
  cfg.encoder.layers = 1;
  cfg.encoder.heads = heads;
  cfg.fusion.heads = heads;
  cfg.fusion.max_frames = 8;
  cfg.tag_decoder.heads = heads;
  cfg.tag_decoder.layers = 2;
  cfg.text_decoder.heads = heads;
  cfg.text_decoder.max_len = 12;
  return cfg;
}

inline TagVocabulary make_vocab(const std::vector<std::string>& names) {
  TagVocabulary v;
  for (const auto& n : names) v.add({n, TagCategory::other, TagSplit::both});
  return v;
}

/// Fresh per-test scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("surgtag_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

/// Tags of the synthetic overfit fixture; tag k lights up image quadrant k.
inline const std::vector<std::string>& overfit_tags() {
  static const std::vector<std::string> tags = {"grasper", "hook", "liver", "clipper"};
  return tags;
}

/// Writes `count` samples (8x8 grayscale PGMs plus dataset.jsonl) to `dir`.
/// Sample i carries the tags of the nonzero 4-bit code 1 + i % 15; every
/// fourth sample has two frames so batches mix the image and video paths.
inline std::filesystem::path write_overfit_fixture(const std::filesystem::path& dir, std::size_t count = 32,
                                                   std::uint64_t seed = 5) {
  Rng rng(seed);
  std::filesystem::create_directories(dir / "frames");
  std::vector<TripletSample> samples;
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t code = 1 + i % 15;
    TripletSample s;
    s.sample_id = "fix-" + std::to_string(i);
    const std::size_t frames = i % 4 == 3 ? 2 : 1;
    for (std::size_t f = 0; f < frames; ++f) {
      ImageRaster img = ImageRaster::blank(8, 8, 1);
      for (std::size_t y = 0; y < 8; ++y) {
        for (std::size_t x = 0; x < 8; ++x) {
          const std::size_t quadrant = (y / 4) * 2 + x / 4;
          const bool lit = (code >> quadrant) & 1U;
          img.at(y, x) = static_cast<float>(lit ? rng.uniform(0.7, 1.0) : rng.uniform(0.0, 0.3));
        }
      }
      const std::string ref = "frames/s" + std::to_string(i) + "_" + std::to_string(f) + ".pgm";
      write_pnm(img, dir / ref);
      s.frame_refs.push_back(ref);
    }
    std::string text = "we see";
    for (std::size_t k = 0; k < 4; ++k) {
      if ((code >> k) & 1U) {
        s.tags.push_back(overfit_tags()[k]);
        text += " the " + overfit_tags()[k];
      }
    }
    s.text = text;
    samples.push_back(std::move(s));
  }
  write_dataset(dir / "dataset.jsonl", samples);
  return dir / "dataset.jsonl";
}

inline TagVocabulary overfit_vocab() { return make_vocab(overfit_tags()); }

/// Tiny model and fast schedule used by the training tests.
inline ModelConfig overfit_model_config() {
  ModelConfig cfg = tiny_config(16, 2);
  cfg.fusion.max_frames = 4;
  cfg.text_decoder.max_len = 8;
  return cfg;
}

/// Schedule that overfits the fixture: 4 steps per epoch at batch 8.
inline TrainConfig overfit_train_config(std::size_t epochs) {
  TrainConfig c;
  c.epochs = epochs;
  c.batch_size = 8;
  c.init_lr = 3e-3;
  c.warmup_lr = 1e-4;
  c.warmup_steps = 10;
  c.min_lr = 1e-5;
  c.lr_decay = 0.99;
  c.weight_decay = 0.0;
  c.caption_weight = 0.5;
  c.seed = 9;
  return c;
}

}  // namespace surgtag::testing
