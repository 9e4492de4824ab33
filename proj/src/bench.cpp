#include "surgtag/bench.hpp"

#include <algorithm>
#include <chrono>

#include "surgtag/errors.hpp"

namespace surgtag {

namespace {

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : (v[n / 2 - 1] + v[n / 2]) / 2.0;
}

template <typename F>
double time_ms(F&& f) {
  const auto start = std::chrono::steady_clock::now();
  f();
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
}

nlohmann::ordered_json timing_json(const BenchTiming& t) {
  nlohmann::ordered_json j;
  j["median_ms"] = t.median_ms;
  j["runs_ms"] = t.runs_ms;
  j["decoder_calls"] = t.decoder_calls;
  j["fusion_calls"] = t.fusion_calls;
  return j;
}

}  // namespace

nlohmann::ordered_json BenchResult::to_json() const {
  nlohmann::ordered_json j;
  j["frames"] = frames;
  j["repeats"] = repeats;
  j["tags"] = tags;
  j["video"] = timing_json(video);
  j["imagewise"] = timing_json(imagewise);
  j["speedup"] = speedup;
  j["counts_ok"] = counts_ok;
  return j;
}

BenchResult run_bench(const Model& model, const std::vector<ImageRaster>& frames, std::size_t repeats) {
  if (frames.empty()) throw ValidationError("bench needs at least one frame");
  if (repeats == 0) throw ValidationError("bench needs at least one repeat");
  if (frames.size() > model.config().fusion.max_frames) {
    throw ConfigError("bench: " + std::to_string(frames.size()) + " frames exceed fusion max_frames " +
                      std::to_string(model.config().fusion.max_frames));
  }
  BenchResult r;
  r.frames = frames.size();
  r.repeats = repeats;
  r.tags = model.vocabulary().size();

  auto video = [&] { infer_video(model, frames, 0.5, frames.size()); };
  auto imagewise = [&] { infer_video_imagewise(model, frames); };
  auto count = [&](auto&& f, BenchTiming& t) {
    model.reset_counters();
    f();
    t.decoder_calls = model.decode_calls();
    t.fusion_calls = model.fuse_calls();
  };
  count(video, r.video);
  count(imagewise, r.imagewise);
  for (std::size_t i = 0; i < repeats; ++i) {
    r.video.runs_ms.push_back(time_ms(video));
    r.imagewise.runs_ms.push_back(time_ms(imagewise));
  }
  r.video.median_ms = median(r.video.runs_ms);
  r.imagewise.median_ms = median(r.imagewise.runs_ms);
  r.speedup = r.video.median_ms > 0.0 ? r.imagewise.median_ms / r.video.median_ms : 0.0;
  r.counts_ok = r.video.decoder_calls == 1 && r.imagewise.decoder_calls == frames.size();
  return r;
}

}  // namespace surgtag
