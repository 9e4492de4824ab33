#pragma once

#include <cstdint>
#include <vector>

#include "json.hpp"
#include "surgtag/model.hpp"

namespace surgtag {

struct BenchTiming {
  double median_ms = 0.0;
  std::vector<double> runs_ms;
  std::uint64_t decoder_calls = 0;  // per inference call
  std::uint64_t fusion_calls = 0;
};

struct BenchResult {
  std::size_t frames = 0;
  std::size_t repeats = 0;
  std::size_t tags = 0;
  BenchTiming video;
  BenchTiming imagewise;
  double speedup = 0.0;  // imagewise median / video median
  /// Decoder invocations are exactly (1, N) for (video, imagewise).
  bool counts_ok = false;

  nlohmann::ordered_json to_json() const;
};

/// Times video inference (all frames fused, one decode) against per-frame
/// imagewise inference over the same frames. One untimed warm-up call per
/// mode, then `repeats` alternating timed calls.
BenchResult run_bench(const Model& model, const std::vector<ImageRaster>& frames, std::size_t repeats);

}  // namespace surgtag
