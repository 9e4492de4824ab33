#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "surgtag/model.hpp"

namespace surgtag {

/// Model hyperparameters as JSON. Missing keys keep their defaults; unknown
/// keys are a ConfigError so typos do not pass silently.
nlohmann::ordered_json model_config_to_json(const ModelConfig& config);
ModelConfig model_config_from_json(const nlohmann::json& j, const ModelConfig& defaults = {});

/// First and second AdamW moments per trainable parameter.
struct OptimizerState {
  std::uint64_t step = 0;
  std::map<std::string, std::vector<double>> m;
  std::map<std::string, std::vector<double>> v;

  bool operator==(const OptimizerState&) const = default;
};

/// Everything needed to continue or reuse a training run.
///
/// On disk a checkpoint is a directory:
///   config.json     model config, train config snapshot, counters
///   manifest.json   parameter name -> byte offset, shape, frozen flag
///   weights.bin     parameters as little-endian f32, manifest order
///   optimizer.bin   AdamW moments as little-endian f64
///   rng.json        shuffle generator state
///   vocab.tsv       tag vocabulary (row k = embedding row k)
///   tokenizer.tsv   caption tokenizer (absent without a caption head)
struct Checkpoint {
  ModelConfig model_config;
  nlohmann::ordered_json train_config = nlohmann::ordered_json::object();
  TagVocabulary vocab;
  ParameterStore params;
  std::optional<CaptionTokenizer> tokenizer;
  OptimizerState optimizer;
  std::string rng_state;
  std::uint64_t epoch = 0;
  std::uint64_t step = 0;
};

/// Writes every file of the checkpoint directory (created if needed). The
/// output is a pure function of the checkpoint, so save -> load -> save is
/// byte-identical.
void save_checkpoint(const std::filesystem::path& dir, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& dir);

/// Model over the checkpoint's parameters (shares the tensors).
Model model_from_checkpoint(const Checkpoint& checkpoint);

/// Rounds every parameter value to the nearest binary32 so the f32 weight
/// blob stores it exactly.
void round_parameters_to_f32(ParameterStore& params);

}  // namespace surgtag
