#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "surgtag/checkpoint.hpp"
#include "surgtag/data_engine.hpp"
#include "surgtag/model.hpp"

namespace surgtag {

enum class Stage { pretrain, finetune };
enum class TagLossKind { bce, asl };

std::string to_string(Stage stage);
Stage stage_from_string(std::string_view text);

struct TrainConfig {
  Stage stage = Stage::pretrain;
  std::size_t epochs = 10;
  std::size_t batch_size = 26;
  double weight_decay = 0.05;
  double init_lr = 1e-4;
  double min_lr = 5e-7;
  double lr_decay = 0.9;
  double warmup_lr = 5e-7;
  std::size_t warmup_steps = 3000;
  double caption_weight = 1.0;
  TagLossKind tag_loss = TagLossKind::bce;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t tokenizer_min_freq = 1;
  std::uint64_t seed = 42;

  /// Stage defaults: pretrain 10 epochs at 1e-4 (floor 5e-7), finetune 4
  /// epochs at 5e-6 (floor 0).
  static TrainConfig defaults(Stage stage);
  void validate() const;

  nlohmann::ordered_json to_json() const;
  /// Keys override `base`; unknown keys are a ConfigError.
  static TrainConfig from_json(const nlohmann::json& j, const TrainConfig& base);
};

/// Linear warmup from warmup_lr to init_lr over warmup_steps global steps,
/// then init_lr * lr_decay^epoch floored at min_lr.
double lr_at(std::size_t step, std::size_t epoch, const TrainConfig& config);

/// One AdamW update of every trainable parameter that holds a gradient:
/// decoupled decay p -= lr*wd*p, then the bias-corrected Adam step. Frozen
/// parameters are never touched. A non-finite gradient aborts the whole step
/// (no parameter changes) with a NumericError naming the parameter.
void adamw_step(ParameterStore& params, OptimizerState& state, double lr, const TrainConfig& config);

/// A dataset sample resolved against the model: frames loaded, tags turned
/// into multi-hot targets, caption tokenized.
struct TrainingExample {
  std::string sample_id;
  std::vector<ImageRaster> frames;
  std::vector<double> targets;       // [K] multi-hot over the model vocabulary
  std::vector<std::size_t> caption;  // teacher-forcing targets; empty without a caption head
};

struct StepLosses {
  double tag = 0.0;
  double caption = 0.0;
  double total = 0.0;
  std::size_t samples = 0;
};

/// Mean over the batch of tag_loss + lambda * caption_loss as a differentiable
/// scalar. A sample with one frame takes the image path; more frames are
/// encoded and fused (at most fusion.max_frames, regularly sampled).
Tensor batch_loss(const Model& model, const std::vector<const TrainingExample*>& batch, const TrainConfig& config,
                  StepLosses* losses = nullptr);

/// batch_loss, backward, one AdamW step at `lr`. Parameters are rounded to
/// binary32 afterwards so checkpoints store them exactly.
StepLosses train_step(Model& model, const std::vector<const TrainingExample*>& batch, const TrainConfig& config,
                      OptimizerState& optimizer, double lr);

/// Where frame refs of a dataset are resolved and how samples become examples.
/// Tags outside the model vocabulary are ignored.
std::optional<TrainingExample> make_example(const TripletSample& sample, const Model& model,
                                            const CaptionTokenizer* tokenizer, const std::filesystem::path& frames_root,
                                            std::string* error);

struct StageOptions {
  std::filesystem::path dataset;
  std::filesystem::path frames_root;  // empty: the dataset's directory
  std::filesystem::path out_dir;
  ModelConfig model_config;           // used only without init/resume
  TagVocabulary vocab;                // tags to train on, merged into an init checkpoint's vocabulary
  std::optional<std::filesystem::path> init;    // weights only (stage 2 starts from stage 1)
  std::optional<std::filesystem::path> resume;  // weights, optimizer, rng and counters
  std::optional<TagEmbeddingTable> embeddings;  // default: hashed, model dim
  std::function<void(const std::string&)> log;
};

struct StageResult {
  std::filesystem::path checkpoint;  // out_dir/final
  std::vector<StepLosses> steps;     // steps run by this call
  std::size_t skipped_samples = 0;
};

/// Trains for config.epochs epochs over seeded shuffles of the dataset. After
/// every epoch the checkpoint is written to out_dir/epoch-NNNN and mirrored to
/// out_dir/final; metrics go to out_dir/metrics.jsonl, one line per step.
/// Resuming from an epoch-k checkpoint replays the remaining epochs exactly.
StageResult run_stage(const StageOptions& options, const TrainConfig& config);

}  // namespace surgtag
