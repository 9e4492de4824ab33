#include "surgtag/training.hpp"

#include <cmath>
#include <fstream>
#include <map>
#include <set>

#include "surgtag/errors.hpp"

namespace surgtag {

namespace {

std::string epoch_dir_name(std::size_t epoch) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "epoch-%04zu", epoch);
  return buf;
}

double read_number(const nlohmann::json& v, const std::string& key) {
  if (!v.is_number()) throw ConfigError("train config key '" + key + "' must be a number");
  return v.get<double>();
}

std::size_t read_count(const nlohmann::json& v, const std::string& key) {
  if (!v.is_number_unsigned()) throw ConfigError("train config key '" + key + "' must be a non-negative integer");
  return v.get<std::size_t>();
}

}  // namespace

std::string to_string(Stage stage) { return stage == Stage::pretrain ? "pretrain" : "finetune"; }

Stage stage_from_string(std::string_view text) {
  if (text == "pretrain") return Stage::pretrain;
  if (text == "finetune") return Stage::finetune;
  throw ConfigError("unknown stage '" + std::string(text) + "' (expected pretrain|finetune)");
}

TrainConfig TrainConfig::defaults(Stage stage) {
  TrainConfig c;
  c.stage = stage;
  if (stage == Stage::finetune) {
    c.epochs = 4;
    c.init_lr = 5e-6;
    c.min_lr = 0.0;
  }
  return c;
}

void TrainConfig::validate() const {
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (!(init_lr > 0.0) || !(warmup_lr > 0.0)) throw ConfigError("init_lr and warmup_lr must be positive");
  if (min_lr < 0.0 || min_lr > init_lr) throw ConfigError("min_lr must lie in [0, init_lr]");
  if (!(lr_decay > 0.0) || lr_decay > 1.0) throw ConfigError("lr_decay must lie in (0, 1]");
  if (weight_decay < 0.0 || caption_weight < 0.0) throw ConfigError("weight_decay and caption_weight must be >= 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0) || !(eps > 0.0)) {
    throw ConfigError("AdamW betas must lie in [0, 1) and eps must be positive");
  }
  if (tokenizer_min_freq == 0) throw ConfigError("tokenizer_min_freq must be positive");
}

nlohmann::ordered_json TrainConfig::to_json() const {
  nlohmann::ordered_json j;
  j["stage"] = to_string(stage);
  j["epochs"] = epochs;
  j["batch_size"] = batch_size;
  j["weight_decay"] = weight_decay;
  j["init_lr"] = init_lr;
  j["min_lr"] = min_lr;
  j["lr_decay"] = lr_decay;
  j["warmup_lr"] = warmup_lr;
  j["warmup_steps"] = warmup_steps;
  j["caption_weight"] = caption_weight;
  j["tag_loss"] = tag_loss == TagLossKind::bce ? "bce" : "asl";
  j["beta1"] = beta1;
  j["beta2"] = beta2;
  j["eps"] = eps;
  j["tokenizer_min_freq"] = tokenizer_min_freq;
  j["seed"] = seed;
  return j;
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j, const TrainConfig& base) {
  if (!j.is_object()) throw ConfigError("train config must be a JSON object");
  TrainConfig c = base;
  for (const auto& [key, v] : j.items()) {
    if (key == "stage") {
      if (!v.is_string()) throw ConfigError("train config key 'stage' must be a string");
      c.stage = stage_from_string(v.get<std::string>());
    } else if (key == "tag_loss") {
      const std::string s = v.is_string() ? v.get<std::string>() : "";
      if (s != "bce" && s != "asl") throw ConfigError("train config key 'tag_loss' must be \"bce\" or \"asl\"");
      c.tag_loss = s == "bce" ? TagLossKind::bce : TagLossKind::asl;
    } else if (key == "epochs") {
      c.epochs = read_count(v, key);
    } else if (key == "batch_size") {
      c.batch_size = read_count(v, key);
    } else if (key == "warmup_steps") {
      c.warmup_steps = read_count(v, key);
    } else if (key == "tokenizer_min_freq") {
      c.tokenizer_min_freq = read_count(v, key);
    } else if (key == "seed") {
      if (!v.is_number_unsigned()) throw ConfigError("train config key 'seed' must be a non-negative integer");
      c.seed = v.get<std::uint64_t>();
    } else if (key == "weight_decay") {
      c.weight_decay = read_number(v, key);
    } else if (key == "init_lr") {
      c.init_lr = read_number(v, key);
    } else if (key == "min_lr") {
      c.min_lr = read_number(v, key);
    } else if (key == "lr_decay") {
      c.lr_decay = read_number(v, key);
    } else if (key == "warmup_lr") {
      c.warmup_lr = read_number(v, key);
    } else if (key == "caption_weight") {
      c.caption_weight = read_number(v, key);
    } else if (key == "beta1") {
      c.beta1 = read_number(v, key);
    } else if (key == "beta2") {
      c.beta2 = read_number(v, key);
    } else if (key == "eps") {
      c.eps = read_number(v, key);
    } else {
      throw ConfigError("unknown train config key '" + key + "'");
    }
  }
  c.validate();
  return c;
}

double lr_at(std::size_t step, std::size_t epoch, const TrainConfig& c) {
  if (step < c.warmup_steps) {
    return c.warmup_lr + (c.init_lr - c.warmup_lr) * static_cast<double>(step) / static_cast<double>(c.warmup_steps);
  }
  return std::max(c.min_lr, c.init_lr * std::pow(c.lr_decay, static_cast<double>(epoch)));
}

void adamw_step(ParameterStore& params, OptimizerState& state, double lr, const TrainConfig& c) {
  for (const auto& p : params.all()) {
    if (p.frozen || !p.tensor.has_grad()) continue;
    for (double g : p.tensor.grad()) {
      if (!std::isfinite(g)) throw NumericError("non-finite gradient in parameter " + p.name + "; step aborted");
    }
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bias1 = 1.0 - std::pow(c.beta1, t);
  const double bias2 = 1.0 - std::pow(c.beta2, t);
  for (auto& p : params.all()) {
    if (p.frozen || !p.tensor.has_grad()) continue;
    auto values = p.tensor.mutable_data();
    auto grad = p.tensor.grad();
    auto& m = state.m[p.name];
    auto& v = state.v[p.name];
    if (m.size() != values.size()) {
      m.assign(values.size(), 0.0);
      v.assign(values.size(), 0.0);
    }
    for (std::size_t i = 0; i < values.size(); ++i) {
      values[i] -= lr * c.weight_decay * values[i];
      m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * grad[i];
      v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * grad[i] * grad[i];
      values[i] -= lr * (m[i] / bias1) / (std::sqrt(v[i] / bias2) + c.eps);
    }
  }
}

Tensor batch_loss(const Model& model, const std::vector<const TrainingExample*>& batch, const TrainConfig& config,
                  StepLosses* losses) {
  if (batch.empty()) throw ValidationError("training batch is empty");
  const bool with_caption = config.caption_weight > 0.0 && model.has_text_decoder();
  const std::size_t k = model.vocabulary().size();
  Tensor total;
  double tag_sum = 0.0;
  double caption_sum = 0.0;
  for (const TrainingExample* ex : batch) {
    if (ex->targets.size() != k) throw ValidationError("sample " + ex->sample_id + ": target size does not match vocabulary");
    Tensor visual;
    if (ex->frames.size() == 1) {
      visual = model.encode_image(ex->frames.front());
    } else {
      std::vector<ImageRaster> picked;
      for (std::size_t i : sample_frame_indices(ex->frames.size(), model.config().fusion.max_frames)) {
        picked.push_back(ex->frames[i]);
      }
      visual = model.fuse(model.encode_frames(picked));
    }
    Tensor logits = model.tag_logits(visual);
    Tensor targets = Tensor::from({k}, ex->targets);
    Tensor loss = config.tag_loss == TagLossKind::bce ? bce_with_logits(logits, targets) : asl_with_logits(logits, targets);
    tag_sum += loss.item();
    if (with_caption) {
      std::vector<std::size_t> positives;
      for (std::size_t i = 0; i < k; ++i) {
        if (ex->targets[i] == 1.0) positives.push_back(i);
      }
      Tensor context = positives.empty() ? Tensor() : gather_rows(model.tag_embeddings(), positives);
      Tensor caption = model.text_decoder().caption_loss(visual, context, ex->caption);
      caption_sum += caption.item();
      loss = add(loss, scale(caption, config.caption_weight));
    }
    total = total.defined() ? add(total, loss) : loss;
  }
  const double n = static_cast<double>(batch.size());
  total = scale(total, 1.0 / n);
  if (losses) {
    losses->tag = tag_sum / n;
    losses->caption = caption_sum / n;
    losses->total = total.item();
    losses->samples = batch.size();
  }
  return total;
}

StepLosses train_step(Model& model, const std::vector<const TrainingExample*>& batch, const TrainConfig& config,
                      OptimizerState& optimizer, double lr) {
  StepLosses losses;
  model.parameters().zero_grad();
  Tensor loss = batch_loss(model, batch, config, &losses);
  if (!std::isfinite(losses.total)) throw NumericError("non-finite training loss");
  loss.backward();
  adamw_step(model.parameters(), optimizer, lr, config);
  model.parameters().zero_grad();
  round_parameters_to_f32(model.parameters());
  return losses;
}

std::optional<TrainingExample> make_example(const TripletSample& sample, const Model& model,
                                            const CaptionTokenizer* tokenizer, const std::filesystem::path& frames_root,
                                            std::string* error) {
  TrainingExample ex;
  ex.sample_id = sample.sample_id;
  const auto& enc = model.config().encoder;
  try {
    if (sample.frame_refs.empty()) throw ValidationError("no frame refs");
    for (const auto& ref : sample.frame_refs) {
      ImageRaster img = read_image(frames_root / ref);
      if (img.height != enc.image_height || img.width != enc.image_width || img.channels != enc.channels) {
        throw ValidationError(ref + ": frame is " + std::to_string(img.height) + "x" + std::to_string(img.width) + "x" +
                              std::to_string(img.channels) + ", model expects " + std::to_string(enc.image_height) +
                              "x" + std::to_string(enc.image_width) + "x" + std::to_string(enc.channels));
      }
      ex.frames.push_back(std::move(img));
    }
  } catch (const Error& e) {
    if (error) *error = "sample " + sample.sample_id + " skipped: " + e.what();
    return std::nullopt;
  }
  const auto& vocab = model.vocabulary();
  ex.targets.assign(vocab.size(), 0.0);
  for (const auto& tag : sample.tags) {
    if (auto idx = vocab.find(tag)) ex.targets[*idx] = 1.0;
  }
  if (tokenizer) ex.caption = tokenizer->caption_targets(sample.text, model.config().text_decoder.max_len);
  return ex;
}

StageResult run_stage(const StageOptions& opt, const TrainConfig& config) {
  config.validate();
  auto log = [&](const std::string& msg) {
    if (opt.log) opt.log(msg);
  };
  const auto samples = read_dataset(opt.dataset);
  const std::filesystem::path frames_root =
      opt.frames_root.empty() ? opt.dataset.parent_path() : opt.frames_root;

  Checkpoint ck;
  std::optional<Model> model;
  OptimizerState optimizer;
  Rng rng(config.seed);
  std::size_t start_epoch = 0;
  std::size_t step = 0;

  if (opt.resume) {
    ck = load_checkpoint(*opt.resume);
    model.emplace(model_from_checkpoint(ck));
    optimizer = ck.optimizer;
    rng.set_state(ck.rng_state);
    start_epoch = ck.epoch;
    step = ck.step;
    if (ck.train_config.contains("stage") && ck.train_config["stage"] != to_string(config.stage)) {
      throw ConfigError("cannot resume a " + ck.train_config["stage"].get<std::string>() + " checkpoint as " +
                        to_string(config.stage));
    }
  } else {
    if (opt.init) {
      ck = load_checkpoint(*opt.init);
      model.emplace(model_from_checkpoint(ck));
    } else {
      ck.model_config = opt.model_config;
      std::vector<std::string> texts;
      for (const auto& s : samples) texts.push_back(s.text);
      ck.tokenizer = CaptionTokenizer::build(texts, config.tokenizer_min_freq);
      const TagEmbeddingTable hashed(ck.model_config.dim());
      TagVocabulary empty;
      model.emplace(ck.model_config, empty, opt.embeddings ? *opt.embeddings : hashed, ck.tokenizer->size(),
                    config.seed);
    }
    // Pretraining sees pretrain and shared tags; fine-tuning sees the union.
    std::vector<TagEntry> added;
    for (const auto& e : opt.vocab.entries()) {
      if (config.stage == Stage::pretrain && e.split == TagSplit::finetune) continue;
      if (!model->vocabulary().contains(e.name)) added.push_back(e);
    }
    const TagEmbeddingTable hashed(model->config().dim());
    model->append_tags(added, opt.embeddings ? *opt.embeddings : hashed);
    round_parameters_to_f32(model->parameters());
  }
  if (model->vocabulary().empty()) throw ValidationError("training needs at least one tag in the vocabulary");
  model->set_precision(Dtype::f64);
  const CaptionTokenizer* tokenizer = model->has_text_decoder() && ck.tokenizer ? &*ck.tokenizer : nullptr;

  StageResult result;
  std::vector<std::optional<TrainingExample>> examples;
  for (const auto& s : samples) {
    std::string error;
    examples.push_back(make_example(s, *model, tokenizer, frames_root, &error));
    if (!examples.back()) {
      ++result.skipped_samples;
      log(error);
    }
  }

  std::error_code ec;
  std::filesystem::create_directories(opt.out_dir, ec);
  if (ec) throw IoError("cannot create output directory " + opt.out_dir.string() + ": " + ec.message());
  std::ofstream metrics(opt.out_dir / "metrics.jsonl", opt.resume ? std::ios::app : std::ios::trunc);
  if (!metrics) throw IoError("cannot write metrics log in " + opt.out_dir.string());

  auto snapshot = [&](std::size_t epoch) {
    Checkpoint out;
    out.model_config = model->config();
    out.train_config = config.to_json();
    out.vocab = model->vocabulary();
    out.params = model->parameters();
    out.tokenizer = ck.tokenizer;
    out.optimizer = optimizer;
    out.rng_state = rng.state();
    out.epoch = epoch;
    out.step = step;
    return out;
  };
  auto save = [&](const std::filesystem::path& dir, const Checkpoint& c) {
    try {
      save_checkpoint(dir, c);
    } catch (const IoError& e) {
      throw IoError(std::string(e.what()) + " (partial state in " + dir.string() + ")");
    }
  };

  std::vector<std::size_t> order(samples.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  for (std::size_t epoch = start_epoch; epoch < config.epochs; ++epoch) {
    std::vector<std::size_t> shuffled = order;
    rng.shuffle(shuffled);
    for (std::size_t b = 0; b < shuffled.size(); b += config.batch_size) {
      std::vector<const TrainingExample*> batch;
      for (std::size_t i = b; i < std::min(b + config.batch_size, shuffled.size()); ++i) {
        if (examples[shuffled[i]]) batch.push_back(&*examples[shuffled[i]]);
      }
      if (batch.empty()) continue;
      const double lr = lr_at(step, epoch, config);
      StepLosses losses = train_step(*model, batch, config, optimizer, lr);
      nlohmann::ordered_json line;
      line["step"] = step;
      line["epoch"] = epoch;
      line["lr"] = lr;
      line["tag_loss"] = losses.tag;
      line["caption_loss"] = losses.caption;
      line["total"] = losses.total;
      metrics << line.dump() << '\n';
      result.steps.push_back(losses);
      ++step;
    }
    metrics.flush();
    const Checkpoint c = snapshot(epoch + 1);
    save(opt.out_dir / epoch_dir_name(epoch + 1), c);
    log("epoch " + std::to_string(epoch + 1) + "/" + std::to_string(config.epochs) + " done, step " +
        std::to_string(step));
  }
  result.checkpoint = opt.out_dir / "final";
  save(result.checkpoint, snapshot(std::max<std::size_t>(start_epoch, config.epochs)));
  return result;
}

}  // namespace surgtag
