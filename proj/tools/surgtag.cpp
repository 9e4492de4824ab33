#include <algorithm>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "surgtag/bench.hpp"
#include "surgtag/checkpoint.hpp"
#include "surgtag/data_engine.hpp"
#include "surgtag/errors.hpp"
#include "surgtag/evaluation.hpp"
#include "surgtag/image.hpp"
#include "surgtag/label_engine.hpp"
#include "surgtag/run_manifest.hpp"
#include "surgtag/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;
using namespace surgtag;

namespace {

struct Globals {
  std::uint64_t seed = 42;
  bool seed_given = false;
  std::size_t jobs = std::max(1u, std::thread::hardware_concurrency());
};

void log_line(const std::string& line) { std::cerr << line << '\n'; }

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed: " + path.string());
}

json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

fs::path sibling(const fs::path& out, const std::string& suffix) { return fs::path(out.string() + suffix); }

/// Image files of a directory in filename order.
std::vector<fs::path> list_frames(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    const auto ext = entry.path().extension().string();
    if (entry.is_regular_file() && (ext == ".pgm" || ext == ".ppm" || ext == ".rt")) files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw ValidationError("no .pgm/.ppm/.rt frames in " + dir.string());
  return files;
}

std::vector<std::string> split_csv(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!normalize_tag(item).empty()) out.push_back(item);
  }
  return out;
}

TagEmbeddingTable embeddings_for(const Model& model, const std::string& path) {
  if (path.empty()) return TagEmbeddingTable(model.config().dim());
  auto table = TagEmbeddingTable::load(path);
  if (table.dim() != model.config().dim()) {
    throw DimensionError("embedding table dim " + std::to_string(table.dim()) + " != model dim " +
                         std::to_string(model.config().dim()));
  }
  return table;
}

/// Adds names missing from the model's vocabulary; returns how many were new.
std::size_t add_missing_tags(Model& model, const std::vector<std::string>& names, const TagEmbeddingTable& table) {
  std::vector<std::string> fresh;
  for (const auto& n : names) {
    const auto norm = normalize_tag(n);
    if (!model.vocabulary().contains(norm) && std::find(fresh.begin(), fresh.end(), norm) == fresh.end()) {
      fresh.push_back(norm);
    }
  }
  if (!fresh.empty()) model.extend_vocabulary(fresh, table);
  return fresh.size();
}

// ---- build-vocab ----

struct BuildVocabArgs {
  std::string gazetteer, stoplist, out, vlm;
  std::vector<std::string> transcripts, images;
  std::size_t min_freq = 3;
  std::string split = "both";
};

int cmd_build_vocab(const BuildVocabArgs& a, const Globals& g, const std::string& config_text) {
  RunManifest manifest("build-vocab", g.seed);
  manifest.set_config(config_text);
  manifest.add_input(a.gazetteer);
  for (const auto& t : a.transcripts) manifest.add_input(t);
  const auto gaz = Gazetteer::read_tsv(a.gazetteer);
  std::set<std::string> stop;
  if (!a.stoplist.empty()) {
    manifest.add_input(a.stoplist);
    stop = read_stoplist(a.stoplist);
  }
  std::vector<VlmAnnotation> annotations;
  std::size_t annotation_errors = 0;
  if (!a.vlm.empty()) {
    if (a.images.empty()) throw ConfigError("--vlm needs at least one --images entry");
    std::vector<std::string> hint;
    for (const auto& [category, phrases] : gaz.lexicons) hint.insert(hint.end(), phrases.begin(), phrases.end());
    auto client = make_service_client(a.vlm);
    AnnotateOptions opts;
    opts.concurrency = g.jobs;
    auto result = annotate_images(a.images, *client, hint, opts);
    for (const auto& line : result.log) log_line(line);
    for (const auto& e : result.errors) log_line("annotation failed: " + e.image_ref + ": " + e.message);
    annotations = std::move(result.annotations);
    annotation_errors = result.errors.size();
  }
  std::vector<fs::path> transcripts(a.transcripts.begin(), a.transcripts.end());
  auto vb = build_vocabulary_from_transcripts(transcripts, gaz, annotations, a.min_freq, stop,
                                              split_from_string(a.split));
  vb.vocab.write_tsv(a.out);
  auto stats = vb.stats();
  stats["annotations"] = annotations.size();
  stats["annotation_errors"] = annotation_errors;
  write_text(sibling(a.out, ".stats.json"), stats.dump(2) + "\n");
  manifest.add_output(a.out);
  manifest.finish();
  manifest.write(sibling(a.out, ".manifest.json"));
  std::cout << stats.dump() << '\n';
  return 0;
}

// ---- build-dataset ----

struct BuildDatasetArgs {
  std::string vocab, frames_dir, filter = "mock", stop_phrases, out;
  std::vector<std::string> transcripts;
  std::size_t n_frames = 1;
  std::string split = "pretrain";
};

int cmd_build_dataset(const BuildDatasetArgs& a, const Globals& g, const std::string& config_text) {
  RunManifest manifest("build-dataset", g.seed);
  manifest.set_config(config_text);
  manifest.add_input(a.vocab);
  manifest.add_input(a.frames_dir);
  for (const auto& t : a.transcripts) manifest.add_input(t);
  const auto vocab = TagVocabulary::read_tsv(a.vocab);
  const auto gaz = gazetteer_from_vocabulary(vocab);
  std::unique_ptr<JsonClient> filter;
  if (!a.stop_phrases.empty()) {
    if (a.filter != "mock") throw ConfigError("--stop-phrases only applies to --filter mock");
    manifest.add_input(a.stop_phrases);
    filter = make_stop_phrase_filter(read_stop_phrases(a.stop_phrases));
  } else {
    filter = make_service_client(a.filter);
  }
  PipelineOptions opts;
  opts.frames_per_clip = a.n_frames;
  opts.split = split_from_string(a.split);
  std::vector<fs::path> transcripts(a.transcripts.begin(), a.transcripts.end());
  auto result = run_data_pipeline(transcripts, a.frames_dir, vocab, gaz, *filter, opts);
  for (const auto& line : result.log) log_line(line);
  if (fs::path(a.out).has_parent_path()) fs::create_directories(fs::path(a.out).parent_path());
  write_dataset(a.out, result.dataset.samples);
  const auto stats = result.dataset.stats.to_json();
  write_text(sibling(a.out, ".stats.json"), stats.dump(2) + "\n");
  manifest.add_output(a.out);
  manifest.finish();
  manifest.write(sibling(a.out, ".manifest.json"));
  std::cout << stats.dump() << '\n';
  return 0;
}

// ---- train ----

struct TrainArgs {
  std::string stage = "pretrain", dataset, vocab, config, init, resume, out, frames_root, embeddings;
  std::optional<std::size_t> epochs, batch_size;
};

int cmd_train(const TrainArgs& a, const Globals& g, const std::string& config_text) {
  const Stage stage = stage_from_string(a.stage);
  json file = json::object();
  if (!a.config.empty()) {
    file = read_json_file(a.config);
    if (!file.is_object()) throw ConfigError(a.config + ": expected a JSON object");
    for (const auto& [key, value] : file.items()) {
      if (key != "model" && key != "train" && key != "frames_root") {
        throw ConfigError(a.config + ": unknown key \"" + key + "\"");
      }
    }
  }
  StageOptions opts;
  opts.dataset = a.dataset;
  opts.out_dir = a.out;
  opts.log = log_line;
  if (file.contains("model")) opts.model_config = model_config_from_json(file["model"], ModelConfig{});
  if (!a.frames_root.empty()) {
    opts.frames_root = a.frames_root;
  } else if (file.contains("frames_root")) {
    fs::path root = file["frames_root"].get<std::string>();
    opts.frames_root = root.is_relative() ? fs::path(a.config).parent_path() / root : root;
  }
  if (!a.vocab.empty()) {
    opts.vocab = TagVocabulary::read_tsv(a.vocab);
  } else if (a.resume.empty()) {
    throw ConfigError("--vocab is required unless --resume is given");
  }
  if (!a.init.empty()) opts.init = fs::path(a.init);
  if (!a.resume.empty()) opts.resume = fs::path(a.resume);
  if (!a.embeddings.empty()) opts.embeddings = TagEmbeddingTable::load(a.embeddings);

  TrainConfig cfg = TrainConfig::defaults(stage);
  if (file.contains("train")) cfg = TrainConfig::from_json(file["train"], cfg);
  cfg.stage = stage;
  if (g.seed_given || !(file.contains("train") && file["train"].contains("seed"))) cfg.seed = g.seed;
  if (a.epochs) cfg.epochs = *a.epochs;
  if (a.batch_size) cfg.batch_size = *a.batch_size;
  cfg.validate();

  RunManifest manifest("train", cfg.seed);
  manifest.set_config(config_text + "\n" + cfg.to_json().dump() + "\n" +
                      model_config_to_json(opts.model_config).dump());
  manifest.add_input(a.dataset);
  for (const auto& p : {a.vocab, a.config, a.init, a.resume, a.embeddings}) {
    if (!p.empty()) manifest.add_input(p);
  }
  auto result = run_stage(opts, cfg);
  manifest.add_output(result.checkpoint);
  manifest.finish();
  manifest.write(fs::path(a.out) / "run_manifest.json");

  ordered_json summary;
  summary["checkpoint"] = result.checkpoint.string();
  summary["stage"] = to_string(stage);
  summary["steps"] = result.steps.size();
  summary["skipped_samples"] = result.skipped_samples;
  if (!result.steps.empty()) {
    const auto& last = result.steps.back();
    summary["final"] = {{"tag_loss", last.tag}, {"caption_loss", last.caption}, {"total", last.total}};
  }
  std::cout << summary.dump() << '\n';
  return 0;
}

// ---- eval ----

struct EvalArgs {
  std::string checkpoint, dataset, records, vocab, mode = "video", out, csv, frames_root, embeddings, method,
      save_records;
  double beta = 0.5;
};

int cmd_eval(const EvalArgs& a, const Globals& g, const std::string& config_text) {
  RunManifest manifest("eval", g.seed);
  manifest.set_config(config_text);
  std::vector<EvalRecord> records;
  TagVocabulary vocab;
  const InferenceMode mode = inference_mode_from_string(a.mode);
  if (!a.records.empty()) {
    if (a.vocab.empty()) throw ConfigError("--records needs --vocab");
    if (!a.checkpoint.empty() || !a.dataset.empty()) throw ConfigError("--records excludes --checkpoint/--dataset");
    manifest.add_input(a.records);
    manifest.add_input(a.vocab);
    records = read_records(a.records);
    vocab = TagVocabulary::read_tsv(a.vocab);
  } else {
    if (a.checkpoint.empty() || a.dataset.empty()) throw ConfigError("eval needs --checkpoint and --dataset, or --records");
    manifest.add_input(a.checkpoint);
    manifest.add_input(a.dataset);
    Model model = model_from_checkpoint(load_checkpoint(a.checkpoint));
    if (!a.vocab.empty()) {
      manifest.add_input(a.vocab);
      // zero-shot: evaluation tags missing from the checkpoint are embedded on the fly
      add_missing_tags(model, TagVocabulary::read_tsv(a.vocab).names(), embeddings_for(model, a.embeddings));
    }
    const auto samples = read_dataset(a.dataset);
    const fs::path root = a.frames_root.empty() ? fs::path(a.dataset).parent_path() : fs::path(a.frames_root);
    records = predict_records(model, samples, root, mode, log_line);
    vocab = model.vocabulary();
  }
  if (!a.save_records.empty()) write_records(a.save_records, records);
  const auto report = evaluate(records, vocab, a.beta);
  auto j = report.to_json();
  write_text(a.out, j.dump(2) + "\n");
  manifest.add_output(a.out);
  if (!a.csv.empty()) {
    write_text(a.csv, report_csv({{a.method.empty() ? to_string(mode) : a.method, report}}));
    manifest.add_output(a.csv);
  }
  manifest.finish();
  manifest.write(sibling(a.out, ".manifest.json"));
  ordered_json summary;
  summary["samples"] = records.size();
  summary["map"] = j["map"];
  summary["threshold"] = j["threshold"];
  summary["micro"] = j["micro"];
  std::cout << summary.dump() << '\n';
  return 0;
}

// ---- tag ----

struct TagArgs {
  std::string checkpoint, image, frames_dir, add_tags, mode = "video", embeddings, manifest;
  double threshold = 0.5;
};

ordered_json prediction_json(const TagPrediction& p, const TagVocabulary& vocab) {
  std::vector<std::size_t> order = p.selected;
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t x, std::size_t y) { return p.probabilities[x] > p.probabilities[y]; });
  ordered_json tags = ordered_json::array();
  for (auto i : order) {
    ordered_json t;
    t["name"] = vocab[i].name;
    t["category"] = to_string(vocab[i].category);
    t["prob"] = p.probabilities[i];
    tags.push_back(t);
  }
  ordered_json j;
  j["tags"] = tags;
  j["threshold"] = p.threshold;
  return j;
}

int cmd_tag(const TagArgs& a, const Globals& g, const std::string& config_text) {
  RunManifest manifest("tag", g.seed);
  manifest.set_config(config_text);
  manifest.add_input(a.checkpoint);
  Model model = model_from_checkpoint(load_checkpoint(a.checkpoint));
  if (!a.add_tags.empty()) add_missing_tags(model, split_csv(a.add_tags), embeddings_for(model, a.embeddings));
  TagPrediction prediction;
  std::size_t frames = 1;
  if (!a.image.empty()) {
    manifest.add_input(a.image);
    prediction = infer_image(model, read_image(a.image), a.threshold);
  } else {
    manifest.add_input(a.frames_dir);
    std::vector<ImageRaster> images;
    for (const auto& f : list_frames(a.frames_dir)) images.push_back(read_image(f));
    frames = images.size();
    const auto mode = inference_mode_from_string(a.mode);
    if (mode == InferenceMode::imagewise) {
      prediction = infer_video_imagewise(model, images, a.threshold);
    } else if (mode == InferenceMode::video) {
      prediction = infer_video(model, images, a.threshold, model.config().fusion.max_frames);
    } else {
      prediction = infer_image(model, images[images.size() / 2], a.threshold);
    }
  }
  auto j = prediction_json(prediction, model.vocabulary());
  j["frames"] = frames;
  j["vocabulary_size"] = model.vocabulary().size();
  std::cout << j.dump() << '\n';
  manifest.finish();
  if (!a.manifest.empty()) {
    manifest.write(a.manifest);
  } else {
    std::cerr << manifest.to_json().dump() << '\n';
  }
  return 0;
}

// ---- bench ----

struct BenchArgs {
  std::string checkpoint, config, frames_dir, manifest, out;
  std::size_t tags = 64, n = 8, repeats = 5;
};

int cmd_bench(const BenchArgs& a, const Globals& g, const std::string& config_text) {
  RunManifest manifest("bench", g.seed);
  manifest.set_config(config_text);
  std::optional<Model> model;
  if (!a.checkpoint.empty()) {
    manifest.add_input(a.checkpoint);
    model.emplace(model_from_checkpoint(load_checkpoint(a.checkpoint)));
  } else {
    ModelConfig mc;
    if (!a.config.empty()) {
      manifest.add_input(a.config);
      const auto file = read_json_file(a.config);
      if (file.contains("model")) mc = model_config_from_json(file["model"], mc);
    }
    if (mc.fusion.max_frames < a.n) mc.fusion.max_frames = a.n;
    std::vector<TagEntry> entries;
    for (std::size_t k = 0; k < a.tags; ++k) entries.push_back({"tag " + std::to_string(k), TagCategory::other});
    model.emplace(mc, TagVocabulary(entries), TagEmbeddingTable(mc.dim()), 0, g.seed);
  }
  const auto& enc = model->config().encoder;
  std::vector<ImageRaster> frames;
  if (!a.frames_dir.empty()) {
    manifest.add_input(a.frames_dir);
    const auto files = list_frames(a.frames_dir);
    for (auto i : sample_frame_indices(files.size(), a.n)) frames.push_back(read_image(files[i]));
    if (frames.size() < a.n) throw ValidationError("--frames-dir has fewer than --n frames");
  } else {
    Rng rng(g.seed);
    for (std::size_t i = 0; i < a.n; ++i) {
      auto img = ImageRaster::blank(enc.image_height, enc.image_width, enc.channels);
      for (auto& px : img.pixels) px = static_cast<float>(rng.uniform());
      frames.push_back(std::move(img));
    }
  }
  const auto result = run_bench(*model, frames, a.repeats);
  const auto j = result.to_json();
  std::cout << j.dump() << '\n';
  if (!a.out.empty()) {
    write_text(a.out, j.dump(2) + "\n");
    manifest.add_output(a.out);
  }
  manifest.finish();
  if (!a.manifest.empty()) {
    manifest.write(a.manifest);
  } else {
    std::cerr << manifest.to_json().dump() << '\n';
  }
  if (!result.counts_ok) {
    std::cerr << "error: decoder invocations (" << result.video.decoder_calls << ", " << result.imagewise.decoder_calls
              << ") != (1, " << result.frames << ")\n";
    return 1;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"surgtag: open-vocabulary surgical video tagging"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(surgtag::version()));
  Globals g;
  auto* seed_opt = app.add_option("--seed", g.seed, "Seed for every random choice")->capture_default_str();
  app.add_option("--jobs", g.jobs, "Worker threads for service calls")->check(CLI::PositiveNumber);
  std::function<int()> action;
  CLI::App* active = nullptr;

  BuildVocabArgs bv;
  auto* c_bv = app.add_subcommand("build-vocab", "Mine a tag vocabulary from transcripts");
  c_bv->add_option("--gazetteer", bv.gazetteer, "category<TAB>phrase lexicon")->required()->check(CLI::ExistingFile);
  c_bv->add_option("--stoplist", bv.stoplist, "Phrases never emitted as tags")->check(CLI::ExistingFile);
  c_bv->add_option("--transcripts", bv.transcripts, "Transcript JSON files")->required()->check(CLI::ExistingFile);
  c_bv->add_option("--min-freq", bv.min_freq, "Minimum tag count")->capture_default_str()->check(CLI::PositiveNumber);
  c_bv->add_option("--split", bv.split, "Split recorded for every tag")
      ->capture_default_str()
      ->check(CLI::IsMember({"pretrain", "finetune", "both"}));
  c_bv->add_option("--vlm", bv.vlm, "Annotation service: http://... or cmd:<program>");
  c_bv->add_option("--images", bv.images, "Image references sent to the annotation service");
  c_bv->add_option("--out", bv.out, "Vocabulary TSV")->required();
  c_bv->callback([&] { action = [&] { return cmd_build_vocab(bv, g, active->config_to_str(true, false)); }; });

  BuildDatasetArgs bd;
  auto* c_bd = app.add_subcommand("build-dataset", "Turn transcripts and frames into training samples");
  c_bd->add_option("--vocab", bd.vocab, "Vocabulary TSV")->required()->check(CLI::ExistingFile);
  c_bd->add_option("--transcripts", bd.transcripts, "Transcript JSON files")->check(CLI::ExistingFile);
  c_bd->add_option("--frames-dir,--frames-manifest", bd.frames_dir, "Directory of <video_id>.tsv frame manifests")
      ->required()
      ->check(CLI::ExistingDirectory);
  c_bd->add_option("--filter", bd.filter, "Visual filter: mock, http://... or cmd:<program>")->capture_default_str();
  c_bd->add_option("--stop-phrases", bd.stop_phrases, "Stop phrases for the mock filter")->check(CLI::ExistingFile);
  c_bd->add_option("--n-frames", bd.n_frames, "Frames per clip")->capture_default_str()->check(CLI::PositiveNumber);
  c_bd->add_option("--split", bd.split, "Split of the samples")
      ->capture_default_str()
      ->check(CLI::IsMember({"pretrain", "finetune", "both"}));
  c_bd->add_option("--out", bd.out, "Dataset JSONL")->required();
  c_bd->callback([&] { action = [&] { return cmd_build_dataset(bd, g, active->config_to_str(true, false)); }; });

  TrainArgs tr;
  auto* c_tr = app.add_subcommand("train", "Run one training stage");
  c_tr->add_option("--stage", tr.stage, "Training stage")
      ->capture_default_str()
      ->check(CLI::IsMember({"pretrain", "finetune"}));
  c_tr->add_option("--dataset", tr.dataset, "Dataset JSONL")->required()->check(CLI::ExistingFile);
  c_tr->add_option("--vocab", tr.vocab, "Vocabulary TSV")->check(CLI::ExistingFile);
  c_tr->add_option("--config", tr.config, "JSON with model, train and frames_root sections")
      ->check(CLI::ExistingFile);
  auto* init = c_tr->add_option("--init", tr.init, "Checkpoint to start from (weights only)")
                   ->check(CLI::ExistingDirectory);
  c_tr->add_option("--resume", tr.resume, "Checkpoint to resume (weights, optimizer, rng)")
      ->check(CLI::ExistingDirectory)
      ->excludes(init);
  c_tr->add_option("--out", tr.out, "Output directory")->required();
  c_tr->add_option("--frames-root", tr.frames_root, "Directory frame refs are relative to");
  c_tr->add_option("--embeddings", tr.embeddings, "Tag embedding table")->check(CLI::ExistingFile);
  c_tr->add_option("--epochs", tr.epochs, "Override train.epochs");
  c_tr->add_option("--batch-size", tr.batch_size, "Override train.batch_size")->check(CLI::PositiveNumber);
  c_tr->callback([&] { action = [&] { return cmd_train(tr, g, active->config_to_str(true, false)); }; });

  EvalArgs ev;
  auto* c_ev = app.add_subcommand("eval", "Score a checkpoint or saved records");
  c_ev->add_option("--checkpoint", ev.checkpoint, "Checkpoint directory")->check(CLI::ExistingDirectory);
  c_ev->add_option("--dataset", ev.dataset, "Dataset JSONL")->check(CLI::ExistingFile);
  c_ev->add_option("--records", ev.records, "Saved score records JSONL")->check(CLI::ExistingFile);
  c_ev->add_option("--vocab", ev.vocab, "Evaluation vocabulary TSV")->check(CLI::ExistingFile);
  c_ev->add_option("--mode", ev.mode, "Inference path")
      ->capture_default_str()
      ->check(CLI::IsMember({"image", "video", "imagewise"}));
  c_ev->add_option("--beta", ev.beta, "F-beta weight")->capture_default_str()->check(CLI::PositiveNumber);
  c_ev->add_option("--frames-root", ev.frames_root, "Directory frame refs are relative to");
  c_ev->add_option("--embeddings", ev.embeddings, "Tag embedding table for unseen tags")->check(CLI::ExistingFile);
  c_ev->add_option("--save-records", ev.save_records, "Write the score records JSONL");
  c_ev->add_option("--out", ev.out, "Report JSON")->required();
  c_ev->add_option("--csv", ev.csv, "Also write a CSV row");
  c_ev->add_option("--method", ev.method, "CSV row label (default: the mode)");
  c_ev->callback([&] { action = [&] { return cmd_eval(ev, g, active->config_to_str(true, false)); }; });

  TagArgs tg;
  auto* c_tg = app.add_subcommand("tag", "Predict tags for an image or a clip");
  c_tg->add_option("--checkpoint", tg.checkpoint, "Checkpoint directory")->required()->check(CLI::ExistingDirectory);
  auto* image = c_tg->add_option("--image", tg.image, "Single image")->check(CLI::ExistingFile);
  auto* frames = c_tg->add_option("--frames-dir", tg.frames_dir, "Directory of clip frames")
                     ->check(CLI::ExistingDirectory)
                     ->excludes(image);
  c_tg->add_option("--threshold", tg.threshold, "Probability threshold")
      ->capture_default_str()
      ->check(CLI::Range(0.0, 1.0));
  c_tg->add_option("--add-tags", tg.add_tags, "Extra tags, comma separated");
  c_tg->add_option("--mode", tg.mode, "Clip inference path")
      ->capture_default_str()
      ->check(CLI::IsMember({"image", "video", "imagewise"}));
  c_tg->add_option("--embeddings", tg.embeddings, "Tag embedding table for added tags")->check(CLI::ExistingFile);
  c_tg->add_option("--manifest", tg.manifest, "Run manifest path (default: stderr)");
  c_tg->callback([&] {
    if (image->count() + frames->count() != 1) throw CLI::RequiredError("exactly one of --image, --frames-dir");
    action = [&] { return cmd_tag(tg, g, active->config_to_str(true, false)); };
  });

  BenchArgs bn;
  auto* c_bn = app.add_subcommand("bench", "Video vs imagewise inference latency");
  c_bn->add_option("--checkpoint", bn.checkpoint, "Checkpoint directory")->check(CLI::ExistingDirectory);
  c_bn->add_option("--config", bn.config, "Model config for a synthetic model")->check(CLI::ExistingFile);
  c_bn->add_option("--tags", bn.tags, "Vocabulary size of a synthetic model")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  c_bn->add_option("--frames-dir", bn.frames_dir, "Directory of clip frames")->check(CLI::ExistingDirectory);
  c_bn->add_option("--n", bn.n, "Frames per clip")->capture_default_str()->check(CLI::PositiveNumber);
  c_bn->add_option("--repeats", bn.repeats, "Timed calls per mode")->capture_default_str()->check(CLI::PositiveNumber);
  c_bn->add_option("--out", bn.out, "Also write the result JSON here");
  c_bn->add_option("--manifest", bn.manifest, "Run manifest path (default: stderr)");
  c_bn->callback([&] { action = [&] { return cmd_bench(bn, g, active->config_to_str(true, false)); }; });

  for (auto* sub : app.get_subcommands({})) {
    sub->parse_complete_callback([&active, sub] { active = sub; });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }
  g.seed_given = seed_opt->count() > 0;
  try {
    return action();
  } catch (const FormatError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const DimensionError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
