#include <pybind11/functional.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "surgtag/bench.hpp"
#include "surgtag/checkpoint.hpp"
#include "surgtag/data_engine.hpp"
#include "surgtag/errors.hpp"
#include "surgtag/evaluation.hpp"
#include "surgtag/image.hpp"
#include "surgtag/label_engine.hpp"
#include "surgtag/run_manifest.hpp"
#include "surgtag/training.hpp"

namespace py = pybind11;
using namespace surgtag;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;

/// [H, W] or [H, W, C] float array in [0, 1] -> raster.
ImageRaster to_raster(const FloatArray& array) {
  if (array.ndim() != 2 && array.ndim() != 3) {
    throw ValidationError("image must be a [H, W] or [H, W, C] array, got " + std::to_string(array.ndim()) + " dims");
  }
  ImageRaster img;
  img.height = static_cast<std::size_t>(array.shape(0));
  img.width = static_cast<std::size_t>(array.shape(1));
  img.channels = array.ndim() == 3 ? static_cast<std::size_t>(array.shape(2)) : 1;
  img.pixels.assign(array.data(), array.data() + array.size());
  img.validate();
  return img;
}

py::array_t<float> from_raster(const ImageRaster& img) {
  std::vector<py::ssize_t> shape = {static_cast<py::ssize_t>(img.height), static_cast<py::ssize_t>(img.width)};
  if (img.channels != 1) shape.push_back(static_cast<py::ssize_t>(img.channels));
  py::array_t<float> out(shape);
  std::copy(img.pixels.begin(), img.pixels.end(), out.mutable_data());
  return out;
}

std::vector<ImageRaster> to_rasters(const std::vector<FloatArray>& frames) {
  std::vector<ImageRaster> out;
  out.reserve(frames.size());
  for (const auto& f : frames) out.push_back(to_raster(f));
  return out;
}

py::object json_to_py(const nlohmann::ordered_json& j) {
  return py::module_::import("json").attr("loads")(j.dump());
}

nlohmann::json py_to_json(const py::object& obj) {
  return nlohmann::json::parse(py::module_::import("json").attr("dumps")(obj).cast<std::string>());
}

py::dict prediction_dict(const TagPrediction& p, const TagVocabulary& vocab) {
  py::dict d;
  std::vector<std::string> names;
  for (auto i : p.selected) names.push_back(vocab[i].name);
  d["logits"] = p.logits;
  d["probabilities"] = p.probabilities;
  d["selected"] = p.selected;
  d["tags"] = names;
  d["threshold"] = p.threshold;
  return d;
}

std::vector<EvalRecord> to_records(const std::vector<std::vector<double>>& scores,
                                   const std::vector<std::vector<int>>& truth) {
  if (scores.size() != truth.size()) throw ValidationError("scores and truth have different lengths");
  std::vector<EvalRecord> records;
  for (std::size_t i = 0; i < scores.size(); ++i) records.push_back({"sample-" + std::to_string(i), scores[i], truth[i]});
  return records;
}

}  // namespace

PYBIND11_MODULE(_surgtag, m) {
  m.doc() = "Open-vocabulary surgical video tagging core";
  m.attr("__version__") = version();

  // Errors map onto a small Python hierarchy rooted at SurgtagError(ValueError).
  static py::exception<Error> base(m, "SurgtagError", PyExc_ValueError);
  static py::exception<DimensionError> dimension(m, "DimensionError", base.ptr());
  static py::exception<ConfigError> config(m, "ConfigError", base.ptr());
  static py::exception<ValidationError> validation(m, "ValidationError", base.ptr());
  static py::exception<FormatError> format(m, "FormatError", base.ptr());
  static py::exception<NumericError> numeric(m, "NumericError", base.ptr());
  static py::exception<IoError> io(m, "IoError", base.ptr());
  static py::exception<TransportError> transport(m, "TransportError", base.ptr());
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const DimensionError& e) {
      py::set_error(dimension, e.what());
    } catch (const ConfigError& e) {
      py::set_error(config, e.what());
    } catch (const ValidationError& e) {
      py::set_error(validation, e.what());
    } catch (const FormatError& e) {
      py::set_error(format, e.what());
    } catch (const NumericError& e) {
      py::set_error(numeric, e.what());
    } catch (const IoError& e) {
      py::set_error(io, e.what());
    } catch (const TransportError& e) {
      py::set_error(transport, e.what());
    } catch (const Error& e) {
      py::set_error(base, e.what());
    }
  });

  // ---- vocabulary and embeddings ----
  m.def("normalize_tag", &normalize_tag, py::arg("text"));
  m.def("hashed_embedding", &hashed_embedding, py::arg("name"), py::arg("dim"),
        "Unit-norm trigram-hashed embedding of an already-normalized name.");
  m.def("sha256_hex", [](const py::bytes& b) { return sha256_hex(std::string(b)); }, py::arg("data"));

  py::class_<TagVocabulary>(m, "TagVocabulary")
      .def(py::init<>())
      .def_static("read_tsv", &TagVocabulary::read_tsv, py::arg("path"))
      .def(
          "add",
          [](TagVocabulary& v, const std::string& name, const std::string& category, const std::string& split) {
            return v.add({normalize_tag(name), category_from_string(category), split_from_string(split)});
          },
          py::arg("name"), py::arg("category") = "other", py::arg("split") = "both")
      .def("names", &TagVocabulary::names)
      .def("category",
           [](const TagVocabulary& v, std::size_t i) {
             if (i >= v.size()) throw py::index_error("tag index out of range");
             return to_string(v[i].category);
           })
      .def("index", [](const TagVocabulary& v, const std::string& name) { return v.find(normalize_tag(name)); })
      .def("to_tsv", &TagVocabulary::to_tsv)
      .def("write_tsv", &TagVocabulary::write_tsv, py::arg("path"))
      .def("__len__", &TagVocabulary::size)
      .def("__contains__", [](const TagVocabulary& v, const std::string& name) { return v.contains(name); })
      .def("__repr__", [](const TagVocabulary& v) { return "<TagVocabulary with " + std::to_string(v.size()) + " tags>"; });

  // ---- label engine ----
  py::class_<Gazetteer>(m, "Gazetteer")
      .def(py::init<>())
      .def_static("read_tsv", &Gazetteer::read_tsv, py::arg("path"))
      .def_static("from_vocabulary", &gazetteer_from_vocabulary, py::arg("vocab"))
      .def(
          "add", [](Gazetteer& g, const std::string& category, const std::string& phrase) {
            g.add(category_from_string(category), phrase);
          },
          py::arg("category"), py::arg("phrase"))
      .def(
          "contains",
          [](const Gazetteer& g, const std::string& category, const std::string& phrase) {
            return g.contains(category_from_string(category), phrase);
          },
          py::arg("category"), py::arg("phrase"));

  m.def(
      "extract_entities",
      [](const std::string& sentence, const Gazetteer& g) {
        py::list out;
        for (const auto& e : extract_entities(sentence, g)) {
          out.append(py::make_tuple(e.tag, to_string(e.category), e.begin, e.end));
        }
        return out;
      },
      py::arg("sentence"), py::arg("gazetteer"), "List of (tag, category, begin, end).");
  m.def(
      "extract_actions",
      [](const std::string& sentence, const Gazetteer& g) {
        py::list out;
        for (const auto& t : extract_actions(sentence, g)) {
          out.append(py::make_tuple(t.instrument, t.verb, t.target));
        }
        return out;
      },
      py::arg("sentence"), py::arg("gazetteer"), "List of (instrument, verb, target) triplets.");
  m.def("lemmatize_verb", &lemmatize_verb, py::arg("token"));
  m.def(
      "build_vocabulary",
      [](const std::vector<std::filesystem::path>& transcripts, const Gazetteer& g, std::size_t min_freq,
         const std::optional<std::filesystem::path>& stoplist, const std::string& split) {
        const std::set<std::string> stop = stoplist ? read_stoplist(*stoplist) : std::set<std::string>{};
        auto vb = build_vocabulary_from_transcripts(transcripts, g, {}, min_freq, stop, split_from_string(split));
        return py::make_tuple(vb.vocab, json_to_py(vb.stats()));
      },
      py::arg("transcripts"), py::arg("gazetteer"), py::arg("min_freq") = 3,
      py::arg("stoplist") = py::none(), py::arg("split") = "both",
      "Label engine over transcript files; returns (vocabulary, stats).");

  // ---- data engine ----
  m.def(
      "build_dataset",
      [](const std::vector<std::filesystem::path>& transcripts, const std::filesystem::path& frames_dir,
         const TagVocabulary& vocab, const std::string& filter, std::size_t frames_per_clip, const std::string& split) {
        auto client = make_service_client(filter);
        PipelineOptions opts;
        opts.frames_per_clip = frames_per_clip;
        opts.split = split_from_string(split);
        auto result = run_data_pipeline(transcripts, frames_dir, vocab, gazetteer_from_vocabulary(vocab), *client, opts);
        return py::make_tuple(to_jsonl(result.dataset.samples), json_to_py(result.dataset.stats.to_json()),
                              result.log);
      },
      py::arg("transcripts"), py::arg("frames_dir"), py::arg("vocab"), py::arg("filter") = "mock",
      py::arg("frames_per_clip") = 1, py::arg("split") = "pretrain",
      "Data engine; returns (dataset JSONL text, stats, log lines).");

  // ---- images ----
  m.def("read_image", [](const std::filesystem::path& p) { return from_raster(read_image(p)); }, py::arg("path"));
  m.def("write_pnm", [](const FloatArray& a, const std::filesystem::path& p) { write_pnm(to_raster(a), p); },
        py::arg("image"), py::arg("path"));

  // ---- model and inference ----
  py::class_<Model>(m, "Model")
      .def_static(
          "create",
          [](const py::object& config, const TagVocabulary& vocab, std::uint64_t seed) {
            ModelConfig mc = config.is_none() ? ModelConfig{} : model_config_from_json(py_to_json(config), ModelConfig{});
            return Model(mc, vocab, TagEmbeddingTable(mc.dim()), 0, seed);
          },
          py::arg("config") = py::none(), py::arg("vocab") = TagVocabulary{}, py::arg("seed") = 42,
          "Fresh seeded inference model; `config` is a model-config dict.")
      .def_static(
          "load", [](const std::filesystem::path& dir) { return model_from_checkpoint(load_checkpoint(dir)); },
          py::arg("checkpoint"))
      .def_property_readonly("config", [](const Model& mdl) { return json_to_py(model_config_to_json(mdl.config())); })
      .def_property_readonly("vocabulary", &Model::vocabulary)
      .def(
          "extend_vocabulary",
          [](Model& mdl, const std::vector<std::string>& names) {
            mdl.extend_vocabulary(names, TagEmbeddingTable(mdl.config().dim()));
          },
          py::arg("names"), "Append tags with hashed embeddings; existing logits are unchanged.")
      .def(
          "infer_image",
          [](const Model& mdl, const FloatArray& image, double threshold) {
            auto img = to_raster(image);
            py::gil_scoped_release release;
            auto p = infer_image(mdl, img, threshold);
            py::gil_scoped_acquire acquire;
            return prediction_dict(p, mdl.vocabulary());
          },
          py::arg("image"), py::arg("threshold") = 0.5)
      .def(
          "infer_video",
          [](const Model& mdl, const std::vector<FloatArray>& frames, double threshold, std::size_t max_frames) {
            auto imgs = to_rasters(frames);
            py::gil_scoped_release release;
            auto p = infer_video(mdl, imgs, threshold, max_frames);
            py::gil_scoped_acquire acquire;
            return prediction_dict(p, mdl.vocabulary());
          },
          py::arg("frames"), py::arg("threshold") = 0.5, py::arg("max_frames") = 8)
      .def(
          "infer_video_imagewise",
          [](const Model& mdl, const std::vector<FloatArray>& frames, double threshold) {
            auto imgs = to_rasters(frames);
            py::gil_scoped_release release;
            auto p = infer_video_imagewise(mdl, imgs, threshold);
            py::gil_scoped_acquire acquire;
            return prediction_dict(p, mdl.vocabulary());
          },
          py::arg("frames"), py::arg("threshold") = 0.5)
      .def_property_readonly("decode_calls", &Model::decode_calls)
      .def_property_readonly("fuse_calls", &Model::fuse_calls)
      .def("reset_counters", &Model::reset_counters)
      .def(
          "bench",
          [](const Model& mdl, const std::vector<FloatArray>& frames, std::size_t repeats) {
            auto imgs = to_rasters(frames);
            return json_to_py(run_bench(mdl, imgs, repeats).to_json());
          },
          py::arg("frames"), py::arg("repeats") = 5, "Video vs imagewise latency and decoder-call counts.");

  // ---- training ----
  m.def(
      "lr_at",
      [](std::size_t step, std::size_t epoch, const std::string& stage, const py::object& overrides) {
        TrainConfig cfg = TrainConfig::defaults(stage_from_string(stage));
        if (!overrides.is_none()) cfg = TrainConfig::from_json(py_to_json(overrides), cfg);
        return lr_at(step, epoch, cfg);
      },
      py::arg("step"), py::arg("epoch"), py::arg("stage") = "pretrain", py::arg("overrides") = py::none());
  m.def(
      "train",
      [](const std::filesystem::path& dataset, const std::filesystem::path& out_dir, const TagVocabulary& vocab,
         const py::object& model_config, const py::object& train_config, const std::string& stage,
         const std::optional<std::filesystem::path>& init, const std::optional<std::filesystem::path>& resume,
         const std::optional<std::filesystem::path>& frames_root) {
        StageOptions opts;
        opts.dataset = dataset;
        opts.out_dir = out_dir;
        opts.vocab = vocab;
        if (!model_config.is_none()) opts.model_config = model_config_from_json(py_to_json(model_config), ModelConfig{});
        opts.init = init;
        opts.resume = resume;
        if (frames_root) opts.frames_root = *frames_root;
        TrainConfig cfg = TrainConfig::defaults(stage_from_string(stage));
        if (!train_config.is_none()) cfg = TrainConfig::from_json(py_to_json(train_config), cfg);
        cfg.stage = stage_from_string(stage);
        StageResult result;
        {
          py::gil_scoped_release release;
          result = run_stage(opts, cfg);
        }
        py::list steps;
        for (const auto& s : result.steps) {
          py::dict d;
          d["tag_loss"] = s.tag;
          d["caption_loss"] = s.caption;
          d["total"] = s.total;
          steps.append(d);
        }
        py::dict out;
        out["checkpoint"] = result.checkpoint;
        out["steps"] = steps;
        out["skipped_samples"] = result.skipped_samples;
        return out;
      },
      py::arg("dataset"), py::arg("out_dir"), py::arg("vocab"), py::arg("model_config") = py::none(),
      py::arg("train_config") = py::none(), py::arg("stage") = "pretrain", py::arg("init") = py::none(),
      py::arg("resume") = py::none(), py::arg("frames_root") = py::none(),
      "Runs one training stage; returns the checkpoint path and per-step losses.");

  // ---- evaluation ----
  m.def(
      "average_precision",
      [](const std::vector<double>& scores, const std::vector<int>& truth) { return average_precision(scores, truth); },
      py::arg("scores"), py::arg("truth"), "None when there is no positive.");
  m.def("f_beta", &f_beta, py::arg("precision"), py::arg("recall"), py::arg("beta") = 0.5);
  m.def(
      "search_threshold",
      [](const std::vector<std::vector<double>>& scores, const std::vector<std::vector<int>>& truth, double beta) {
        auto c = search_threshold(to_records(scores, truth), beta);
        py::dict d;
        d["threshold"] = c.threshold;
        d["precision"] = c.precision;
        d["recall"] = c.recall;
        d["f"] = c.f;
        d["tp"] = c.tp;
        d["fp"] = c.fp;
        d["fn"] = c.fn;
        return d;
      },
      py::arg("scores"), py::arg("truth"), py::arg("beta") = 0.5);
  m.def(
      "evaluate",
      [](const std::vector<std::vector<double>>& scores, const std::vector<std::vector<int>>& truth,
         const TagVocabulary& vocab, double beta) {
        return json_to_py(evaluate(to_records(scores, truth), vocab, beta).to_json());
      },
      py::arg("scores"), py::arg("truth"), py::arg("vocab"), py::arg("beta") = 0.5,
      "Full report (threshold, micro/macro P/R/F, mAP, group mAP) as a dict.");
}
