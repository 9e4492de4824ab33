#include "surgtag/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <set>

#include "surgtag/errors.hpp"

namespace surgtag {

static_assert(std::endian::native == std::endian::little, "checkpoint blobs assume a little-endian host");

namespace {

constexpr const char* kFormat = "surgtag-checkpoint";
constexpr int kVersion = 1;
constexpr char kOptimizerMagic[8] = {'S', 'G', 'O', 'P', 'T', '0', '0', '1'};

using Json = nlohmann::json;

std::size_t read_size(const Json& j, const std::string& key) {
  if (!j.is_number_unsigned()) throw ConfigError("config key '" + key + "' must be a non-negative integer");
  return j.get<std::size_t>();
}

// Applies known keys of `section` through `set`; anything else is rejected.
template <typename Setter>
void read_section(const Json& root, const std::string& name, const std::set<std::string>& keys, Setter set) {
  if (!root.contains(name)) return;
  const Json& section = root.at(name);
  if (!section.is_object()) throw ConfigError("config section '" + name + "' must be an object");
  for (const auto& [key, value] : section.items()) {
    if (!keys.count(key)) throw ConfigError("unknown config key '" + name + "." + key + "'");
    set(key, value);
  }
}

void write_file(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint file: " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed, checkpoint left partial: " + path.string());
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint file: " + path.string());
  return {std::istreambuf_iterator<char>(in), {}};
}

Json read_json(const std::filesystem::path& path) {
  Json j = Json::parse(read_file(path), nullptr, false);
  if (j.is_discarded() || !j.is_object()) throw FormatError(path.string() + ": not a JSON object");
  return j;
}

template <typename T>
void put(std::string& out, T value) {
  char buf[sizeof(T)];
  std::memcpy(buf, &value, sizeof(T));
  out.append(buf, sizeof(T));
}

class Reader {
 public:
  Reader(std::string bytes, std::string name) : bytes_(std::move(bytes)), name_(std::move(name)) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    T value;
    std::memcpy(&value, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return value;
  }
  std::string get_string(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw FormatError(name_ + ": truncated");
  }
  std::string bytes_;
  std::string name_;
  std::size_t pos_ = 0;
};

std::string dump(const nlohmann::ordered_json& j) { return j.dump(2) + "\n"; }

}  // namespace

nlohmann::ordered_json model_config_to_json(const ModelConfig& c) {
  nlohmann::ordered_json j;
  j["encoder"] = {{"image_height", c.encoder.image_height}, {"image_width", c.encoder.image_width},
                  {"channels", c.encoder.channels},         {"patch_size", c.encoder.patch_size},
                  {"dim", c.encoder.dim},                   {"layers", c.encoder.layers},
                  {"heads", c.encoder.heads}};
  j["fusion"] = {{"max_frames", c.fusion.max_frames},
                 {"heads", c.fusion.heads},
                 {"use_positional", c.fusion.use_positional},
                 {"mode", to_string(c.fusion.mode)}};
  j["tag_decoder"] = {{"layers", c.tag_decoder.layers}, {"heads", c.tag_decoder.heads}};
  j["text_decoder"] = {{"heads", c.text_decoder.heads}, {"max_len", c.text_decoder.max_len}};
  return j;
}

ModelConfig model_config_from_json(const nlohmann::json& j, const ModelConfig& defaults) {
  if (!j.is_object()) throw ConfigError("model config must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (key != "encoder" && key != "fusion" && key != "tag_decoder" && key != "text_decoder") {
      throw ConfigError("unknown config section '" + key + "'");
    }
  }
  ModelConfig c = defaults;
  read_section(j, "encoder", {"image_height", "image_width", "channels", "patch_size", "dim", "layers", "heads"},
               [&](const std::string& k, const Json& v) {
                 const std::size_t n = read_size(v, "encoder." + k);
                 if (k == "image_height") c.encoder.image_height = n;
                 if (k == "image_width") c.encoder.image_width = n;
                 if (k == "channels") c.encoder.channels = n;
                 if (k == "patch_size") c.encoder.patch_size = n;
                 if (k == "dim") c.encoder.dim = n;
                 if (k == "layers") c.encoder.layers = n;
                 if (k == "heads") c.encoder.heads = n;
               });
  read_section(j, "fusion", {"max_frames", "heads", "use_positional", "mode"},
               [&](const std::string& k, const Json& v) {
                 if (k == "use_positional") {
                   if (!v.is_boolean()) throw ConfigError("config key 'fusion.use_positional' must be a boolean");
                   c.fusion.use_positional = v.get<bool>();
                 } else if (k == "mode") {
                   if (!v.is_string()) throw ConfigError("config key 'fusion.mode' must be a string");
                   c.fusion.mode = fusion_mode_from_string(v.get<std::string>());
                 } else if (k == "max_frames") {
                   c.fusion.max_frames = read_size(v, "fusion.max_frames");
                 } else {
                   c.fusion.heads = read_size(v, "fusion.heads");
                 }
               });
  read_section(j, "tag_decoder", {"layers", "heads"}, [&](const std::string& k, const Json& v) {
    (k == "layers" ? c.tag_decoder.layers : c.tag_decoder.heads) = read_size(v, "tag_decoder." + k);
  });
  read_section(j, "text_decoder", {"heads", "max_len"}, [&](const std::string& k, const Json& v) {
    (k == "heads" ? c.text_decoder.heads : c.text_decoder.max_len) = read_size(v, "text_decoder." + k);
  });
  c.encoder.validate();
  return c;
}

void round_parameters_to_f32(ParameterStore& params) {
  for (auto& p : params.all()) {
    for (double& x : p.tensor.mutable_data()) x = static_cast<double>(static_cast<float>(x));
  }
}

void save_checkpoint(const std::filesystem::path& dir, const Checkpoint& ck) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create checkpoint directory " + dir.string() + ": " + ec.message());

  nlohmann::ordered_json config;
  config["format"] = kFormat;
  config["version"] = kVersion;
  config["epoch"] = ck.epoch;
  config["step"] = ck.step;
  config["model"] = model_config_to_json(ck.model_config);
  config["train"] = ck.train_config;
  write_file(dir / "config.json", dump(config));

  nlohmann::ordered_json manifest;
  manifest["dtype"] = "f32-le";
  manifest["parameters"] = nlohmann::ordered_json::array();
  std::string weights;
  for (const auto& p : ck.params.all()) {
    nlohmann::ordered_json entry;
    entry["name"] = p.name;
    entry["offset"] = weights.size();
    entry["shape"] = p.tensor.shape();
    entry["frozen"] = p.frozen;
    manifest["parameters"].push_back(entry);
    for (double x : p.tensor.data()) put(weights, static_cast<float>(x));
  }
  manifest["bytes"] = weights.size();
  write_file(dir / "manifest.json", dump(manifest));
  write_file(dir / "weights.bin", weights);

  std::string opt(kOptimizerMagic, sizeof(kOptimizerMagic));
  put<std::uint64_t>(opt, ck.optimizer.step);
  put<std::uint64_t>(opt, ck.optimizer.m.size());
  for (const auto& [name, m] : ck.optimizer.m) {
    const auto& v = ck.optimizer.v.at(name);
    put<std::uint32_t>(opt, static_cast<std::uint32_t>(name.size()));
    opt += name;
    put<std::uint64_t>(opt, m.size());
    for (double x : m) put(opt, x);
    for (double x : v) put(opt, x);
  }
  write_file(dir / "optimizer.bin", opt);

  nlohmann::ordered_json rng;
  rng["engine"] = "mt19937_64";
  rng["state"] = ck.rng_state;
  write_file(dir / "rng.json", dump(rng));

  write_file(dir / "vocab.tsv", ck.vocab.to_tsv());
  if (ck.tokenizer) {
    ck.tokenizer->write_tsv(dir / "tokenizer.tsv");
  } else {
    std::filesystem::remove(dir / "tokenizer.tsv", ec);
  }
}

Checkpoint load_checkpoint(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw IoError("checkpoint directory not found: " + dir.string());
  Checkpoint ck;
  const Json config = read_json(dir / "config.json");
  if (config.value("format", "") != kFormat || config.value("version", 0) != kVersion) {
    throw FormatError((dir / "config.json").string() + ": not a version " + std::to_string(kVersion) + " checkpoint");
  }
  ck.model_config = model_config_from_json(config.at("model"));
  // Parsed again in insertion order so the snapshot re-serializes identically.
  const auto ordered = nlohmann::ordered_json::parse(read_file(dir / "config.json"));
  ck.train_config = ordered.value("train", nlohmann::ordered_json::object());
  ck.epoch = config.at("epoch").get<std::uint64_t>();
  ck.step = config.at("step").get<std::uint64_t>();

  const auto manifest_path = (dir / "manifest.json").string();
  const Json manifest = read_json(dir / "manifest.json");
  const std::string weights = read_file(dir / "weights.bin");
  if (manifest.value("dtype", "") != "f32-le") throw FormatError(manifest_path + ": unsupported dtype");
  std::size_t offset = 0;
  for (const auto& entry : manifest.at("parameters")) {
    const std::string name = entry.at("name").get<std::string>();
    const Shape shape = entry.at("shape").get<Shape>();
    if (entry.at("offset").get<std::size_t>() != offset) throw FormatError(manifest_path + ": bad offset for " + name);
    const std::size_t n = shape_numel(shape);
    if (offset + n * sizeof(float) > weights.size()) throw FormatError("weights.bin is shorter than the manifest");
    std::vector<double> values(n);
    for (std::size_t i = 0; i < n; ++i) {
      float f;
      std::memcpy(&f, weights.data() + offset + i * sizeof(float), sizeof(float));
      values[i] = f;
    }
    offset += n * sizeof(float);
    ck.params.add(name, Tensor::from(shape, std::move(values)), entry.at("frozen").get<bool>());
  }
  if (offset != weights.size()) throw FormatError("weights.bin is longer than the manifest");

  Reader opt(read_file(dir / "optimizer.bin"), (dir / "optimizer.bin").string());
  if (opt.get_string(sizeof(kOptimizerMagic)) != std::string(kOptimizerMagic, sizeof(kOptimizerMagic))) {
    throw FormatError((dir / "optimizer.bin").string() + ": bad magic");
  }
  ck.optimizer.step = opt.get<std::uint64_t>();
  const auto count = opt.get<std::uint64_t>();
  for (std::uint64_t e = 0; e < count; ++e) {
    const std::string name = opt.get_string(opt.get<std::uint32_t>());
    const auto n = opt.get<std::uint64_t>();
    std::vector<double> m(n), v(n);
    for (auto& x : m) x = opt.get<double>();
    for (auto& x : v) x = opt.get<double>();
    ck.optimizer.m.emplace(name, std::move(m));
    ck.optimizer.v.emplace(name, std::move(v));
  }
  if (!opt.done()) throw FormatError((dir / "optimizer.bin").string() + ": trailing bytes");

  ck.rng_state = read_json(dir / "rng.json").at("state").get<std::string>();
  ck.vocab = TagVocabulary::read_tsv(dir / "vocab.tsv");
  if (std::filesystem::exists(dir / "tokenizer.tsv")) ck.tokenizer = CaptionTokenizer::read_tsv(dir / "tokenizer.tsv");
  return ck;
}

Model model_from_checkpoint(const Checkpoint& checkpoint) {
  return Model(checkpoint.model_config, checkpoint.vocab, checkpoint.params);
}

}  // namespace surgtag
