#include "surgtag/run_manifest.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <ctime>
#include <fstream>
#include <memory>

#include "surgtag/errors.hpp"

#ifndef SURGTAG_VERSION
#define SURGTAG_VERSION "0.0.0"
#endif

namespace surgtag {

namespace {

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string read_all(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

const char* version() { return SURGTAG_VERSION; }

std::string sha256_hex(std::string_view bytes) {
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1 ||
      EVP_DigestUpdate(ctx.get(), bytes.data(), bytes.size()) != 1 ||
      EVP_DigestFinal_ex(ctx.get(), digest, &len) != 1) {
    throw Error("sha256 failed");
  }
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(hex[digest[i] >> 4]);
    out.push_back(hex[digest[i] & 15]);
  }
  return out;
}

std::string sha256_path(const std::filesystem::path& path) {
  if (!std::filesystem::is_directory(path)) return sha256_hex(read_all(path));
  std::vector<std::string> lines;
  for (const auto& entry : std::filesystem::recursive_directory_iterator(path)) {
    if (!entry.is_regular_file()) continue;
    lines.push_back(std::filesystem::relative(entry.path(), path).generic_string() + "\t" +
                    sha256_hex(read_all(entry.path())));
  }
  std::sort(lines.begin(), lines.end());
  std::string joined;
  for (const auto& l : lines) joined += l + "\n";
  return sha256_hex(joined);
}

RunManifest::RunManifest(std::string command, std::uint64_t seed)
    : command_(std::move(command)), seed_(seed), started_at_(utc_now()) {}

void RunManifest::set_config(const std::string& effective_config) { config_digest_ = sha256_hex(effective_config); }

void RunManifest::add_input(const std::filesystem::path& path) { inputs_.emplace_back(path.string(), sha256_path(path)); }

void RunManifest::add_output(const std::filesystem::path& path) {
  outputs_.emplace_back(path.string(), sha256_path(path));
}

void RunManifest::finish() { finished_at_ = utc_now(); }

nlohmann::ordered_json RunManifest::to_json() const {
  nlohmann::ordered_json j;
  j["command"] = command_;
  j["tool_version"] = version();
  j["seed"] = seed_;
  j["config_digest"] = config_digest_;
  auto list = [](const auto& items) {
    nlohmann::ordered_json arr = nlohmann::ordered_json::array();
    for (const auto& [p, d] : items) arr.push_back({{"path", p}, {"sha256", d}});
    return arr;
  };
  j["inputs"] = list(inputs_);
  j["outputs"] = list(outputs_);
  j["started_at"] = started_at_;
  j["finished_at"] = finished_at_;
  return j;
}

void RunManifest::write(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write run manifest: " + path.string());
  out << to_json().dump(2) << '\n';
  if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace surgtag
