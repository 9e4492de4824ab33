#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

namespace surgtag {

/// Lowercase hex SHA-256 of a byte string.
std::string sha256_hex(std::string_view bytes);
/// SHA-256 of a file's bytes; for a directory, of the sorted list of
/// "relative-path<TAB>file-digest" lines of every regular file inside it.
std::string sha256_path(const std::filesystem::path& path);

/// Provenance record written next to every command output.
class RunManifest {
 public:
  RunManifest(std::string command, std::uint64_t seed);

  /// Digest of the effective configuration text (flags + config file).
  void set_config(const std::string& effective_config);
  void add_input(const std::filesystem::path& path);
  void add_output(const std::filesystem::path& path);
  void finish();

  nlohmann::ordered_json to_json() const;
  void write(const std::filesystem::path& path) const;

 private:
  std::string command_;
  std::uint64_t seed_;
  std::string config_digest_;
  std::vector<std::pair<std::string, std::string>> inputs_;
  std::vector<std::pair<std::string, std::string>> outputs_;
  std::string started_at_;
  std::string finished_at_;
};

/// Library version string.
const char* version();

}  // namespace surgtag
