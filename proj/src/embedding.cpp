#include "surgtag/embedding.hpp"

#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>

#include "surgtag/errors.hpp"
#include "surgtag/vocabulary.hpp"

namespace surgtag {

namespace {

std::uint64_t fnv1a(std::string_view bytes, std::uint64_t seed) {
  std::uint64_t h = 0xcbf29ce484222325ULL ^ seed;
  for (char c : bytes) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  // splitmix64 finalizer spreads the low bits used for bucketing
  h ^= h >> 30;
  h *= 0xbf58476d1ce4e5b9ULL;
  h ^= h >> 27;
  h *= 0x94d049bb133111ebULL;
  h ^= h >> 31;
  return h;
}

constexpr std::uint64_t kBucketSeed = 0x5eed0001ULL;
constexpr std::uint64_t kSignSeed = 0x5eed0002ULL;

void normalize_in_place(std::vector<float>& v) {
  double norm = 0.0;
  for (float x : v) norm += static_cast<double>(x) * x;
  norm = std::sqrt(norm);
  // already unit length at f32 precision: keep the bits so save/load is exact
  if (norm == 0.0) throw ValidationError("embedding vector has zero norm");
  if (std::abs(norm - 1.0) < 1e-7) return;
  for (float& x : v) x = static_cast<float>(x / norm);
}

std::string format_float(float v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

}  // namespace

std::vector<float> hashed_embedding(std::string_view normalized, std::size_t dim) {
  const std::string padded = "<" + std::string(normalized) + ">";
  std::vector<double> acc(dim, 0.0);
  for (std::size_t i = 0; i + 3 <= padded.size(); ++i) {
    const std::string_view tri(padded.data() + i, 3);
    const std::size_t bucket = fnv1a(tri, kBucketSeed) % dim;
    const double sign = (fnv1a(tri, kSignSeed) >> 63) ? -1.0 : 1.0;
    acc[bucket] += sign;
  }
  double norm = 0.0;
  for (double x : acc) norm += x * x;
  if (norm == 0.0) {
    // every trigram cancelled; fall back to one bucket of the whole string
    acc[fnv1a(padded, kBucketSeed) % dim] = 1.0;
    norm = 1.0;
  }
  norm = std::sqrt(norm);
  std::vector<float> out(dim);
  for (std::size_t i = 0; i < dim; ++i) out[i] = static_cast<float>(acc[i] / norm);
  return out;
}

double cosine_similarity(const std::vector<float>& a, const std::vector<float>& b) {
  if (a.size() != b.size()) throw ValidationError("cosine_similarity: dim mismatch");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += static_cast<double>(a[i]) * b[i];
    na += static_cast<double>(a[i]) * a[i];
    nb += static_cast<double>(b[i]) * b[i];
  }
  return dot / std::sqrt(na * nb);
}

TagEmbeddingTable::TagEmbeddingTable(std::size_t dim) : dim_(dim) {
  if (dim == 0) throw ConfigError("embedding dim must be positive");
}

std::vector<float> TagEmbeddingTable::embed(std::string_view name) const {
  const std::string key = normalize_tag(name);
  if (key.empty()) throw ValidationError("cannot embed an empty tag name");
  auto it = entries_.find(key);
  if (it != entries_.end()) return it->second;
  return hashed_embedding(key, dim_);
}

void TagEmbeddingTable::set(std::string_view name, std::vector<float> vector) {
  const std::string key = normalize_tag(name);
  if (key.empty()) throw ValidationError("cannot store an empty tag name");
  if (vector.size() != dim_) throw ValidationError("embedding for '" + key + "' has wrong dim");
  normalize_in_place(vector);
  entries_[key] = std::move(vector);
  provider_ = ProviderId::file;
}

TagEmbeddingTable TagEmbeddingTable::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open embedding table: " + path.string());
  std::string line;
  if (!std::getline(in, line) || line.rfind("#dim=", 0) != 0) {
    throw FormatError(path.string() + ":1: expected '#dim=<D>' header");
  }
  std::size_t dim = 0;
  const char* begin = line.data() + 5;
  const char* end = line.data() + line.size();
  if (std::from_chars(begin, end, dim).ec != std::errc() || dim == 0) {
    throw FormatError(path.string() + ":1: invalid dim in header");
  }
  TagEmbeddingTable table(dim);
  table.provider_ = ProviderId::file;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw FormatError(path.string() + ":" + std::to_string(line_no) + ": missing tab");
    std::vector<float> values;
    std::stringstream ss(line.substr(tab + 1));
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      float v = 0.0f;
      auto res = std::from_chars(cell.data(), cell.data() + cell.size(), v);
      if (res.ec != std::errc() || res.ptr != cell.data() + cell.size()) {
        throw FormatError(path.string() + ":" + std::to_string(line_no) + ": invalid number '" + cell + "'");
      }
      values.push_back(v);
    }
    if (values.size() != dim) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": expected " + std::to_string(dim) +
                        " values, got " + std::to_string(values.size()));
    }
    try {
      table.set(line.substr(0, tab), std::move(values));
    } catch (const ValidationError& e) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return table;
}

void TagEmbeddingTable::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write embedding table: " + path.string());
  out << "#dim=" << dim_ << "\n";
  for (const auto& [name, vec] : entries_) {
    out << name << '\t';
    for (std::size_t i = 0; i < vec.size(); ++i) out << (i ? "," : "") << format_float(vec[i]);
    out << '\n';
  }
  if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace surgtag
