#include "surgtag/image.hpp"

#include <bit>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "surgtag/errors.hpp"

namespace surgtag {

namespace {

static_assert(std::endian::native == std::endian::little, "raw tensor I/O assumes a little-endian host");

std::string read_all(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open image: " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

// Next whitespace-delimited header token, skipping '#' comments.
std::string pnm_token(const std::string& bytes, std::size_t& pos, const std::filesystem::path& path) {
  while (pos < bytes.size()) {
    if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
      ++pos;
    } else if (bytes[pos] == '#') {
      while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
    } else {
      break;
    }
  }
  const std::size_t start = pos;
  while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
  if (start == pos) throw FormatError("truncated PNM header: " + path.string());
  return bytes.substr(start, pos - start);
}

ImageRaster parse_pnm(const std::string& bytes, const std::filesystem::path& path) {
  std::size_t pos = 0;
  const std::string magic = pnm_token(bytes, pos, path);
  std::size_t channels = 0;
  if (magic == "P5") {
    channels = 1;
  } else if (magic == "P6") {
    channels = 3;
  } else {
    throw FormatError("unsupported PNM magic '" + magic + "' in " + path.string());
  }
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t maxval = 0;
  try {
    width = std::stoul(pnm_token(bytes, pos, path));
    height = std::stoul(pnm_token(bytes, pos, path));
    maxval = std::stoul(pnm_token(bytes, pos, path));
  } catch (const std::logic_error&) {
    throw FormatError("invalid PNM header in " + path.string());
  }
  if (maxval != 255) throw FormatError("PNM maxval must be 255 in " + path.string());
  ++pos;  // single whitespace byte after maxval
  ImageRaster img = ImageRaster::blank(height, width, channels);
  if (bytes.size() < pos + img.pixels.size()) throw FormatError("truncated PNM data in " + path.string());
  for (std::size_t i = 0; i < img.pixels.size(); ++i) {
    img.pixels[i] = static_cast<float>(static_cast<unsigned char>(bytes[pos + i])) / 255.0f;
  }
  return img;
}

template <typename T>
T read_le(const std::string& bytes, std::size_t& pos, const std::filesystem::path& path) {
  if (pos + sizeof(T) > bytes.size()) throw FormatError("truncated raw tensor file: " + path.string());
  T v;
  std::memcpy(&v, bytes.data() + pos, sizeof(T));
  pos += sizeof(T);
  return v;
}

}  // namespace

ImageRaster ImageRaster::blank(std::size_t height, std::size_t width, std::size_t channels) {
  ImageRaster img;
  img.height = height;
  img.width = width;
  img.channels = channels;
  img.pixels.assign(height * width * channels, 0.0f);
  return img;
}

void ImageRaster::validate() const {
  if (height == 0 || width == 0) throw ValidationError("image has zero size");
  if (channels != 1 && channels != 3) throw ValidationError("image must have 1 or 3 channels, got " + std::to_string(channels));
  if (pixels.size() != height * width * channels) throw ValidationError("image pixel count does not match its dims");
  for (float p : pixels) {
    if (!std::isfinite(p) || p < 0.0f || p > 1.0f) throw ValidationError("image pixels must be finite and in [0,1]");
  }
}

void write_raw_tensor(const std::filesystem::path& path, const Shape& shape, const std::vector<float>& values) {
  if (shape.size() > 255) throw ValidationError("raw tensor rank too large");
  if (shape_numel(shape) != values.size()) throw DimensionError("raw tensor shape does not match value count");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out.write("RT01", 4);
  const auto ndim = static_cast<std::uint8_t>(shape.size());
  out.write(reinterpret_cast<const char*>(&ndim), 1);
  for (std::size_t d : shape) {
    const auto d32 = static_cast<std::uint32_t>(d);
    out.write(reinterpret_cast<const char*>(&d32), 4);
  }
  out.write(reinterpret_cast<const char*>(values.data()), static_cast<std::streamsize>(values.size() * sizeof(float)));
  if (!out) throw IoError("write failed: " + path.string());
}

std::pair<Shape, std::vector<float>> read_raw_tensor(const std::filesystem::path& path) {
  const std::string bytes = read_all(path);
  if (bytes.size() < 5 || bytes.compare(0, 4, "RT01") != 0) throw FormatError("missing RT01 magic in " + path.string());
  std::size_t pos = 4;
  const auto ndim = read_le<std::uint8_t>(bytes, pos, path);
  Shape shape;
  for (std::size_t i = 0; i < ndim; ++i) shape.push_back(read_le<std::uint32_t>(bytes, pos, path));
  const std::size_t n = shape_numel(shape);
  if (bytes.size() != pos + n * sizeof(float)) throw FormatError("raw tensor payload size mismatch in " + path.string());
  std::vector<float> values(n);
  std::memcpy(values.data(), bytes.data() + pos, n * sizeof(float));
  return {shape, values};
}

ImageRaster read_image(const std::filesystem::path& path) {
  ImageRaster img;
  if (path.extension() == ".rt") {
    auto [shape, values] = read_raw_tensor(path);
    if (shape.size() != 2 && shape.size() != 3) throw FormatError("raw image must be [H,W] or [H,W,C]: " + path.string());
    img.height = shape[0];
    img.width = shape[1];
    img.channels = shape.size() == 3 ? shape[2] : 1;
    img.pixels = std::move(values);
  } else {
    img = parse_pnm(read_all(path), path);
  }
  try {
    img.validate();
  } catch (const ValidationError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  return img;
}

void write_pnm(const ImageRaster& image, const std::filesystem::path& path) {
  image.validate();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << (image.channels == 1 ? "P5" : "P6") << '\n' << image.width << ' ' << image.height << "\n255\n";
  for (float p : image.pixels) out.put(static_cast<char>(static_cast<unsigned char>(std::lround(p * 255.0f))));
  if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace surgtag
