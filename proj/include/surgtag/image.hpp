#pragma once

#include <cstddef>
#include <filesystem>
#include <vector>

#include "surgtag/tensor.hpp"

namespace surgtag {

/// Row-major raster with interleaved channels, values in [0, 1].
struct ImageRaster {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 1;
  std::vector<float> pixels;

  float at(std::size_t y, std::size_t x, std::size_t c = 0) const { return pixels[(y * width + x) * channels + c]; }
  float& at(std::size_t y, std::size_t x, std::size_t c = 0) { return pixels[(y * width + x) * channels + c]; }

  static ImageRaster blank(std::size_t height, std::size_t width, std::size_t channels = 1);
  /// Throws ValidationError unless dims/channels are sane and pixels are finite in [0, 1].
  void validate() const;
};

/// Loads binary PGM/PPM (P5/P6, maxval 255) or the raw tensor format (.rt).
ImageRaster read_image(const std::filesystem::path& path);
void write_pnm(const ImageRaster& image, const std::filesystem::path& path);

/// Raw tensor file: "RT01", u8 ndim, u32-LE dims, f32-LE data. Images are
/// stored as [H, W] or [H, W, C].
void write_raw_tensor(const std::filesystem::path& path, const Shape& shape, const std::vector<float>& values);
std::pair<Shape, std::vector<float>> read_raw_tensor(const std::filesystem::path& path);

}  // namespace surgtag
