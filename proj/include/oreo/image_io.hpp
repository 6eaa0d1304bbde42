#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <vector>

namespace oreo {

/// 8-bit grayscale raster, row-major.
struct Raster8 {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> pixels;

  std::uint8_t at(int y, int x) const { return pixels[static_cast<size_t>(y) * width + x]; }
};

class ImageIoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Binary PGM (P5, maxval 255).
void write_pgm(const std::filesystem::path& path, const Raster8& image);
Raster8 read_pgm(const std::filesystem::path& path);

/// Any PNG, converted to 8-bit grayscale on load.
Raster8 read_png(const std::filesystem::path& path);

/// Dispatches on file signature (P5 or PNG).
Raster8 read_image(const std::filesystem::path& path);

}  // namespace oreo
