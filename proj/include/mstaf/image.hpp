#pragma once
// Planar float images and the binary Netpbm formats (P5 grayscale, P6 color).

#include <cstdint>
#include <filesystem>
#include <vector>

namespace mstaf {

struct Image {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<float> data;  // [C, H, W], values in [0, 1]

  Image() = default;
  Image(int c, int h, int w, float fill = 0.0f)
      : channels(c), height(h), width(w), data(static_cast<std::size_t>(c) * h * w, fill) {}

  std::size_t plane() const { return static_cast<std::size_t>(height) * width; }
  float& at(int c, int y, int x) { return data[c * plane() + static_cast<std::size_t>(y) * width + x]; }
  float at(int c, int y, int x) const { return data[c * plane() + static_cast<std::size_t>(y) * width + x]; }
  bool same_size(const Image& o) const { return height == o.height && width == o.width; }
};

// Reads P5/P6 (maxval up to 65535). Throws DataError on anything else.
Image read_pnm(const std::filesystem::path& path);
// One channel -> P5, three -> P6, 8-bit, values rounded and clamped.
void write_pnm(const std::filesystem::path& path, const Image& image);

// Bilinear, half-pixel centers (matches upsample2x_bilinear at factor 2).
Image resize_bilinear(const Image& image, int height, int width);
// Nearest neighbour, for masks.
Image resize_nearest(const Image& image, int height, int width);

// Grayscale -> 3 identical channels; 3 channels pass through.
Image to_rgb(const Image& image);

// Every value is exactly 0 or 1.
bool is_binary(const Image& mask);
std::int64_t count_ones(const Image& mask);

}  // namespace mstaf
