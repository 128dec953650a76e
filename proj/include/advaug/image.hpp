#pragma once

#include <cstddef>
#include <stdexcept>
#include <vector>

namespace advaug {

// Single-channel raster with values in [0,1]; 0 is ink, 1 is paper.
struct Image {
  int height = 0;
  int width = 0;
  std::vector<float> pixels;

  Image() = default;
  Image(int h, int w, float fill = 1.0f)
      : height(h), width(w), pixels(static_cast<std::size_t>(h) * static_cast<std::size_t>(w), fill) {
    if (h < 0 || w < 0) throw std::invalid_argument("negative image size");
  }

  bool empty() const { return pixels.empty(); }
  std::size_t size() const { return pixels.size(); }

  float& at(int y, int x) { return pixels[static_cast<std::size_t>(y) * width + x]; }
  float at(int y, int x) const { return pixels[static_cast<std::size_t>(y) * width + x]; }

  bool same_size(const Image& other) const { return height == other.height && width == other.width; }
  friend bool operator==(const Image&, const Image&) = default;
};

double mean_pixel(const Image& image);

}  // namespace advaug
