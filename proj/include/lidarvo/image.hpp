#pragma once

#include <cstdint>
#include <vector>

#include "lidarvo/error.hpp"

namespace lidarvo {

/// 8-bit single-channel image, row-major. Used for grayscale frames and for
/// semantic label images (pixel value = class id).
struct GrayImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> data;

  GrayImage() = default;
  GrayImage(int w, int h, std::uint8_t fill = 0)
      : width(w), height(h), data(static_cast<std::size_t>(w) * static_cast<std::size_t>(h), fill) {
    if (w < 0 || h < 0) throw Error("negative image size");
  }

  bool empty() const noexcept { return data.empty(); }
  bool inside(int x, int y) const noexcept { return x >= 0 && y >= 0 && x < width && y < height; }
  std::uint8_t& at(int x, int y) { return data[static_cast<std::size_t>(y) * width + x]; }
  std::uint8_t at(int x, int y) const { return data[static_cast<std::size_t>(y) * width + x]; }
};

}  // namespace lidarvo
