#pragma once

#include <cstdint>
#include <vector>

namespace cyctr {

// Strictly binary segmentation mask.
struct BinaryMask {
  int64_t height = 0;
  int64_t width = 0;
  std::vector<uint8_t> data;  // row-major, values 0/1

  BinaryMask() = default;
  BinaryMask(int64_t h, int64_t w, uint8_t fill = 0)
      : height(h), width(w), data(static_cast<size_t>(h * w), fill) {}

  uint8_t at(int64_t y, int64_t x) const { return data[static_cast<size_t>(y * width + x)]; }
  void set(int64_t y, int64_t x, uint8_t v) { data[static_cast<size_t>(y * width + x)] = v; }
  int64_t foreground_count() const {
    int64_t n = 0;
    for (uint8_t v : data) n += v;
    return n;
  }
  bool operator==(const BinaryMask& o) const {
    return height == o.height && width == o.width && data == o.data;
  }
};

// Block-majority downsample to the feature grid: a cell is foreground when
// at least half of its factor x factor pixels are.
BinaryMask downsample_mask(const BinaryMask& m, int64_t factor);

}  // namespace cyctr
