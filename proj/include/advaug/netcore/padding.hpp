#pragma once

#include <utility>

#include "advaug/image.hpp"

namespace advaug::net {

// Padding added by pad_to_multiple; crop() with the same record undoes it.
struct CropRecord {
  int pad_top = 0;
  int pad_bottom = 0;
  int pad_left = 0;
  int pad_right = 0;

  bool is_zero() const { return pad_top == 0 && pad_bottom == 0 && pad_left == 0 && pad_right == 0; }
  friend bool operator==(const CropRecord&, const CropRecord&) = default;
};

// Reflect-pads on the bottom and right so both dimensions become multiples of `factor`.
std::pair<Image, CropRecord> pad_to_multiple(const Image& image, int factor = 8);

Image crop(const Image& padded, const CropRecord& record);

// Mirror index into [0, n) without repeating the edge pixel; any offset is valid.
int reflect_index(int i, int n);

}  // namespace advaug::net
