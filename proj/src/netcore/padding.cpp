#include "advaug/netcore/padding.hpp"

#include "advaug/errors.hpp"

namespace advaug::net {

int reflect_index(int i, int n) {
  if (n == 1) return 0;
  const int period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}

std::pair<Image, CropRecord> pad_to_multiple(const Image& image, int factor) {
  if (image.empty()) throw PreconditionError("cannot pad an empty image");
  if (factor <= 0) throw PreconditionError("padding factor must be positive");
  CropRecord rec;
  rec.pad_bottom = (factor - image.height % factor) % factor;
  rec.pad_right = (factor - image.width % factor) % factor;
  if (rec.is_zero()) return {image, rec};
  Image out(image.height + rec.pad_bottom, image.width + rec.pad_right);
  for (int y = 0; y < out.height; ++y) {
    const int sy = reflect_index(y, image.height);
    for (int x = 0; x < out.width; ++x) out.at(y, x) = image.at(sy, reflect_index(x, image.width));
  }
  return {std::move(out), rec};
}

Image crop(const Image& padded, const CropRecord& rec) {
  const int h = padded.height - rec.pad_top - rec.pad_bottom;
  const int w = padded.width - rec.pad_left - rec.pad_right;
  if (h <= 0 || w <= 0) throw PreconditionError("crop record removes the whole image");
  Image out(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) out.at(y, x) = padded.at(y + rec.pad_top, x + rec.pad_left);
  return out;
}

}  // namespace advaug::net
