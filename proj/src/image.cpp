#include "advaug/image.hpp"

namespace advaug {

double mean_pixel(const Image& image) {
  if (image.empty()) return 0.0;
  double sum = 0.0;
  for (float v : image.pixels) sum += v;
  return sum / static_cast<double>(image.size());
}

}  // namespace advaug
