#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "advaug/image.hpp"

namespace advaug::data {

struct NamedImage {
  std::string name;
  Image image;
};

// Aligned rough (x) / clean (y*) drawing pair.
struct ImagePair {
  std::string name;
  Image x;
  Image y;
};

// The three sample pools: supervised pairs, rough-only inputs and clean-only outputs.
struct DatasetPools {
  std::vector<ImagePair> supervised;
  std::vector<NamedImage> rough_only;
  std::vector<NamedImage> clean_only;
  // Mean pixel of the supervised inputs, subtracted from every network input.
  double input_mean = 0.0;
  // Inputs and targets swapped for pencil-drawing generation; target thresholding is off.
  bool pencil_mode = false;
};

// Mean over every pixel of every supervised input (0 when there are none).
double supervised_input_mean(const DatasetPools& pools);

// Layout:
//   root/pairs/rough/<stem>.<ext>   root/pairs/clean/<stem>.<ext>   (matched by stem)
//   root/rough/*.<ext>              root/clean/*.<ext>              (optional)
// Files are read in lexicographic order of their names.
DatasetPools load_dataset(const std::filesystem::path& root);

// Writes the pools in the load_dataset layout as 8-bit PNGs.
void save_dataset(const DatasetPools& pools, const std::filesystem::path& root);

// Reverses every supervised pair (clean becomes the input), recomputes the
// input mean and toggles pencil mode. Unsupervised pools are dropped unless
// `keep_unsupervised` is set.
DatasetPools swap_for_pencil_mode(const DatasetPools& pools, bool keep_unsupervised = false);

enum class SketchStyle { Curves, Geometric };

std::string to_string(SketchStyle style);
SketchStyle parse_sketch_style(const std::string& name);

// Parameters of the synthetic rough/clean drawing generator.
struct SyntheticSketchSpec {
  int canvas = 128;
  int min_strokes = 3;
  int max_strokes = 7;
  double stroke_width = 1.6;
  // Standard deviation (pixels) of the control-point jitter of each rough copy.
  double jitter = 1.6;
  // Rough strokes drawn per clean stroke.
  int overdraw = 3;
  // Lightest ink level of a rough copy (1 = black); copies draw in [pencil_tone, 1].
  double pencil_tone = 0.45;
  // Faint straight guide lines added to each rough drawing.
  int construction_lines = 2;
  // Fraction of pixels hit by graphite speckle, plus proportional paper grain.
  double noise_density = 0.01;
  SketchStyle style = SketchStyle::Curves;
};

// Deterministic in (spec, counts, seed). Unsupervised pools are drawn from
// independent streams, so they never share a drawing with the pairs.
DatasetPools generate_synthetic(const SyntheticSketchSpec& spec, int n_pairs, int n_rough, int n_clean,
                                std::uint64_t seed);

// One synthetic clean drawing and its rough counterpart.
ImagePair synthesize_pair(const SyntheticSketchSpec& spec, std::uint64_t seed);

}  // namespace advaug::data
