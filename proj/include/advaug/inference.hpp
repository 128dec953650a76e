#pragma once

#include <cstdint>
#include <vector>

#include "advaug/data/dataset.hpp"
#include "advaug/image.hpp"
#include "advaug/netcore/network.hpp"
#include "advaug/trainer/checkpoint.hpp"

namespace advaug::infer {

struct TilingOptions {
  bool enabled = false;
  // Largest tile side including context, in pixels.
  int tile = 512;
  // Context kept around each tile's interior; negative selects the
  // receptive-field radius plus 8.
  int overlap = -1;
};

struct InferenceOptions {
  bool apply_threshold = false;
  double threshold = 0.9;
  TilingOptions tiling;
  // Untiled inputs above this many pixels are rejected.
  std::int64_t max_pixels = 2048LL * 2048LL;
};

// Mean-subtract with `input_mean`, reflect-pad to a multiple of 8, eval-mode
// forward, crop back. Any model works; callers pass folded ones.
Image predict(const net::Model<float>& model, double input_mean, const Image& image);

// The checkpoint's S (folded first when needed) applied to `image`.
Image simplify(const train::Checkpoint& checkpoint, const Image& image, const InferenceOptions& options = {});

// simplify for a checkpoint trained in pencil mode; thresholding stays off
// unless requested. Raises ConfigError for other checkpoints.
Image pencil_generate(const train::Checkpoint& checkpoint, const Image& clean, const InferenceOptions& options = {});

// Half the receptive field of S's output, rounded up.
int receptive_radius(const net::NetworkSpec& spec);

// Independent tiles aligned to the network's stride, stitched from their
// interiors. Raises ConfigError when the overlap is below receptive_radius.
Image tiled_forward(const train::Checkpoint& checkpoint, const Image& image, const InferenceOptions& options = {});
Image tiled_predict(const net::Model<float>& model, double input_mean, const Image& image,
                    const TilingOptions& tiling);

// Fraction of pixels strictly inside (low, high), compared at pixel precision.
double midtone_fraction(const Image& image, double low = 0.1, double high = 0.9);

// Mid-tone fraction over the pixels within `radius` (Euclidean) of a stroke
// pixel (< ink_level) of `reference`.
double midtone_near_strokes(const Image& output, const Image& reference, double radius = 2.0,
                            double ink_level = 0.5, double low = 0.1, double high = 0.9);

struct SingleImageOptConfig {
  int steps = 100;
  double beta = 8e-5;
  bool non_saturating = false;
  int patch_size = 64;
  // Patches per step from the target image and from the clean pool.
  int rough_count = 4;
  int clean_count = 4;
  // Supervised pairs per step, kept for the model-loss anchor of the objective.
  int supervised_count = 4;
  std::uint64_t seed = 1;
  // Clean pool; empty takes the supervised targets of the pools.
  std::vector<Image> clean_pool;
};

struct SingleImageResult {
  Image prediction;
  train::Checkpoint adapted;
  // beta * mean log(1 - D(S(x))) over crops of the target, all with the
  // final D in eval mode: S before adaptation and after it.
  double fake_term_before = 0.0;
  double fake_term_after = 0.0;
};

// Fine-tunes a copy of the checkpoint on one image (alpha = 0, the image as
// the entire rough pool). `base` is never modified.
SingleImageResult single_image_optimize(const train::Checkpoint& base, const Image& target,
                                        const data::DatasetPools& pools, const SingleImageOptConfig& config);

// beta * mean log(1 - D(S(x))) over the non-overlapping patch_size crops of `image`.
double unsupervised_fake_term(const net::Model<float>& simplifier, const net::Model<float>& discriminator,
                              double input_mean, const Image& image, double beta);

}  // namespace advaug::infer
