#pragma once

#include <condition_variable>
#include <cstdint>
#include <deque>
#include <mutex>
#include <thread>
#include <vector>

#include "advaug/data/dataset.hpp"
#include "advaug/random.hpp"
#include "advaug/tensor.hpp"

namespace advaug::data {

struct AugmentationConfig {
  int patch_size = 384;
  // Extra downsampling factors; the original scale (1) is always included.
  std::vector<double> downsample_levels = {7.0 / 6, 8.0 / 6, 9.0 / 6, 10.0 / 6, 11.0 / 6, 12.0 / 6, 13.0 / 6, 14.0 / 6};
  double threshold = 0.9;
  double identity_probability = 0.10;
  bool rotate_flip = true;
  bool size_weighted = true;

  // Throws ConfigError when a field is out of range.
  void validate() const;
};

enum class Pool { Supervised, Rough, Clean };

// Everything needed to reproduce a patch from its source image.
struct PatchTransform {
  std::size_t image_index = 0;
  double level = 1.0;  // downsampling factor
  int rotation = 0;    // counter-clockwise quarter turns, applied after the flip
  bool flip = false;   // horizontal mirror
  int crop_y = 0;      // window origin in the scaled, flipped and rotated frame
  int crop_x = 0;
};

// Scaled extent of one axis: floor(extent / level).
int scaled_extent(int extent, double level);

// Area-averaged resampling, flip, rotation and crop of `patch_size` pixels,
// evaluated only over the crop window.
Image apply_transform(const Image& source, const PatchTransform& t, int patch_size);

// For the supervised pool `x` and `y` are the aligned pair; for the rough pool
// only `x` is set, for the clean pool only `y`. Neither is thresholded nor centred.
struct PatchSample {
  Image x;
  Image y;
  PatchTransform transform;
};

// Draws the image (proportional to pixel area when size_weighted), the level
// (uniform over the levels at which that image still holds a patch), the
// transform and the crop window, in that order.
PatchSample sample_patch(const DatasetPools& pools, Pool pool, const AugmentationConfig& aug, Rng& rng);

// The random choices of sample_patch without rendering the patch.
PatchTransform draw_transform(const DatasetPools& pools, Pool pool, const AugmentationConfig& aug, Rng& rng);

// Selection probability of every image in a pool (0 for images too small at every level).
std::vector<double> image_probabilities(const DatasetPools& pools, Pool pool, const AugmentationConfig& aug);

// Pixels strictly below `threshold` become 0.
Image threshold_target(const Image& patch, double threshold);
Image subtract_mean(const Image& patch, double mean);
Image add_mean(const Image& patch, double mean);

struct BatchComposition {
  int supervised = 16;
  int unsup_rough = 16;
  int unsup_clean = 16;
};

// Patch stacks in the network layout {1, count, P, P}. Inputs are
// mean-subtracted; targets and clean patches are thresholded (except in
// pencil mode) and never centred.
struct Batch {
  Tensor<float> supervised_x;
  Tensor<float> supervised_y;
  Tensor<float> unsup_x;
  Tensor<float> unsup_y;
  std::vector<bool> injected;  // per supervised slot: the pair was replaced by (y*, y*)
  std::vector<PatchTransform> supervised_transforms;
  double input_mean = 0.0;

  int supervised_count() const { return supervised_x.batch(); }
  int rough_count() const { return unsup_x.batch(); }
  int clean_count() const { return unsup_y.batch(); }
};

// Fills the supervised slots (with identity injection), then the rough and
// clean slots, all from `rng`. Throws ConfigError when a requested pool is empty.
Batch make_batch(const DatasetPools& pools, const BatchComposition& composition, const AugmentationConfig& aug,
                 Rng& rng);

// The batch of a given iteration: make_batch with a generator derived from (seed, iteration).
Batch batch_for_iteration(const DatasetPools& pools, const BatchComposition& composition,
                          const AugmentationConfig& aug, std::uint64_t seed, std::int64_t iteration);

Image tensor_slice(const Tensor<float>& stack, int index);
Tensor<float> stack_images(const std::vector<Image>& images);

// Produces batch_for_iteration(first), (first + 1), ... on a worker thread
// with at most `depth` batches in flight. The sequence does not depend on depth.
class BatchPrefetcher {
 public:
  BatchPrefetcher(const DatasetPools& pools, BatchComposition composition, AugmentationConfig aug,
                  std::uint64_t seed, std::int64_t first, std::int64_t end, std::size_t depth = 2);
  ~BatchPrefetcher();
  BatchPrefetcher(const BatchPrefetcher&) = delete;
  BatchPrefetcher& operator=(const BatchPrefetcher&) = delete;

  // Next batch in iteration order; rethrows a failure of the worker.
  Batch next();

 private:
  void run();

  const DatasetPools& pools_;
  BatchComposition composition_;
  AugmentationConfig aug_;
  std::uint64_t seed_;
  std::int64_t next_produce_;
  std::int64_t next_consume_;
  std::int64_t end_;
  std::size_t depth_;
  std::deque<Batch> queue_;
  std::exception_ptr error_;
  bool stop_ = false;
  std::mutex mutex_;
  std::condition_variable cv_;
  std::thread worker_;
};

}  // namespace advaug::data
