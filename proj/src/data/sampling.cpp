#include "advaug/data/sampling.hpp"

#include <algorithm>
#include <cmath>

#include "advaug/errors.hpp"

namespace advaug::data {

namespace {

const char* pool_name(Pool pool) {
  switch (pool) {
    case Pool::Supervised:
      return "supervised";
    case Pool::Rough:
      return "rough-only";
    case Pool::Clean:
      return "clean-only";
  }
  return "?";
}

std::size_t pool_size(const DatasetPools& pools, Pool pool) {
  switch (pool) {
    case Pool::Supervised:
      return pools.supervised.size();
    case Pool::Rough:
      return pools.rough_only.size();
    case Pool::Clean:
      return pools.clean_only.size();
  }
  return 0;
}

const Image& pool_image(const DatasetPools& pools, Pool pool, std::size_t i) {
  switch (pool) {
    case Pool::Supervised:
      return pools.supervised[i].x;
    case Pool::Rough:
      return pools.rough_only[i].image;
    case Pool::Clean:
      break;
  }
  return pools.clean_only[i].image;
}

std::vector<double> all_levels(const AugmentationConfig& aug) {
  std::vector<double> levels{1.0};
  levels.insert(levels.end(), aug.downsample_levels.begin(), aug.downsample_levels.end());
  return levels;
}

std::vector<double> valid_levels(const Image& img, const AugmentationConfig& aug) {
  std::vector<double> out;
  for (double level : all_levels(aug)) {
    if (scaled_extent(img.height, level) >= aug.patch_size && scaled_extent(img.width, level) >= aug.patch_size)
      out.push_back(level);
  }
  return out;
}

// Source taps (index, weight) of output pixel `u` under area averaging by `level`.
struct Tap {
  int index;
  double weight;
};

std::vector<std::vector<Tap>> area_taps(int first, int count, double level, int source_extent) {
  std::vector<std::vector<Tap>> taps(static_cast<std::size_t>(count));
  for (int k = 0; k < count; ++k) {
    const double lo = (first + k) * level;
    const double hi = std::min((first + k + 1) * level, static_cast<double>(source_extent));
    auto& t = taps[static_cast<std::size_t>(k)];
    for (int s = static_cast<int>(std::floor(lo)); s < hi && s < source_extent; ++s) {
      const double overlap = std::min(hi, s + 1.0) - std::max(lo, static_cast<double>(s));
      if (overlap > 0.0) t.push_back({s, overlap});
    }
    double total = 0.0;
    for (const auto& tap : t) total += tap.weight;
    for (auto& tap : t) tap.weight /= total;
  }
  return taps;
}

}  // namespace

void AugmentationConfig::validate() const {
  if (patch_size <= 0) throw ConfigError("patch_size must be positive");
  for (double l : downsample_levels) {
    if (!(l >= 1.0)) throw ConfigError("downsample levels must be >= 1");
  }
  if (!(threshold > 0.0 && threshold <= 1.0)) throw ConfigError("threshold must lie in (0, 1]");
  if (!(identity_probability >= 0.0 && identity_probability <= 1.0))
    throw ConfigError("identity_probability must lie in [0, 1]");
}

int scaled_extent(int extent, double level) { return static_cast<int>(std::floor(extent / level + 1e-9)); }

Image apply_transform(const Image& source, const PatchTransform& t, int patch_size) {
  const int p = patch_size;
  const int hs = scaled_extent(source.height, t.level);
  const int ws = scaled_extent(source.width, t.level);
  const bool odd = t.rotation % 2 != 0;
  const int hr = odd ? ws : hs;
  const int wr = odd ? hs : ws;
  if (t.crop_y < 0 || t.crop_x < 0 || t.crop_y + p > hr || t.crop_x + p > wr)
    throw PreconditionError("crop window outside the scaled image");

  // Window of the unrotated, unflipped scaled image that the crop covers.
  int fr0 = 0, fc0 = 0;
  switch (t.rotation) {
    case 0:
      fr0 = t.crop_y;
      fc0 = t.crop_x;
      break;
    case 1:
      fr0 = t.crop_x;
      fc0 = ws - t.crop_y - p;
      break;
    case 2:
      fr0 = hs - t.crop_y - p;
      fc0 = ws - t.crop_x - p;
      break;
    case 3:
      fr0 = hs - t.crop_x - p;
      fc0 = t.crop_y;
      break;
    default:
      throw PreconditionError("rotation must be 0-3 quarter turns");
  }
  const int sc0 = t.flip ? ws - fc0 - p : fc0;

  const auto rows = area_taps(fr0, p, t.level, source.height);
  const auto cols = area_taps(sc0, p, t.level, source.width);
  Image window(p, p);
  for (int i = 0; i < p; ++i)
    for (int j = 0; j < p; ++j) {
      double v = 0.0;
      for (const auto& r : rows[static_cast<std::size_t>(i)])
        for (const auto& c : cols[static_cast<std::size_t>(j)]) v += r.weight * c.weight * source.at(r.index, c.index);
      window.at(i, j) = static_cast<float>(v);
    }

  auto f = [&](int i, int j) { return window.at(i, t.flip ? p - 1 - j : j); };
  Image out(p, p);
  for (int a = 0; a < p; ++a)
    for (int b = 0; b < p; ++b) {
      switch (t.rotation) {
        case 0:
          out.at(a, b) = f(a, b);
          break;
        case 1:
          out.at(a, b) = f(b, p - 1 - a);
          break;
        case 2:
          out.at(a, b) = f(p - 1 - a, p - 1 - b);
          break;
        default:
          out.at(a, b) = f(p - 1 - b, a);
          break;
      }
    }
  return out;
}

std::vector<double> image_probabilities(const DatasetPools& pools, Pool pool, const AugmentationConfig& aug) {
  const std::size_t n = pool_size(pools, pool);
  std::vector<double> w(n, 0.0);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const Image& img = pool_image(pools, pool, i);
    if (valid_levels(img, aug).empty()) continue;
    w[i] = aug.size_weighted ? static_cast<double>(img.height) * img.width : 1.0;
    total += w[i];
  }
  if (total == 0.0) {
    if (n == 0) throw ConfigError(std::string("the ") + pool_name(pool) + " pool is empty");
    throw ConfigError(std::string("every image in the ") + pool_name(pool) + " pool is smaller than patch_size " +
                      std::to_string(aug.patch_size) + " at all downsample levels; use a smaller patch_size");
  }
  for (auto& v : w) v /= total;
  return w;
}

PatchTransform draw_transform(const DatasetPools& pools, Pool pool, const AugmentationConfig& aug, Rng& rng) {
  const auto probs = image_probabilities(pools, pool, aug);
  PatchTransform t;

  const double u = uniform01(rng);
  double acc = 0.0;
  t.image_index = probs.size();
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (probs[i] == 0.0) continue;
    acc += probs[i];
    t.image_index = i;
    if (u < acc) break;
  }
  const Image& src = pool_image(pools, pool, t.image_index);

  const auto levels = valid_levels(src, aug);
  t.level = levels[uniform_index(rng, levels.size())];

  if (aug.rotate_flip) {
    t.rotation = static_cast<int>(uniform_index(rng, 4));
    t.flip = bernoulli(rng, 0.5);
  }

  const int hs = scaled_extent(src.height, t.level);
  const int ws = scaled_extent(src.width, t.level);
  const int hr = t.rotation % 2 ? ws : hs;
  const int wr = t.rotation % 2 ? hs : ws;
  t.crop_y = uniform_int(rng, 0, hr - aug.patch_size);
  t.crop_x = uniform_int(rng, 0, wr - aug.patch_size);
  return t;
}

PatchSample sample_patch(const DatasetPools& pools, Pool pool, const AugmentationConfig& aug, Rng& rng) {
  PatchSample s;
  s.transform = draw_transform(pools, pool, aug, rng);
  const auto& t = s.transform;
  const Image& src = pool_image(pools, pool, t.image_index);
  switch (pool) {
    case Pool::Supervised:
      s.x = apply_transform(src, t, aug.patch_size);
      s.y = apply_transform(pools.supervised[t.image_index].y, t, aug.patch_size);
      break;
    case Pool::Rough:
      s.x = apply_transform(src, t, aug.patch_size);
      break;
    case Pool::Clean:
      s.y = apply_transform(src, t, aug.patch_size);
      break;
  }
  return s;
}

Image threshold_target(const Image& patch, double threshold) {
  Image out = patch;
  // Compared at pixel precision, so a stored 0.9 survives a 0.9 threshold.
  const auto t = static_cast<float>(threshold);
  for (auto& v : out.pixels)
    if (v < t) v = 0.0f;
  return out;
}

Image subtract_mean(const Image& patch, double mean) {
  if (!std::isfinite(mean)) throw PreconditionError("input mean must be finite");
  Image out = patch;
  const auto m = static_cast<float>(mean);
  for (auto& v : out.pixels) v -= m;
  return out;
}

Image add_mean(const Image& patch, double mean) {
  Image out = patch;
  const auto m = static_cast<float>(mean);
  for (auto& v : out.pixels) v += m;
  return out;
}

Image tensor_slice(const Tensor<float>& stack, int index) {
  Image out(stack.height(), stack.width());
  std::copy_n(stack.data() + static_cast<std::size_t>(index) * stack.plane(), stack.plane(), out.pixels.data());
  return out;
}

Tensor<float> stack_images(const std::vector<Image>& images) {
  if (images.empty()) return Tensor<float>();
  const int h = images.front().height, w = images.front().width;
  Tensor<float> t(1, static_cast<int>(images.size()), h, w);
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (images[i].height != h || images[i].width != w) throw PreconditionError("cannot stack images of different sizes");
    std::copy(images[i].pixels.begin(), images[i].pixels.end(), t.data() + i * t.plane());
  }
  return t;
}

Batch make_batch(const DatasetPools& pools, const BatchComposition& composition, const AugmentationConfig& aug,
                 Rng& rng) {
  aug.validate();
  if (composition.supervised < 0 || composition.unsup_rough < 0 || composition.unsup_clean < 0)
    throw ConfigError("batch counts must be non-negative");
  auto target = [&](const Image& y) { return pools.pencil_mode ? y : threshold_target(y, aug.threshold); };

  Batch b;
  b.input_mean = pools.input_mean;
  std::vector<Image> sx, sy, ux, uy;
  for (int i = 0; i < composition.supervised; ++i) {
    PatchSample s = sample_patch(pools, Pool::Supervised, aug, rng);
    Image y = target(s.y);
    const bool inject = bernoulli(rng, aug.identity_probability);
    sx.push_back(subtract_mean(inject ? y : s.x, pools.input_mean));
    sy.push_back(std::move(y));
    b.injected.push_back(inject);
    b.supervised_transforms.push_back(s.transform);
  }
  for (int i = 0; i < composition.unsup_rough; ++i)
    ux.push_back(subtract_mean(sample_patch(pools, Pool::Rough, aug, rng).x, pools.input_mean));
  for (int i = 0; i < composition.unsup_clean; ++i) uy.push_back(target(sample_patch(pools, Pool::Clean, aug, rng).y));
  b.supervised_x = stack_images(sx);
  b.supervised_y = stack_images(sy);
  b.unsup_x = stack_images(ux);
  b.unsup_y = stack_images(uy);
  return b;
}

Batch batch_for_iteration(const DatasetPools& pools, const BatchComposition& composition,
                          const AugmentationConfig& aug, std::uint64_t seed, std::int64_t iteration) {
  Rng rng(derive_seed(seed, {0xba7c4, static_cast<std::uint64_t>(iteration)}));
  return make_batch(pools, composition, aug, rng);
}

BatchPrefetcher::BatchPrefetcher(const DatasetPools& pools, BatchComposition composition, AugmentationConfig aug,
                                 std::uint64_t seed, std::int64_t first, std::int64_t end, std::size_t depth)
    : pools_(pools),
      composition_(composition),
      aug_(std::move(aug)),
      seed_(seed),
      next_produce_(first),
      next_consume_(first),
      end_(end),
      depth_(std::max<std::size_t>(depth, 1)) {
  worker_ = std::thread([this] { run(); });
}

BatchPrefetcher::~BatchPrefetcher() {
  {
    std::lock_guard lock(mutex_);
    stop_ = true;
  }
  cv_.notify_all();
  worker_.join();
}

void BatchPrefetcher::run() {
  for (;;) {
    std::int64_t it;
    {
      std::unique_lock lock(mutex_);
      cv_.wait(lock, [this] { return stop_ || queue_.size() < depth_; });
      if (stop_ || next_produce_ >= end_) return;
      it = next_produce_++;
    }
    try {
      Batch b = batch_for_iteration(pools_, composition_, aug_, seed_, it);
      std::lock_guard lock(mutex_);
      queue_.push_back(std::move(b));
    } catch (...) {
      std::lock_guard lock(mutex_);
      error_ = std::current_exception();
      cv_.notify_all();
      return;
    }
    cv_.notify_all();
  }
}

Batch BatchPrefetcher::next() {
  std::unique_lock lock(mutex_);
  cv_.wait(lock, [this] { return !queue_.empty() || error_ || next_consume_ >= end_; });
  if (queue_.empty()) {
    if (error_) std::rethrow_exception(error_);
    throw PreconditionError("batch prefetcher exhausted");
  }
  Batch b = std::move(queue_.front());
  queue_.pop_front();
  ++next_consume_;
  cv_.notify_all();
  return b;
}

}  // namespace advaug::data
