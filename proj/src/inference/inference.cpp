#include "advaug/inference.hpp"

#include <algorithm>
#include <cmath>

#include "advaug/data/sampling.hpp"
#include "advaug/errors.hpp"
#include "advaug/losses.hpp"
#include "advaug/netcore/padding.hpp"
#include "advaug/random.hpp"
#include "advaug/trainer/trainer.hpp"

namespace advaug::infer {

namespace {

constexpr std::uint64_t kSingleImageBatches = 0x51b1;

net::Model<float> inference_model(const train::Checkpoint& checkpoint) {
  return checkpoint.folded ? checkpoint.simplifier : net::fold_batchnorm(checkpoint.simplifier);
}

Image run(const net::Model<float>& model, const Image& centred) {
  const Tensor<float> out = net::forward(model, data::stack_images({centred}), net::Mode::Eval);
  return data::tensor_slice(out, 0);
}

Image window(const Image& image, int y0, int x0, int h, int w) {
  Image out(h, w);
  for (int y = 0; y < h; ++y)
    std::copy_n(&image.pixels[static_cast<std::size_t>(y0 + y) * image.width + x0], w,
                &out.pixels[static_cast<std::size_t>(y) * w]);
  return out;
}

int floor_to(int v, int m) { return v / m * m; }
int ceil_to(int v, int m) { return (v + m - 1) / m * m; }

Image finish(Image out, const InferenceOptions& options) {
  return options.apply_threshold ? data::threshold_target(out, options.threshold) : out;
}

}  // namespace

Image predict(const net::Model<float>& model, double input_mean, const Image& image) {
  if (image.empty()) throw PreconditionError("cannot run the network on an empty image");
  const auto [padded, record] = net::pad_to_multiple(data::subtract_mean(image, input_mean),
                                                     model.spec.required_multiple());
  return net::crop(run(model, padded), record);
}

Image simplify(const train::Checkpoint& checkpoint, const Image& image, const InferenceOptions& options) {
  const net::Model<float> model = inference_model(checkpoint);
  if (options.tiling.enabled) return finish(tiled_predict(model, checkpoint.input_mean, image, options.tiling), options);
  const auto pixels = static_cast<std::int64_t>(image.height) * image.width;
  if (pixels > options.max_pixels)
    throw ConfigError("image of " + std::to_string(image.width) + "x" + std::to_string(image.height) +
                      " pixels exceeds the untiled limit of " + std::to_string(options.max_pixels) +
                      " pixels; enable tiling");
  return finish(predict(model, checkpoint.input_mean, image), options);
}

Image pencil_generate(const train::Checkpoint& checkpoint, const Image& clean, const InferenceOptions& options) {
  if (!checkpoint.pencil_mode)
    throw ConfigError("checkpoint was not trained in pencil mode and cannot generate pencil drawings");
  return simplify(checkpoint, clean, options);
}

int receptive_radius(const net::NetworkSpec& spec) {
  return (net::receptive_field(spec, static_cast<int>(spec.layers.size()) - 1) + 1) / 2;
}

Image tiled_predict(const net::Model<float>& model, double input_mean, const Image& image,
                    const TilingOptions& tiling) {
  const int radius = receptive_radius(model.spec);
  const int overlap = tiling.overlap < 0 ? radius + 8 : tiling.overlap;
  if (overlap < radius)
    throw ConfigError("tile overlap " + std::to_string(overlap) + " is below the receptive-field radius " +
                      std::to_string(radius) + " of the network");
  const int m = model.spec.required_multiple();
  const auto [padded, record] = net::pad_to_multiple(data::subtract_mean(image, input_mean), m);
  if (padded.height <= tiling.tile && padded.width <= tiling.tile) return net::crop(run(model, padded), record);

  const int step = floor_to(tiling.tile - 2 * overlap, m);
  if (step < m)
    throw ConfigError("tile size " + std::to_string(tiling.tile) + " leaves no interior with overlap " +
                      std::to_string(overlap));
  Image out(padded.height, padded.width);
  for (int oy = 0; oy < padded.height; oy += step) {
    const int iy1 = std::min(oy + step, padded.height);
    const int wy0 = std::max(0, floor_to(oy - overlap, m));
    const int wy1 = std::min(padded.height, ceil_to(iy1 + overlap, m));
    for (int ox = 0; ox < padded.width; ox += step) {
      const int ix1 = std::min(ox + step, padded.width);
      const int wx0 = std::max(0, floor_to(ox - overlap, m));
      const int wx1 = std::min(padded.width, ceil_to(ix1 + overlap, m));
      const Image tile = run(model, window(padded, wy0, wx0, wy1 - wy0, wx1 - wx0));
      for (int y = oy; y < iy1; ++y)
        for (int x = ox; x < ix1; ++x) out.at(y, x) = tile.at(y - wy0, x - wx0);
    }
  }
  return net::crop(out, record);
}

Image tiled_forward(const train::Checkpoint& checkpoint, const Image& image, const InferenceOptions& options) {
  return finish(tiled_predict(inference_model(checkpoint), checkpoint.input_mean, image, options.tiling), options);
}

double midtone_fraction(const Image& image, double low, double high) {
  if (!(low < high)) throw PreconditionError("mid-tone band needs low < high");
  if (image.empty()) return 0.0;
  const auto n = std::count_if(image.pixels.begin(), image.pixels.end(),
                               [lo = static_cast<float>(low), hi = static_cast<float>(high)](float v) { return v > lo && v < hi; });
  return static_cast<double>(n) / static_cast<double>(image.size());
}

double midtone_near_strokes(const Image& output, const Image& reference, double radius, double ink_level, double low,
                            double high) {
  if (!(low < high)) throw PreconditionError("mid-tone band needs low < high");
  if (!output.same_size(reference)) throw PreconditionError("output and reference differ in size");
  const int r = static_cast<int>(std::floor(radius));
  std::vector<std::pair<int, int>> disc;
  for (int dy = -r; dy <= r; ++dy)
    for (int dx = -r; dx <= r; ++dx)
      if (dy * dy + dx * dx <= radius * radius) disc.emplace_back(dy, dx);
  std::int64_t near = 0, mid = 0;
  for (int y = 0; y < output.height; ++y)
    for (int x = 0; x < output.width; ++x) {
      const bool close = std::any_of(disc.begin(), disc.end(), [&](const auto& d) {
        const int yy = y + d.first, xx = x + d.second;
        return yy >= 0 && yy < reference.height && xx >= 0 && xx < reference.width &&
               reference.at(yy, xx) < ink_level;
      });
      if (!close) continue;
      ++near;
      const float v = output.at(y, x);
      mid += v > static_cast<float>(low) && v < static_cast<float>(high);
    }
  return near == 0 ? 0.0 : static_cast<double>(mid) / static_cast<double>(near);
}

double unsupervised_fake_term(const net::Model<float>& simplifier, const net::Model<float>& discriminator,
                              double input_mean, const Image& image, double beta) {
  const int p = discriminator.spec.input_size;
  const Image out = predict(net::fold_batchnorm(simplifier), input_mean, image);
  std::vector<Image> crops;
  for (int y = 0; y + p <= out.height; y += p)
    for (int x = 0; x + p <= out.width; x += p) crops.push_back(window(out, y, x, p, p));
  if (crops.empty())
    throw PreconditionError("image is smaller than the discriminator input of " + std::to_string(p) + " pixels");
  const Tensor<float> prob = net::forward(discriminator, data::stack_images(crops), net::Mode::Eval);
  double sum = 0.0;
  for (std::size_t i = 0; i < prob.size(); ++i) sum += loss::safe_log(1.0 - prob[i]);
  return beta * sum / static_cast<double>(prob.size());
}

SingleImageResult single_image_optimize(const train::Checkpoint& base, const Image& target,
                                        const data::DatasetPools& pools, const SingleImageOptConfig& config) {
  if (base.folded) throw ConfigError("single-image optimisation needs an unfolded checkpoint");
  if (!base.discriminator) throw ConfigError("single-image optimisation needs a checkpoint with a discriminator");
  if (config.steps < 0) throw ConfigError("steps must be non-negative");
  loss::validate_discriminator(loss::Regime::AdversarialAugmentation, base.discriminator->spec);
  if (base.discriminator->spec.input_size != config.patch_size)
    throw ConfigError("patch_size " + std::to_string(config.patch_size) + " does not match the discriminator input of " +
                      std::to_string(base.discriminator->spec.input_size));
  if (target.height < config.patch_size || target.width < config.patch_size)
    throw ConfigError("target image is smaller than patch_size");

  train::TrainingConfig tc;
  tc.regime = loss::Regime::AdversarialAugmentation;
  tc.alpha = 0.0;
  tc.beta = config.beta;
  tc.non_saturating = config.non_saturating;
  tc.auto_balance = false;
  tc.seed = config.seed;
  tc.augmentation.patch_size = config.patch_size;
  tc.batch = {config.supervised_count, config.rough_count, config.clean_count};

  data::DatasetPools local;
  local.supervised = pools.supervised;
  local.rough_only = {{"target", target}};
  if (!config.clean_pool.empty()) {
    for (std::size_t i = 0; i < config.clean_pool.size(); ++i)
      local.clean_only.push_back({"clean_" + std::to_string(i), config.clean_pool[i]});
  } else {
    for (const auto& pair : pools.supervised) local.clean_only.push_back({pair.name, pair.y});
  }
  local.input_mean = base.input_mean;
  local.pencil_mode = base.pencil_mode;
  if (config.supervised_count > 0 && local.supervised.empty())
    throw ConfigError("the model-loss anchor needs supervised pairs");
  if (local.clean_only.empty()) throw ConfigError("single-image optimisation needs clean drawings");

  train::TrainerState state;
  state.simplifier = base.simplifier;
  state.discriminator = base.discriminator;
  state.input_mean = base.input_mean;
  state.simplifier_optimizer = train::make_adadelta_state(state.simplifier.params, tc.adadelta_rho, tc.adadelta_epsilon);
  state.discriminator_optimizer =
      train::make_adadelta_state(state.discriminator->params, tc.adadelta_rho, tc.adadelta_epsilon);

  const std::uint64_t stream = derive_seed(config.seed, {kSingleImageBatches});
  for (int step = 0; step < config.steps; ++step)
    train::train_step(state, data::batch_for_iteration(local, tc.batch, tc.augmentation, stream, step), tc);

  SingleImageResult result;
  result.adapted = train::make_checkpoint(state, tc, base.fingerprint, base.pencil_mode, "single_image");
  result.adapted.provenance["source_iteration"] = base.iteration;
  result.adapted.iteration = base.iteration;
  result.prediction = simplify(result.adapted, target);
  const net::Model<float>& d = *state.discriminator;
  result.fake_term_before = unsupervised_fake_term(base.simplifier, d, base.input_mean, target, config.beta);
  result.fake_term_after = unsupervised_fake_term(state.simplifier, d, base.input_mean, target, config.beta);
  return result;
}

}  // namespace advaug::infer
