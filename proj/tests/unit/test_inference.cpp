#include <gtest/gtest.h>

#include <cmath>

#include "advaug/errors.hpp"
#include "advaug/inference.hpp"
#include "advaug/trainer/trainer.hpp"

using namespace advaug;
using namespace advaug::infer;
using loss::Regime;

namespace {

train::TrainingConfig small_config() {
  train::TrainingConfig c;
  c.iterations = 3;
  c.pretrain_iterations = 0;
  c.batch = {2, 2, 2};
  c.augmentation.patch_size = 64;
  c.augmentation.downsample_levels = {};
  c.model.width_divisor = 8;
  c.model.disc_width_divisor = 8;
  c.seed = 5;
  return c;
}

const data::DatasetPools& pools() {
  static const data::DatasetPools p = [] {
    data::SyntheticSketchSpec spec;
    spec.canvas = 80;
    return data::generate_synthetic(spec, 6, 4, 4, 21);
  }();
  return p;
}

const train::Checkpoint& untrained() {
  static const train::Checkpoint c = [] {
    const auto cfg = small_config();
    // Random BN statistics would make the eval path trivial; one MSE step fills them.
    train::TrainerState s = train::initial_state(cfg, pools().input_mean);
    train::TrainingConfig mse = cfg;
    mse.regime = Regime::MseOnly;
    train::train_step(s, data::batch_for_iteration(pools(), {2, 0, 0}, cfg.augmentation, 1, 0), mse);
    return train::make_checkpoint(s, cfg, "t", false, "train");
  }();
  return c;
}

Image random_image(int h, int w, std::uint64_t seed) {
  Rng rng(seed);
  Image im(h, w);
  for (auto& v : im.pixels) v = static_cast<float>(uniform01(rng));
  return im;
}

// Brute-force oracle: every pixel whose disc holds a reference pixel below the ink level.
double near_strokes_oracle(const Image& out, const Image& ref, double radius) {
  int near = 0, mid = 0;
  for (int y = 0; y < out.height; ++y)
    for (int x = 0; x < out.width; ++x) {
      bool close = false;
      for (int yy = 0; yy < ref.height && !close; ++yy)
        for (int xx = 0; xx < ref.width && !close; ++xx)
          close = ref.at(yy, xx) < 0.5f && std::hypot(yy - y, xx - x) <= radius;
      if (!close) continue;
      ++near;
      mid += out.at(y, x) > 0.1f && out.at(y, x) < 0.9f;
    }
  return near == 0 ? 0.0 : static_cast<double>(mid) / near;
}

}  // namespace

TEST(Simplify, OutputKeepsInputDimensionsAndRange) {
  const Image in = random_image(379, 601, 1);
  const Image out = simplify(untrained(), in);
  EXPECT_EQ(out.height, 379);
  EXPECT_EQ(out.width, 601);
  for (float v : out.pixels) ASSERT_TRUE(v >= 0.0f && v <= 1.0f);
}

TEST(Simplify, PadForwardCropPreservesSmallSizes) {
  Rng rng(3);
  for (int t = 0; t < 12; ++t) {
    const int h = uniform_int(rng, 1, 40), w = uniform_int(rng, 1, 40);
    const Image out = simplify(untrained(), random_image(h, w, t));
    EXPECT_EQ(out.height, h);
    EXPECT_EQ(out.width, w);
  }
}

TEST(Simplify, PureFunctionUsingStoredMean) {
  const Image in = random_image(50, 70, 2);
  EXPECT_EQ(simplify(untrained(), in), simplify(untrained(), in));
  EXPECT_EQ(simplify(untrained(), in), simplify(train::fold_for_inference(untrained()), in));
  train::Checkpoint shifted = untrained();
  shifted.input_mean += 0.2;
  EXPECT_NE(simplify(shifted, in), simplify(untrained(), in));
}

TEST(Simplify, ThresholdAndSizeLimit) {
  const Image in = random_image(40, 40, 4);
  InferenceOptions opt;
  opt.apply_threshold = true;
  const Image raw = simplify(untrained(), in);
  const Image th = simplify(untrained(), in, opt);
  for (std::size_t i = 0; i < raw.size(); ++i)
    EXPECT_EQ(th.pixels[i], raw.pixels[i] < 0.9f ? 0.0f : raw.pixels[i]);
  InferenceOptions small;
  small.max_pixels = 1000;
  EXPECT_THROW(simplify(untrained(), in, small), ConfigError);
}

TEST(Simplify, IdentityModelReproducesCleanInput) {
  // A flat micro-model trained on (clean, clean) pairs only, then run through simplify().
  net::NetworkSpec spec;
  spec.layers = {{net::LayerKind::FlatConv, 3, net::Stride::One, 1, 1, 8, net::Activation::ReLU},
                 {net::LayerKind::FlatConv, 3, net::Stride::One, 1, 8, 8, net::Activation::ReLU},
                 {net::LayerKind::FlatConv, 3, net::Stride::One, 1, 8, 1, net::Activation::Sigmoid}};
  train::Checkpoint ck;
  ck.simplifier = net::make_model<float>(spec, 17);
  std::vector<Image> clean;
  for (const auto& p : pools().supervised) clean.push_back(p.y);
  data::DatasetPools identity;
  for (const auto& im : clean) identity.supervised.push_back({"id", im, im});
  ck.input_mean = data::supervised_input_mean(identity);
  const Tensor<float> target = data::stack_images(clean);
  std::vector<Image> centred;
  for (const auto& im : clean) centred.push_back(data::subtract_mean(im, ck.input_mean));
  const Tensor<float> input = data::stack_images(centred);
  train::AdadeltaState opt = train::make_adadelta_state(ck.simplifier.params);
  for (int step = 0; step < 250; ++step) {
    net::ForwardTape<float> tape;
    const Tensor<float> out = net::forward(ck.simplifier, input, net::Mode::Train, &tape);
    net::ParameterSet<float> grads = net::zeros_like(ck.simplifier.params);
    net::backward(ck.simplifier, tape, loss::mse_gradient(out, target), &grads, false);
    train::adadelta_update(ck.simplifier.params, grads, opt);
  }
  double mse = 0.0;
  for (const auto& im : clean) mse += loss::mse_loss(simplify(ck, im), im);
  mse /= static_cast<double>(clean.size());
  EXPECT_LT(mse, 0.01) << mse;
}

TEST(Pencil, RequiresPencilCheckpoint) {
  const Image in = random_image(30, 30, 5);
  EXPECT_THROW(pencil_generate(untrained(), in), ConfigError);
  train::Checkpoint pencil = untrained();
  pencil.pencil_mode = true;
  const Image out = pencil_generate(pencil, in);
  EXPECT_EQ(out, simplify(untrained(), in));
}

TEST(Midtone, Examples) {
  EXPECT_EQ(midtone_fraction(Image(8, 8, 1.0f)), 0.0);
  Image binary(4, 4, 1.0f);
  binary.at(1, 1) = binary.at(2, 3) = 0.0f;
  EXPECT_EQ(midtone_fraction(binary), 0.0);
  EXPECT_EQ(midtone_fraction(Image(5, 3, 0.5f)), 1.0);
  Image half(2, 6, 1.0f);
  for (int x = 0; x < 6; ++x) half.at(0, x) = 0.5f;
  EXPECT_EQ(midtone_fraction(half), 0.5);
  EXPECT_EQ(midtone_fraction(Image(2, 2, 0.1f)), 0.0);
  EXPECT_EQ(midtone_fraction(Image(2, 2, 0.9f)), 0.0);
  EXPECT_THROW(midtone_fraction(half, 0.5, 0.5), PreconditionError);
  EXPECT_THROW(midtone_fraction(half, 0.8, 0.2), PreconditionError);
}

TEST(Midtone, BoundedAndMonotone) {
  Rng rng(8);
  Image im = random_image(20, 20, 9);
  for (auto& v : im.pixels) v = v < 0.5f ? 0.0f : 1.0f;
  double prev = midtone_fraction(im);
  for (int t = 0; t < 100; ++t) {
    im.pixels[uniform_index(rng, im.size())] = static_cast<float>(uniform(rng, 0.11, 0.89));
    const double f = midtone_fraction(im);
    ASSERT_GE(f, prev);
    ASSERT_LE(f, 1.0);
    prev = f;
  }
}

TEST(Midtone, NearStrokesMatchesBruteForce) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Image out = random_image(17, 23, seed);
    Image ref(17, 23, 1.0f);
    Rng rng(seed + 100);
    for (int k = 0; k < 6; ++k) ref.at(uniform_int(rng, 0, 16), uniform_int(rng, 0, 22)) = 0.0f;
    for (double r : {0.0, 1.0, 2.0, 2.5})
      EXPECT_DOUBLE_EQ(midtone_near_strokes(out, ref, r), near_strokes_oracle(out, ref, r)) << seed << " " << r;
  }
  EXPECT_EQ(midtone_near_strokes(Image(4, 4, 0.5f), Image(4, 4, 1.0f)), 0.0);
  EXPECT_THROW(midtone_near_strokes(Image(4, 4), Image(4, 5)), PreconditionError);
}

TEST(Tiling, LargeInputMatchesWholeImage) {
  const Image in = random_image(1024, 1024, 12);
  const Image whole = simplify(untrained(), in);
  InferenceOptions opt;
  opt.tiling.enabled = true;
  opt.tiling.tile = 512;
  const Image tiled = tiled_forward(untrained(), in, opt);
  ASSERT_EQ(tiled.height, 1024);
  ASSERT_EQ(tiled.width, 1024);
  double worst = 0.0;
  for (std::size_t i = 0; i < whole.size(); ++i)
    worst = std::max(worst, static_cast<double>(std::abs(whole.pixels[i] - tiled.pixels[i])));
  EXPECT_LE(worst, 1e-3);
}

TEST(Tiling, SingleTileIsIdentical) {
  const Image in = random_image(200, 300, 13);
  InferenceOptions opt;
  opt.tiling.enabled = true;
  opt.tiling.tile = 512;
  EXPECT_EQ(tiled_forward(untrained(), in, opt), simplify(untrained(), in));
  EXPECT_EQ(simplify(untrained(), in, opt), simplify(untrained(), in));
}

TEST(Tiling, OverlapBelowReceptiveRadiusIsRejected) {
  const Image in = random_image(600, 600, 14);
  InferenceOptions opt;
  opt.tiling.enabled = true;
  opt.tiling.tile = 256;
  opt.tiling.overlap = 0;
  try {
    tiled_forward(untrained(), in, opt);
    FAIL() << "overlap 0 accepted";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("receptive-field"), std::string::npos);
  }
  opt.tiling.overlap = receptive_radius(untrained().simplifier.spec) - 1;
  EXPECT_THROW(tiled_forward(untrained(), in, opt), ConfigError);
  EXPECT_GT(receptive_radius(untrained().simplifier.spec), 8);
}

TEST(SingleImage, ZeroStepsIsSimplify) {
  const Image target = random_image(70, 90, 15);
  const auto before = train::serialize_checkpoint(untrained());
  SingleImageOptConfig cfg;
  cfg.steps = 0;
  const SingleImageResult r = single_image_optimize(untrained(), target, pools(), cfg);
  EXPECT_EQ(r.prediction, simplify(untrained(), target));
  EXPECT_EQ(r.fake_term_before, r.fake_term_after);
  EXPECT_EQ(train::serialize_checkpoint(untrained()), before);
}

TEST(SingleImage, AdaptsACopyOnly) {
  const Image target = pools().rough_only[0].image;
  const auto before = train::serialize_checkpoint(untrained());
  SingleImageOptConfig cfg;
  cfg.steps = 3;
  cfg.rough_count = cfg.clean_count = cfg.supervised_count = 2;
  const SingleImageResult r = single_image_optimize(untrained(), target, pools(), cfg);
  EXPECT_EQ(train::serialize_checkpoint(untrained()), before);
  EXPECT_NE(train::serialize_checkpoint(r.adapted), before);
  EXPECT_EQ(r.prediction.height, target.height);
  EXPECT_TRUE(std::isfinite(r.fake_term_before) && std::isfinite(r.fake_term_after));
  EXPECT_EQ(r.adapted.provenance["stage"], "single_image");
}

TEST(SingleImage, InvalidInputsAreRejected) {
  SingleImageOptConfig cfg;
  EXPECT_THROW(single_image_optimize(untrained(), random_image(30, 30, 1), pools(), cfg), ConfigError);
  cfg.patch_size = 128;
  EXPECT_THROW(single_image_optimize(untrained(), random_image(200, 200, 1), pools(), cfg), ConfigError);
  EXPECT_THROW(single_image_optimize(train::fold_for_inference(untrained()), random_image(80, 80, 1), pools(), {}),
               ConfigError);
  data::DatasetPools empty = pools();
  empty.supervised.clear();
  EXPECT_THROW(single_image_optimize(untrained(), random_image(80, 80, 1), empty, {}), ConfigError);
}
