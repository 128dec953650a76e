#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <sstream>

#include "advaug/errors.hpp"
#include "advaug/trainer/trainer.hpp"
#include "temp_dir.hpp"

using namespace advaug;
using namespace advaug::train;
using loss::Regime;

namespace {

namespace fs = std::filesystem;

TrainingConfig tiny_config(Regime regime = Regime::AdversarialAugmentation) {
  TrainingConfig c;
  c.regime = regime;
  c.iterations = 4;
  c.pretrain_iterations = 0;
  c.batch = {2, 2, 2};
  c.augmentation.patch_size = 64;
  c.augmentation.downsample_levels = {};
  c.model.width_divisor = 8;
  c.model.disc_width_divisor = 8;
  c.checkpoint_interval = 2;
  c.seed = 11;
  return c;
}

const data::DatasetPools& tiny_pools() {
  static const data::DatasetPools pools = [] {
    data::SyntheticSketchSpec spec;
    spec.canvas = 80;
    return data::generate_synthetic(spec, 6, 4, 4, 3);
  }();
  return pools;
}

std::vector<data::ImagePair> tiny_validation() {
  data::SyntheticSketchSpec spec;
  spec.canvas = 72;
  return data::generate_synthetic(spec, 3, 0, 0, 99).supervised;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::uint8_t> bytes_of(const net::Model<float>& m) {
  Checkpoint c;
  c.simplifier = m;
  return serialize_checkpoint(c);
}

}  // namespace

TEST(Adadelta, ZeroGradientIsAFixedPointAndAccumulatorsDecay) {
  double gs = 1.0, us = 2.0;
  EXPECT_EQ(adadelta_delta(0.0, gs, us, 0.95, 1e-6), 0.0);
  EXPECT_DOUBLE_EQ(gs, 0.95);
  EXPECT_DOUBLE_EQ(us, 1.9);

  auto model = net::make_model<float>(tiny_config().simplifier_spec(), 5);
  const auto before = model.params;
  AdadeltaState st = make_adadelta_state(model.params);
  adadelta_update(model.params, net::zeros_like(model.params), st);
  EXPECT_EQ(bytes_of(model), bytes_of(net::Model<float>{model.spec, before}));
}

TEST(Adadelta, FirstStepMatchesHandEvaluation) {
  const double rho = 0.95, eps = 1e-6;
  for (double g : {-3.0, -0.01, 1e-4, 0.5, 20.0}) {
    double gs = 0.0, us = 0.0;
    const double expected = -g * std::sqrt(eps) / std::sqrt((1 - rho) * g * g + eps);
    EXPECT_NEAR(adadelta_delta(g, gs, us, rho, eps), expected, 1e-12 * std::abs(expected) + 1e-15) << g;
  }
  // Through the parameter-set path, stored in float.
  auto model = net::make_model<float>(tiny_config().simplifier_spec(), 5);
  auto grads = net::zeros_like(model.params);
  auto learn = net::learnable_tensors(grads);
  (*learn[0])[0] = 0.25f;
  const float w0 = (*net::learnable_tensors(model.params)[0])[0];
  AdadeltaState st;
  adadelta_update(model.params, grads, st);
  const double expected = -0.25 * std::sqrt(eps) / std::sqrt((1 - rho) * 0.0625 + eps);
  EXPECT_NEAR((*net::learnable_tensors(model.params)[0])[0] - w0, expected, 1e-7);
  EXPECT_TRUE(st.initialized());
}

TEST(Adadelta, ConstantGradientSettlesAtUnitRmsRatio) {
  // Steady state of the recurrences: update_sq = grad_sq = g^2, so |dx| -> |g|.
  for (double g : {1e-3, 2e-3}) {
    double gs = 0.0, us = 0.0, dx = 0.0;
    for (int t = 0; t < 1000; ++t) {
      dx = adadelta_delta(g, gs, us, 0.95, 1e-6);
      ASSERT_TRUE(std::isfinite(dx));
      ASSERT_LE(std::abs(dx), std::abs(g) * (1 + 1e-9) + 1e-3 * std::sqrt(20.0));
    }
    EXPECT_NEAR(std::abs(dx) / g, 1.0, 0.02) << g;
  }
  for (double g : {1.0, 50.0}) {
    double gs = 0.0, us = 0.0;
    for (int t = 0; t < 1000; ++t) {
      const double dx = adadelta_delta(g, gs, us, 0.95, 1e-6);
      ASSERT_TRUE(std::isfinite(dx));
      ASSERT_LE(std::abs(dx), std::abs(g));
      ASSERT_GE(gs, 0.0);
      ASSERT_GE(us, 0.0);
    }
  }
}

TEST(Adadelta, ShapeMismatchIsRejected) {
  auto a = net::make_model<float>(tiny_config().simplifier_spec(), 5);
  auto b = net::make_model<float>(tiny_config().discriminator_spec(), 5);
  AdadeltaState st;
  EXPECT_THROW(adadelta_update(a.params, b.params, st), PreconditionError);
}

TEST(Balance, Examples) {
  EXPECT_EQ(balance_gradients({{1.0, 1.0}, {2.0, 2.0}}, 1.0), 1.0);
  EXPECT_EQ(balance_gradients({{0.0, 0.0}}, 0.7), 0.7);
  EXPECT_EQ(balance_gradients({}, 3.0), 3.0);
  EXPECT_DOUBLE_EQ(balance_gradients({{1.0, 1e-3}}, 1.0), 100.0);
}

TEST(Balance, ClosedLoopBringsLargeAdversarialNormsIntoBand) {
  // Observed adversarial norms are 100x the model norms (before the multiplier).
  Rng rng(4);
  std::vector<GradientNorms> window;
  double m = 1.0;
  for (int t = 0; t < 200; ++t) {
    const double model = 0.5 + uniform01(rng);
    window.push_back({model, 100.0 * model});
    if (window.size() > 20) window.erase(window.begin());
    m = balance_gradients(window, m);
    double sm = 0, sa = 0;
    for (const auto& n : window) sm += n.model, sa += n.adversarial;
    ASSERT_LE(m * sa / sm, kBalanceHigh * (1 + 1e-12));
    ASSERT_GE(m * sa / sm, kBalanceLow * (1 - 1e-12));
  }
  EXPECT_NEAR(m, 0.1, 1e-12);
}

TEST(Balance, OffLeavesMultiplierAtOne) {
  TrainingConfig c = tiny_config();
  TrainerState s = initial_state(c, tiny_pools().input_mean);
  for (int i = 0; i < 2; ++i) {
    const auto rec = train_step(s, data::batch_for_iteration(tiny_pools(), c.batch, c.augmentation, 1, i), c);
    EXPECT_EQ(rec.adversarial_scale, 1.0);
  }
  c.auto_balance = true;
  const auto rec = train_step(s, data::batch_for_iteration(tiny_pools(), c.batch, c.augmentation, 1, 2), c);
  EXPECT_EQ(s.balance_window.size(), 1u);
  const double ratio = s.balance_window[0].adversarial / s.balance_window[0].model;
  EXPECT_GE(rec.adversarial_scale * ratio, kBalanceLow * (1 - 1e-9));
  EXPECT_LE(rec.adversarial_scale * ratio, kBalanceHigh * (1 + 1e-9));
}

TEST(Config, DefaultWeights) {
  const TrainingConfig c;
  EXPECT_EQ(c.alpha, 8e-5);
  EXPECT_EQ(c.beta, 8e-5);
  EXPECT_EQ(c.iterations, 150000);
  EXPECT_EQ(c.adadelta_rho, 0.95);
  EXPECT_EQ(c.adadelta_epsilon, 1e-6);
  EXPECT_FALSE(c.auto_balance);
  RunConfig r;
  apply_settings(r, parse_settings("# only the seed\nseed = 4\n"));
  EXPECT_EQ(r.training.alpha, 8e-5);
  EXPECT_EQ(r.training.seed, 4u);
}

TEST(Config, ParseOverrideAndRoundTrip) {
  RunConfig r;
  apply_settings(r, parse_settings("regime = cgan_baseline  # comment\n\nalpha = 0.5\naugment.patch_size = 128\n"));
  apply_settings(r, {parse_override("batch.rough=3")});
  EXPECT_EQ(r.training.regime, Regime::CganBaseline);
  EXPECT_EQ(r.training.alpha, 0.5);
  EXPECT_EQ(r.training.augmentation.patch_size, 128);
  EXPECT_EQ(r.training.batch.unsup_rough, 3);

  RunConfig back;
  apply_settings(back, parse_settings(to_config_text(r)));
  EXPECT_EQ(to_config_text(back), to_config_text(r));
  EXPECT_EQ(config_fingerprint(back), config_fingerprint(r));

  RunConfig other = r;
  other.training.seed += 1;
  EXPECT_NE(config_fingerprint(other), config_fingerprint(r));
  other = r;
  other.training.checkpoint_interval = 7;
  EXPECT_EQ(config_fingerprint(other), config_fingerprint(r));
}

TEST(Config, Errors) {
  RunConfig r;
  EXPECT_THROW(apply_settings(r, parse_settings("no_such_key = 1\n")), ConfigError);
  EXPECT_THROW(apply_settings(r, parse_settings("alpha = lots\n")), ConfigError);
  EXPECT_THROW(parse_override("alpha"), ConfigError);
  TrainingConfig c = tiny_config();
  c.alpha = -1;
  EXPECT_THROW(c.validate(), ConfigError);
  c = tiny_config();
  c.iterations = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = tiny_config();
  c.augmentation.patch_size = 72;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Checkpoint, RoundTripIsByteIdentical) {
  const TrainingConfig c = tiny_config();
  TrainerState s = initial_state(c, 0.9);
  train_step(s, data::batch_for_iteration(tiny_pools(), c.batch, c.augmentation, 1, 0), c);
  s.balance_window.push_back({1.5, 0.25});
  const Checkpoint ck = make_checkpoint(s, c, "abc", false, "train");
  testkit::TempDir dir;
  save_checkpoint(ck, dir.path() / "a.ckpt");
  const Checkpoint back = load_checkpoint(dir.path() / "a.ckpt");
  save_checkpoint(back, dir.path() / "b.ckpt");
  EXPECT_EQ(read_file(dir.path() / "a.ckpt"), read_file(dir.path() / "b.ckpt"));
  EXPECT_EQ(back.iteration, 1);
  EXPECT_EQ(back.input_mean, 0.9);
  ASSERT_TRUE(back.simplifier_optimizer && back.discriminator_optimizer);
  EXPECT_EQ(*back.simplifier_optimizer, s.simplifier_optimizer);
  EXPECT_FALSE(fs::exists(dir.path() / "a.ckpt.tmp"));
}

TEST(Checkpoint, CorruptionNamesTheSection) {
  const TrainingConfig c = tiny_config();
  const Checkpoint ck = make_checkpoint(initial_state(c, 0.5), c, "f", false, "train");
  auto bytes = serialize_checkpoint(ck);
  // Locate the PARM payload and flip one of its bytes.
  const std::string s(bytes.begin(), bytes.end());
  const auto at = s.find("PARM");
  ASSERT_NE(at, std::string::npos);
  bytes[at + 4 + 8 + 40] ^= 0x40;
  try {
    parse_checkpoint(bytes);
    FAIL() << "corruption not detected";
  } catch (const CheckpointError& e) {
    EXPECT_EQ(e.section(), "PARM");
  }
  auto truncated = serialize_checkpoint(ck);
  truncated.resize(truncated.size() / 2);
  EXPECT_THROW(parse_checkpoint(truncated), CheckpointError);
}

TEST(Checkpoint, ShapeMismatchIsRejected) {
  const TrainingConfig c = tiny_config();
  Checkpoint ck = make_checkpoint(initial_state(c, 0.5), c, "f", false, "train");
  TrainingConfig wider = c;
  wider.model.width_divisor = 4;
  ck.simplifier.spec = wider.simplifier_spec();
  EXPECT_THROW(parse_checkpoint(serialize_checkpoint(ck)), CheckpointError);
}

TEST(Checkpoint, FoldForInference) {
  const TrainingConfig c = tiny_config();
  const Checkpoint ck = make_checkpoint(initial_state(c, 0.5), c, "f", false, "train");
  const Checkpoint f = fold_for_inference(ck);
  EXPECT_TRUE(f.folded);
  EXPECT_FALSE(f.discriminator);
  EXPECT_FALSE(f.simplifier_optimizer);
  EXPECT_FALSE(net::has_batchnorm(f.simplifier.spec));
  EXPECT_EQ(f.provenance["folded_from"]["fingerprint"], "f");
  EXPECT_EQ(serialize_checkpoint(fold_for_inference(f)), serialize_checkpoint(f));
  EXPECT_THROW(state_from_checkpoint(f, c, false), ConfigError);
}

TEST(TrainStep, ParameterDisjointness) {
  for (const Regime r : {Regime::SupervisedAdversarial, Regime::AdversarialAugmentation, Regime::CganBaseline,
                         Regime::UnsupervisedOnly}) {
    const TrainingConfig rc = tiny_config(r);
    const auto batch = data::batch_for_iteration(tiny_pools(), rc.regime_batch(), rc.augmentation, 1, 0);
    const TrainerState start = initial_state(rc, tiny_pools().input_mean);
    TrainerState s = start;
    train_step(s, batch, rc, {.freeze_discriminator = true});
    EXPECT_EQ(bytes_of(*s.discriminator), bytes_of(*start.discriminator)) << loss::to_string(r);
    EXPECT_NE(bytes_of(s.simplifier), bytes_of(start.simplifier)) << loss::to_string(r);
    s = start;
    train_step(s, batch, rc, {.freeze_simplifier = true});
    EXPECT_EQ(bytes_of(s.simplifier), bytes_of(start.simplifier)) << loss::to_string(r);
    EXPECT_NE(bytes_of(*s.discriminator), bytes_of(*start.discriminator)) << loss::to_string(r);
  }
}

TEST(TrainStep, MseOnlyLeavesDiscriminatorUntouched) {
  const TrainingConfig adv = tiny_config();
  const Checkpoint start = make_checkpoint(initial_state(adv, tiny_pools().input_mean), adv, "", false, "pretrain");
  TrainingConfig c = tiny_config(Regime::MseOnly);
  TrainOptions opt;
  opt.initial = start;
  const TrainResult r = train::train(tiny_pools(), c, opt);
  ASSERT_TRUE(r.checkpoint.discriminator);
  EXPECT_EQ(bytes_of(*r.checkpoint.discriminator), bytes_of(*start.discriminator));
  EXPECT_NE(bytes_of(r.checkpoint.simplifier), bytes_of(start.simplifier));
  for (const auto& rec : r.records) {
    EXPECT_EQ(rec.grad_norm_d, 0.0);
    EXPECT_EQ(rec.loss.adv_real, 0.0);
    EXPECT_EQ(rec.loss.total_D, 0.0);
  }
}

TEST(TrainStep, StepDecreasesObjectiveOnTheSameBatch) {
  for (const Regime r : {Regime::MseOnly, Regime::AdversarialAugmentation}) {
    TrainingConfig c = tiny_config(r);
    c.alpha = c.beta = 0.01;
    TrainerState s = initial_state(c, tiny_pools().input_mean);
    const auto batch = data::batch_for_iteration(tiny_pools(), c.batch, c.augmentation, 2, 0);
    const double before = evaluate_batch(s, batch, c, 77).total_S;
    train_step(s, batch, c, {.freeze_discriminator = true});
    const double after = evaluate_batch(s, batch, c, 77).total_S;
    EXPECT_LT(after, before) << loss::to_string(r);
  }
}

TEST(TrainStep, NonFiniteLossNamesTheTerm) {
  const TrainingConfig c = tiny_config();
  TrainerState s = initial_state(c, tiny_pools().input_mean);
  auto batch = data::batch_for_iteration(tiny_pools(), c.batch, c.augmentation, 1, 0);
  batch.supervised_y[5] = std::nanf("");
  try {
    train_step(s, batch, c);
    FAIL() << "non-finite loss accepted";
  } catch (const NonFiniteLossError& e) {
    EXPECT_EQ(e.iteration(), 1);
    EXPECT_EQ(e.term(), "model_loss");
  }
}

TEST(TrainStep, LossBreakdownIsConsistent) {
  for (const Regime r : loss::all_regimes()) {
    const TrainingConfig c = tiny_config(r);
    TrainerState s = initial_state(c, tiny_pools().input_mean);
    const auto rec = train_step(s, data::batch_for_iteration(tiny_pools(), c.regime_batch(), c.augmentation, 1, 0), c);
    EXPECT_TRUE(loss::breakdown_consistent(rec.loss, r)) << loss::to_string(r);
    EXPECT_EQ(s.iteration, 1);
  }
}

TEST(Pretrain, ZeroIterationsEqualsInitialisation) {
  const TrainingConfig c = tiny_config();
  const Checkpoint ck = pretrain_supervised(tiny_pools(), c);
  const TrainerState init = initial_state(c, tiny_pools().input_mean);
  EXPECT_EQ(bytes_of(ck.simplifier), bytes_of(init.simplifier));
  EXPECT_EQ(bytes_of(*ck.discriminator), bytes_of(*init.discriminator));
  EXPECT_EQ(ck.provenance["stage"], "pretrain");
}

TEST(Pretrain, DeterministicAndImprovesValidation) {
  TrainingConfig c = tiny_config();
  c.pretrain_iterations = 40;
  const Checkpoint a = pretrain_supervised(tiny_pools(), c);
  const Checkpoint b = pretrain_supervised(tiny_pools(), c);
  EXPECT_EQ(serialize_checkpoint(a), serialize_checkpoint(b));
  EXPECT_EQ(a.iteration, 40);

  const auto validation = tiny_validation();
  const auto init = initial_state(c, tiny_pools().input_mean);
  const double before = validate_model(init.simplifier, init.input_mean, validation).mse;
  const double after = validate_model(a.simplifier, a.input_mean, validation).mse;
  EXPECT_LT(after, before);
}

TEST(Pretrain, EmptySupervisedPoolIsRejected) {
  data::DatasetPools pools = tiny_pools();
  pools.supervised.clear();
  EXPECT_THROW(pretrain_supervised(pools, tiny_config()), ConfigError);
}

TEST(Train, EmptyUnsupervisedPoolsFailBeforeTheFirstIteration) {
  data::DatasetPools pools = tiny_pools();
  pools.rough_only.clear();
  int steps = 0;
  TrainOptions opt;
  opt.on_record = [&](const TrainRecord&) { ++steps; };
  EXPECT_THROW(train::train(pools, tiny_config(), opt), ConfigError);
  EXPECT_EQ(steps, 0);
  pools = tiny_pools();
  pools.clean_only.clear();
  EXPECT_THROW(train::train(pools, tiny_config(Regime::UnsupervisedOnly), opt), ConfigError);
  EXPECT_NO_THROW(check_regime_pools(pools, tiny_config(Regime::SupervisedAdversarial)));
}

TEST(Train, WritesDeterministicLogsCheckpointsAndSamples) {
  TrainingConfig c = tiny_config();
  testkit::TempDir a, b;
  TrainOptions opt;
  opt.validation = tiny_validation();
  opt.output_dir = a.path();
  const TrainResult ra = train::train(tiny_pools(), c, opt);
  opt.output_dir = b.path();
  train::train(tiny_pools(), c, opt);
  EXPECT_EQ(read_file(a.path() / "logs/train.csv"), read_file(b.path() / "logs/train.csv"));
  EXPECT_EQ(read_file(a.path() / "checkpoints/latest.ckpt"), read_file(b.path() / "checkpoints/latest.ckpt"));
  for (const char* f : {"checkpoints/iter_00000002.ckpt", "checkpoints/iter_00000004.ckpt", "checkpoints/final.ckpt",
                        "samples/iter_00000004.png", "logs/validation.csv", "logs/timing.csv"})
    EXPECT_TRUE(fs::exists(a.path() / f)) << f;

  const std::string log = read_file(a.path() / "logs/train.csv");
  EXPECT_EQ(log.substr(0, log.find('\n')), csv_header());
  EXPECT_EQ(std::count(log.begin(), log.end(), '\n'), 5);
  ASSERT_EQ(ra.records.size(), 4u);
  for (std::size_t i = 0; i < ra.records.size(); ++i) EXPECT_EQ(ra.records[i].iteration, static_cast<int>(i) + 1);
  // Snapshots at 0, 2 and 4.
  EXPECT_EQ(ra.validation.size(), 3u);
  EXPECT_EQ(ra.checkpoint.iteration, 4);
}

TEST(Train, ResumeReproducesAnUninterruptedRun) {
  TrainingConfig c = tiny_config();
  c.iterations = 6;
  c.auto_balance = true;
  const Checkpoint start = pretrain_supervised(tiny_pools(), c);
  testkit::TempDir full, part;
  TrainOptions opt;
  opt.initial = start;
  opt.output_dir = full.path();
  const TrainResult whole = train::train(tiny_pools(), c, opt);

  // Interrupted after iteration 4: the logs ran ahead of the last checkpoint.
  fs::copy(full.path(), part.path(), fs::copy_options::recursive | fs::copy_options::overwrite_existing);
  fs::copy_file(full.path() / "checkpoints/iter_00000004.ckpt", part.path() / "checkpoints/latest.ckpt",
                fs::copy_options::overwrite_existing);
  fs::remove(part.path() / "checkpoints/iter_00000006.ckpt");
  opt.output_dir = part.path();
  opt.resume = true;
  const TrainResult resumed = train::train(tiny_pools(), c, opt);
  EXPECT_EQ(resumed.records.size(), 2u);
  EXPECT_EQ(serialize_checkpoint(resumed.checkpoint), serialize_checkpoint(whole.checkpoint));
  EXPECT_EQ(read_file(part.path() / "logs/train.csv"), read_file(full.path() / "logs/train.csv"));

  TrainingConfig changed = c;
  changed.seed += 1;
  EXPECT_THROW(train::train(tiny_pools(), changed, opt), ConfigError);
}

TEST(Compare, RepeatedRegimeGivesIdenticalRows) {
  TrainingConfig c = tiny_config();
  c.iterations = 3;
  CompareOptions opt;
  opt.validation = tiny_validation();
  const auto rows = compare_regimes(tiny_pools(), c, {Regime::MseOnly, Regime::MseOnly}, opt);
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[0].validation_mse, rows[1].validation_mse);
  EXPECT_EQ(rows[0].midtone_fraction, rows[1].midtone_fraction);
  EXPECT_EQ(serialize_checkpoint(rows[0].checkpoint), serialize_checkpoint(rows[1].checkpoint));
  const std::string csv = metrics_csv(rows);
  const auto first = csv.find('\n') + 1, second = csv.find('\n', first) + 1;
  EXPECT_EQ(csv.substr(first, second - first), csv.substr(second));
}

TEST(Compare, TablePopulatedAndPureAdversarialFlagged) {
  TrainingConfig c = tiny_config();
  c.iterations = 2;
  testkit::TempDir dir;
  CompareOptions opt;
  opt.validation = tiny_validation();
  opt.output_dir = dir.path();
  const auto rows = compare_regimes(
      tiny_pools(), c, {Regime::SupervisedAdversarial, Regime::AdversarialAugmentation, Regime::CganBaseline}, opt);
  ASSERT_EQ(rows.size(), 3u);
  for (const auto& r : rows) {
    EXPECT_TRUE(std::isfinite(r.validation_mse));
    EXPECT_GE(r.fool_rate, 0.0);
    EXPECT_LE(r.fool_rate, 1.0);
  }
  EXPECT_FALSE(rows[0].pure_adversarial);
  EXPECT_FALSE(rows[1].pure_adversarial);
  EXPECT_TRUE(rows[2].pure_adversarial);
  EXPECT_TRUE(fs::exists(dir.path() / "metrics.csv"));
  EXPECT_TRUE(fs::exists(dir.path() / "samples/compare_cgan_baseline.png"));
}
