#pragma once

#include <cstdint>
#include <deque>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "advaug/data/dataset.hpp"
#include "advaug/data/sampling.hpp"
#include "advaug/losses.hpp"
#include "advaug/trainer/checkpoint.hpp"
#include "advaug/trainer/config.hpp"
#include "advaug/trainer/optimizer.hpp"

namespace advaug::train {

// Norms of the two parts of S's gradient: the model loss and the
// adversarial terms (before the balance multiplier).
struct GradientNorms {
  double model = 0.0;
  double adversarial = 0.0;
};

inline constexpr double kBalanceLow = 0.1;
inline constexpr double kBalanceHigh = 10.0;

// Multiplier on the adversarial terms after observing `window`. The running
// ratio is sum(adversarial) / sum(model); when multiplier * ratio leaves
// [low, high] the multiplier is moved to the nearest band edge. Zero sums
// leave it unchanged.
double balance_gradients(const std::vector<GradientNorms>& window, double multiplier, double low = kBalanceLow,
                         double high = kBalanceHigh);

struct TrainRecord {
  std::int64_t iteration = 0;
  loss::Regime regime = loss::Regime::MseOnly;
  loss::LossBreakdown loss;
  double grad_norm_s = 0.0;
  double grad_norm_d = 0.0;
  double adversarial_scale = 1.0;
  double seconds = 0.0;
};

// Header and row of the per-iteration training log.
std::string csv_header();
std::string csv_row(const TrainRecord& record);

struct TrainerState {
  net::Model<float> simplifier;
  std::optional<net::Model<float>> discriminator;
  AdadeltaState simplifier_optimizer;
  AdadeltaState discriminator_optimizer;
  double balance_multiplier = 1.0;
  std::deque<GradientNorms> balance_window;
  double input_mean = 0.0;
  // Completed iterations; also selects the dropout stream of the next step.
  std::int64_t iteration = 0;
};

// Fresh S and D (when the regime uses one) initialised from the config seed.
TrainerState initial_state(const TrainingConfig& config, double input_mean);

// S (and D when its spec matches the regime) taken from `checkpoint`;
// optimizer state is restored only when `resume` is set.
TrainerState state_from_checkpoint(const Checkpoint& checkpoint, const TrainingConfig& config, bool resume);

Checkpoint make_checkpoint(const TrainerState& state, const TrainingConfig& config, const std::string& fingerprint,
                           bool pencil_mode, const std::string& stage);

struct StepOptions {
  bool freeze_discriminator = false;
  bool freeze_simplifier = false;
};

// One iteration: D is updated on the batch, then S on the same batch
// through the updated D. Raises NonFiniteLossError naming the first
// non-finite term.
TrainRecord train_step(TrainerState& state, const data::Batch& batch, const TrainingConfig& config,
                       const StepOptions& options = {});

// Loss breakdown of S and D on a batch without updating anything; the D
// pass runs in training mode with dropout drawn from `dropout_seed`.
loss::LossBreakdown evaluate_batch(const TrainerState& state, const data::Batch& batch, const TrainingConfig& config,
                                   std::uint64_t dropout_seed);

// Raises ConfigError when the pools cannot feed the configured regime.
void check_regime_pools(const data::DatasetPools& pools, const TrainingConfig& config);

// S trained with the MSE loss alone for pretrain_iterations; D left at its
// initialisation. Deterministic in (pools, config).
Checkpoint pretrain_supervised(const data::DatasetPools& pools, const TrainingConfig& config,
                               const std::string& fingerprint = "");

struct ValidationSnapshot {
  std::int64_t iteration = 0;
  double mse = 0.0;
  double midtone_fraction = 0.0;
};

// Mean MSE and mid-tone fraction of the folded S over whole validation images.
ValidationSnapshot validate_model(const net::Model<float>& simplifier, double input_mean,
                                  const std::vector<data::ImagePair>& validation);

struct TrainOptions {
  // Starting point (normally the pretrained checkpoint); when absent,
  // pretraining runs first.
  std::optional<Checkpoint> initial;
  // checkpoints/, logs/ and samples/ are written here; empty writes nothing.
  std::filesystem::path output_dir;
  // Continue from output_dir/checkpoints/latest.ckpt when it exists.
  bool resume = false;
  std::vector<data::ImagePair> validation;
  std::string fingerprint;
  std::function<void(const TrainRecord&)> on_record;
};

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<TrainRecord> records;
  std::vector<ValidationSnapshot> validation;
};

TrainResult train(const data::DatasetPools& pools, const TrainingConfig& config, const TrainOptions& options = {});

struct RegimeMetrics {
  loss::Regime regime = loss::Regime::MseOnly;
  double validation_mse = 0.0;
  double midtone_fraction = 0.0;
  // Share of validation crops D scores above 0.5; NaN without a discriminator.
  double fool_rate = 0.0;
  // The S objective has no model loss (cgan baseline, unsupervised only).
  bool pure_adversarial = false;
  Checkpoint checkpoint;
};

struct CompareOptions {
  std::vector<data::ImagePair> validation;
  std::filesystem::path output_dir;
  // Shared starting point; pretraining runs once when absent.
  std::optional<Checkpoint> pretrained;
  std::string fingerprint;
};

// One model per regime from the same pretrained checkpoint and seed. Writes
// metrics.csv and samples/compare_<regime>.png when output_dir is set.
std::vector<RegimeMetrics> compare_regimes(const data::DatasetPools& pools, const TrainingConfig& base,
                                           const std::vector<loss::Regime>& regimes,
                                           const CompareOptions& options = {});

std::string metrics_csv(const std::vector<RegimeMetrics>& rows);

// Share of `patch_size` crops of each validation output that D scores above 0.5.
double fool_rate(const net::Model<float>& simplifier, const net::Model<float>& discriminator, double input_mean,
                 const std::vector<data::ImagePair>& validation, loss::Regime regime);

}  // namespace advaug::train
