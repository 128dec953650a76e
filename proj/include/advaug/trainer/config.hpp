#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "advaug/data/dataset.hpp"
#include "advaug/data/sampling.hpp"
#include "advaug/losses.hpp"
#include "advaug/netcore/layer_spec.hpp"

namespace advaug::train {

struct ModelConfig {
  int channel_base = 48;
  int channel_cap = 1024;
  // Uniform divisor on the simplification widths (4 for the desk preset).
  int width_divisor = 1;
  int disc_width_divisor = 1;
};

struct TrainingConfig {
  loss::Regime regime = loss::Regime::AdversarialAugmentation;
  double alpha = 8e-5;
  double beta = 8e-5;
  bool non_saturating = false;
  bool auto_balance = false;
  int balance_window = 20;
  std::int64_t iterations = 150000;
  std::int64_t pretrain_iterations = 10000;
  std::uint64_t seed = 1;
  data::BatchComposition batch;
  data::AugmentationConfig augmentation;
  ModelConfig model;
  double adadelta_rho = 0.95;
  double adadelta_epsilon = 1e-6;
  std::int64_t checkpoint_interval = 1000;
  // Validation MSE snapshots; 0 takes checkpoint_interval.
  std::int64_t validation_interval = 0;
  int prefetch_depth = 2;

  // Range checks; raises ConfigError naming the key.
  void validate() const;

  net::NetworkSpec simplifier_spec() const;
  // Single input channel, or two (x stacked with y) for the cgan baseline.
  net::NetworkSpec discriminator_spec() const;
  loss::LossWeights loss_weights() const;
  // Batch counts with the pools the regime does not use set to 0.
  data::BatchComposition regime_batch() const;
};

struct DataConfig {
  // Dataset root in the load_dataset layout; empty selects the synthetic generator.
  std::string dir;
  // Held-out pairs in the same layout; empty generates synthetic ones.
  std::string validation_dir;
  bool pencil_mode = false;
  bool keep_unsupervised = false;
  data::SyntheticSketchSpec synthetic;
  int synthetic_pairs = 68;
  int synthetic_rough = 85;
  int synthetic_clean = 109;
  // Style of the unsupervised pools and of the validation set ("" keeps synthetic.style).
  std::string unsupervised_style;
  std::string validation_style;
  int validation_count = 8;
};

struct RunConfig {
  TrainingConfig training;
  DataConfig data;
};

// One `key = value` assignment; `line` is 0 for command-line overrides.
struct Setting {
  std::string key;
  std::string value;
  int line = 0;
};

// Parses `key = value` lines; '#' starts a comment, blank lines are ignored.
std::vector<Setting> parse_settings(const std::string& text, const std::string& origin = "config");
std::vector<Setting> read_settings_file(const std::filesystem::path& path);
// Splits a command-line `key=value` override.
Setting parse_override(const std::string& arg);

// Applies settings in order. Unknown keys and unparsable values raise ConfigError.
void apply_settings(RunConfig& config, const std::vector<Setting>& settings);
void apply_setting(RunConfig& config, const std::string& key, const std::string& value);

// Every key with its current value, in schema order; parse_settings of the
// result reproduces the configuration exactly.
std::string to_config_text(const RunConfig& config);

struct SchemaEntry {
  std::string key;
  std::string description;
  bool affects_training;
};
const std::vector<SchemaEntry>& config_schema();

// FNV-1a hash (16 hex digits) of the keys that shape the training trajectory.
std::string config_fingerprint(const RunConfig& config);

// Pools described by the data.* and synthetic.* settings: loaded from
// data.dir, otherwise generated from the training seed. Pencil mode swaps
// the pairs after loading.
data::DatasetPools make_pools(const RunConfig& config);

// Held-out pairs from data.validation_dir, otherwise a synthetic set drawn
// from a stream disjoint from the training pools (swapped in pencil mode).
std::vector<data::ImagePair> make_validation(const RunConfig& config);

// Canonical text used for doubles in config files and logs: the shortest
// decimal that parses back to the same value.
std::string format_double(double v);

}  // namespace advaug::train
