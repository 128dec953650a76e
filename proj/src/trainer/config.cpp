#include "advaug/trainer/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

#include "advaug/errors.hpp"
#include "advaug/netcore/architectures.hpp"

namespace advaug::train {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const std::string& expected) {
  throw ConfigError("bad value '" + value + "' for " + key + " (expected " + expected + ")");
}

template <typename Int>
Int to_int(const std::string& key, const std::string& v) {
  Int out{};
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) bad_value(key, v, "an integer");
  return out;
}

double to_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) bad_value(key, v, "a number");
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  bad_value(key, v, "true or false");
}

// Comma-separated list; each item is a decimal or a fraction such as 7/6.
std::vector<double> to_levels(const std::string& key, const std::string& v) {
  std::vector<double> out;
  if (trim(v).empty()) return out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    const auto slash = item.find('/');
    if (slash == std::string::npos) {
      out.push_back(to_double(key, item));
    } else {
      const double den = to_double(key, trim(item.substr(slash + 1)));
      if (den == 0.0) bad_value(key, item, "a non-zero denominator");
      out.push_back(to_double(key, trim(item.substr(0, slash))) / den);
    }
  }
  return out;
}

std::string str(bool b) { return b ? "true" : "false"; }

template <typename Int>
std::string str(Int v) {
  return std::to_string(v);
}

struct Entry {
  SchemaEntry info;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define ADVAUG_INT(KEY, FIELD, TYPE, TRAINS, DESC)                                                     \
  Entry {                                                                                              \
    {KEY, DESC, TRAINS}, [](RunConfig& c, const std::string& v) { c.FIELD = to_int<TYPE>(KEY, v); }, \
        [](const RunConfig& c) { return str(c.FIELD); }                                                \
  }
#define ADVAUG_DOUBLE(KEY, FIELD, TRAINS, DESC)                                                    \
  Entry {                                                                                          \
    {KEY, DESC, TRAINS}, [](RunConfig& c, const std::string& v) { c.FIELD = to_double(KEY, v); }, \
        [](const RunConfig& c) { return format_double(c.FIELD); }                                  \
  }
#define ADVAUG_BOOL(KEY, FIELD, TRAINS, DESC)                                                    \
  Entry {                                                                                        \
    {KEY, DESC, TRAINS}, [](RunConfig& c, const std::string& v) { c.FIELD = to_bool(KEY, v); }, \
        [](const RunConfig& c) { return str(c.FIELD); }                                          \
  }
#define ADVAUG_STRING(KEY, FIELD, TRAINS, DESC)                                        \
  Entry {                                                                              \
    {KEY, DESC, TRAINS}, [](RunConfig& c, const std::string& v) { c.FIELD = v; },     \
        [](const RunConfig& c) { return c.FIELD; }                                     \
  }

const std::vector<Entry>& entries() {
  static const std::vector<Entry> table = {
      Entry{{"regime", "mse_only | supervised_adversarial | adversarial_augmentation | cgan_baseline | unsupervised_only",
             true},
            [](RunConfig& c, const std::string& v) { c.training.regime = loss::parse_regime(v); },
            [](const RunConfig& c) { return loss::to_string(c.training.regime); }},
      ADVAUG_DOUBLE("alpha", training.alpha, true, "weight of the supervised adversarial terms"),
      ADVAUG_DOUBLE("beta", training.beta, true, "weight of the unsupervised adversarial terms"),
      ADVAUG_BOOL("non_saturating", training.non_saturating, true, "generator minimises -log D(S(x))"),
      ADVAUG_BOOL("auto_balance", training.auto_balance, true, "rescale adversarial gradients into the [0.1, 10] band"),
      ADVAUG_INT("balance_window", training.balance_window, int, true, "iterations averaged by the balancer"),
      ADVAUG_INT("iterations", training.iterations, std::int64_t, false, "adversarial (or mse_only) iterations"),
      ADVAUG_INT("pretrain_iterations", training.pretrain_iterations, std::int64_t, true, "MSE-only pretraining iterations"),
      ADVAUG_INT("seed", training.seed, std::uint64_t, true, "seed of every random stream"),
      ADVAUG_INT("batch.supervised", training.batch.supervised, int, true, "supervised pairs per batch"),
      ADVAUG_INT("batch.rough", training.batch.unsup_rough, int, true, "rough-only patches per batch"),
      ADVAUG_INT("batch.clean", training.batch.unsup_clean, int, true, "clean-only patches per batch"),
      ADVAUG_INT("augment.patch_size", training.augmentation.patch_size, int, true, "square patch side (multiple of 64)"),
      Entry{{"augment.downsample_levels", "extra downsampling factors, comma separated (fractions allowed)", true},
            [](RunConfig& c, const std::string& v) {
              c.training.augmentation.downsample_levels = to_levels("augment.downsample_levels", v);
            },
            [](const RunConfig& c) {
              std::string out;
              for (double l : c.training.augmentation.downsample_levels) out += (out.empty() ? "" : ",") + format_double(l);
              return out;
            }},
      ADVAUG_DOUBLE("augment.threshold", training.augmentation.threshold, true, "targets below this become ink"),
      ADVAUG_DOUBLE("augment.identity_probability", training.augmentation.identity_probability, true,
                    "chance a supervised pair is replaced by (y*, y*)"),
      ADVAUG_BOOL("augment.rotate_flip", training.augmentation.rotate_flip, true, "random quarter turns and mirror"),
      ADVAUG_BOOL("augment.size_weighted", training.augmentation.size_weighted, true, "pick images by pixel area"),
      ADVAUG_INT("model.channel_base", training.model.channel_base, int, true, "width of the first hourglass stage"),
      ADVAUG_INT("model.channel_cap", training.model.channel_cap, int, true, "maximum hourglass width"),
      ADVAUG_INT("model.width_divisor", training.model.width_divisor, int, true, "divides every hourglass width"),
      ADVAUG_INT("model.disc_width_divisor", training.model.disc_width_divisor, int, true,
                 "divides every discriminator width"),
      ADVAUG_DOUBLE("optim.rho", training.adadelta_rho, true, "ADADELTA decay"),
      ADVAUG_DOUBLE("optim.epsilon", training.adadelta_epsilon, true, "ADADELTA conditioning constant"),
      ADVAUG_INT("checkpoint_interval", training.checkpoint_interval, std::int64_t, false,
                 "iterations between checkpoints and sample grids"),
      ADVAUG_INT("validation_interval", training.validation_interval, std::int64_t, false,
                 "iterations between validation snapshots (0: checkpoint_interval)"),
      ADVAUG_INT("prefetch_depth", training.prefetch_depth, int, false, "batches prepared ahead of training"),
      ADVAUG_STRING("data.dir", data.dir, true, "dataset root (empty: synthetic data)"),
      ADVAUG_STRING("data.validation_dir", data.validation_dir, true, "held-out pairs (empty: synthetic)"),
      ADVAUG_BOOL("data.pencil_mode", data.pencil_mode, true, "swap inputs and targets for pencil generation"),
      ADVAUG_BOOL("data.keep_unsupervised", data.keep_unsupervised, true, "keep single-sided pools in pencil mode"),
      ADVAUG_INT("data.validation_count", data.validation_count, int, true, "synthetic validation pairs"),
      ADVAUG_STRING("data.unsupervised_style", data.unsupervised_style, true,
                    "stroke style of the synthetic single-sided pools (empty: synthetic.style)"),
      ADVAUG_STRING("data.validation_style", data.validation_style, true,
                    "stroke style of the synthetic validation set (empty: synthetic.style)"),
      ADVAUG_INT("synthetic.pairs", data.synthetic_pairs, int, true, "generated supervised pairs"),
      ADVAUG_INT("synthetic.rough", data.synthetic_rough, int, true, "generated rough-only drawings"),
      ADVAUG_INT("synthetic.clean", data.synthetic_clean, int, true, "generated clean-only drawings"),
      ADVAUG_INT("synthetic.canvas", data.synthetic.canvas, int, true, "generated image side"),
      ADVAUG_INT("synthetic.min_strokes", data.synthetic.min_strokes, int, true, "fewest strokes per drawing"),
      ADVAUG_INT("synthetic.max_strokes", data.synthetic.max_strokes, int, true, "most strokes per drawing"),
      ADVAUG_DOUBLE("synthetic.stroke_width", data.synthetic.stroke_width, true, "line width in pixels"),
      ADVAUG_DOUBLE("synthetic.jitter", data.synthetic.jitter, true, "control point jitter of rough copies"),
      ADVAUG_INT("synthetic.overdraw", data.synthetic.overdraw, int, true, "rough copies per clean stroke"),
      ADVAUG_DOUBLE("synthetic.pencil_tone", data.synthetic.pencil_tone, true, "lightest rough stroke intensity"),
      ADVAUG_INT("synthetic.construction_lines", data.synthetic.construction_lines, int, true,
                 "faint guide lines per rough drawing"),
      ADVAUG_DOUBLE("synthetic.noise_density", data.synthetic.noise_density, true, "graphite speckle density"),
      Entry{{"synthetic.style", "curves | geometric", true},
            [](RunConfig& c, const std::string& v) { c.data.synthetic.style = data::parse_sketch_style(v); },
            [](const RunConfig& c) { return data::to_string(c.data.synthetic.style); }},
  };
  return table;
}

#undef ADVAUG_INT
#undef ADVAUG_DOUBLE
#undef ADVAUG_BOOL
#undef ADVAUG_STRING

void require(bool ok, const std::string& message) {
  if (!ok) throw ConfigError(message);
}

}  // namespace

std::string format_double(double v) {
  char buf[64];
  const auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

void TrainingConfig::validate() const {
  require(alpha >= 0.0 && beta >= 0.0, "alpha and beta must be non-negative");
  require(iterations > 0, "iterations must be positive");
  require(pretrain_iterations >= 0, "pretrain_iterations must be non-negative");
  require(balance_window > 0, "balance_window must be positive");
  require(batch.supervised >= 0 && batch.unsup_rough >= 0 && batch.unsup_clean >= 0,
          "batch counts must be non-negative");
  require(model.channel_base > 0 && model.channel_cap > 0, "model.channel_base and model.channel_cap must be positive");
  require(model.width_divisor > 0 && model.disc_width_divisor > 0, "width divisors must be positive");
  require(adadelta_rho > 0.0 && adadelta_rho < 1.0, "optim.rho must lie in (0, 1)");
  require(adadelta_epsilon > 0.0, "optim.epsilon must be positive");
  require(checkpoint_interval > 0, "checkpoint_interval must be positive");
  require(validation_interval >= 0, "validation_interval must be non-negative");
  require(prefetch_depth > 0, "prefetch_depth must be positive");
  augmentation.validate();
  if (loss::uses_discriminator(regime))
    require(augmentation.patch_size % 64 == 0, "augment.patch_size must be a multiple of 64 for the discriminator");
  else
    require(augmentation.patch_size % 8 == 0, "augment.patch_size must be a multiple of 8");
  const data::BatchComposition b = regime_batch();
  if (regime != loss::Regime::UnsupervisedOnly) require(b.supervised > 0, "batch.supervised must be positive");
  if (loss::uses_unsupervised_pools(regime))
    require(b.unsup_rough > 0 && b.unsup_clean > 0, loss::to_string(regime) + " needs batch.rough and batch.clean > 0");
}

net::NetworkSpec TrainingConfig::simplifier_spec() const {
  const auto schedule = net::scale_schedule(net::default_channel_schedule(model.channel_base, model.channel_cap),
                                            model.width_divisor);
  return net::build_simplification_network(schedule);
}

net::NetworkSpec TrainingConfig::discriminator_spec() const {
  const int channels = regime == loss::Regime::CganBaseline ? 2 : 1;
  return net::build_discriminator(augmentation.patch_size, model.disc_width_divisor, channels);
}

loss::LossWeights TrainingConfig::loss_weights() const { return {alpha, beta, non_saturating}; }

data::BatchComposition TrainingConfig::regime_batch() const {
  data::BatchComposition b = batch;
  if (!loss::uses_unsupervised_pools(regime)) b.unsup_rough = b.unsup_clean = 0;
  if (regime == loss::Regime::UnsupervisedOnly) b.supervised = 0;
  return b;
}

std::vector<Setting> parse_settings(const std::string& text, const std::string& origin) {
  std::vector<Setting> out;
  std::istringstream in(text);
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(origin + ":" + std::to_string(number) + ": expected 'key = value', got '" + line + "'");
    out.push_back({trim(line.substr(0, eq)), trim(line.substr(eq + 1)), number});
  }
  return out;
}

std::vector<Setting> read_settings_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_settings(ss.str(), path.string());
}

Setting parse_override(const std::string& arg) {
  const auto eq = arg.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + arg + "' is not of the form key=value");
  return {trim(arg.substr(0, eq)), trim(arg.substr(eq + 1)), 0};
}

void apply_setting(RunConfig& config, const std::string& key, const std::string& value) {
  for (const auto& e : entries()) {
    if (e.info.key == key) {
      e.set(config, value);
      return;
    }
  }
  throw ConfigError("unknown config key '" + key + "'");
}

void apply_settings(RunConfig& config, const std::vector<Setting>& settings) {
  for (const auto& s : settings) {
    try {
      apply_setting(config, s.key, s.value);
    } catch (const ConfigError& e) {
      if (s.line == 0) throw;
      throw ConfigError("line " + std::to_string(s.line) + ": " + e.what());
    }
  }
}

std::string to_config_text(const RunConfig& config) {
  std::string out;
  for (const auto& e : entries()) out += e.info.key + " = " + e.get(config) + "\n";
  return out;
}

const std::vector<SchemaEntry>& config_schema() {
  static const std::vector<SchemaEntry> schema = [] {
    std::vector<SchemaEntry> s;
    for (const auto& e : entries()) s.push_back(e.info);
    return s;
  }();
  return schema;
}

std::string config_fingerprint(const RunConfig& config) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& e : entries()) {
    if (!e.info.affects_training) continue;
    for (char c : e.info.key + "=" + e.get(config) + "\n") {
      h ^= static_cast<unsigned char>(c);
      h *= 0x100000001b3ULL;
    }
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace advaug::train
