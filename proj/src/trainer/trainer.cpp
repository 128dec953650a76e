#include "advaug/trainer/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "advaug/data/image_io.hpp"
#include "advaug/errors.hpp"
#include "advaug/inference.hpp"
#include "advaug/random.hpp"

namespace advaug::train {

namespace fs = std::filesystem;

namespace {

// Stream tags for derive_seed.
constexpr std::uint64_t kInitSimplifier = 0x5101;
constexpr std::uint64_t kInitDiscriminator = 0xd101;
constexpr std::uint64_t kPretrainBatches = 0xb001;
constexpr std::uint64_t kTrainBatches = 0xb002;
constexpr std::uint64_t kDropout = 0xd201;

// Concatenation along the batch axis of {C, N, H, W} tensors; empty parts are skipped.
Tensor<float> concat_batch(std::initializer_list<const Tensor<float>*> parts) {
  int c = 0, n = 0, h = 0, w = 0;
  for (const auto* p : parts) {
    if (p->empty()) continue;
    if (n == 0) {
      c = p->channels();
      h = p->height();
      w = p->width();
    } else if (p->channels() != c || p->height() != h || p->width() != w) {
      throw PreconditionError("cannot concatenate batches of different shapes");
    }
    n += p->batch();
  }
  Tensor<float> out(c, n, h, w);
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  for (int ch = 0; ch < c; ++ch) {
    float* dst = out.data() + static_cast<std::size_t>(ch) * n * plane;
    for (const auto* p : parts) {
      if (p->empty()) continue;
      const std::size_t block = static_cast<std::size_t>(p->batch()) * plane;
      std::copy_n(p->data() + ch * block, block, dst);
      dst += block;
    }
  }
  return out;
}

Tensor<float> slice_batch(const Tensor<float>& t, int start, int count) {
  Tensor<float> out(t.channels(), count, t.height(), t.width());
  const std::size_t plane = t.plane();
  for (int ch = 0; ch < t.channels(); ++ch)
    std::copy_n(t.data() + (static_cast<std::size_t>(ch) * t.batch() + start) * plane, count * plane,
                out.data() + static_cast<std::size_t>(ch) * count * plane);
  return out;
}

// Copies `src` (one channel) into batch slots [start, start + src.batch()) of channel `channel` of `dst`.
void add_into(Tensor<float>& dst, int start, const Tensor<float>& src, int src_channel = 0) {
  const std::size_t plane = dst.plane();
  const float* s = src.data() + static_cast<std::size_t>(src_channel) * src.batch() * plane;
  float* d = dst.data() + static_cast<std::size_t>(start) * plane;
  for (std::size_t i = 0; i < static_cast<std::size_t>(src.batch()) * plane; ++i) d[i] += s[i];
}

// {1, N, H, W} x and y stacked into {2, N, H, W}.
Tensor<float> stack_channels(const Tensor<float>& x, const Tensor<float>& y) {
  Tensor<float> out(2, x.batch(), x.height(), x.width());
  std::copy_n(x.data(), x.size(), out.data());
  std::copy_n(y.data(), y.size(), out.data() + x.size());
  return out;
}

std::vector<double> to_doubles(const Tensor<float>& t, int start, int count) {
  std::vector<double> out(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) out[static_cast<std::size_t>(i)] = t[static_cast<std::size_t>(start + i)];
  return out;
}

void fill_grad(Tensor<float>& g, int start, const std::vector<double>& values) {
  for (std::size_t i = 0; i < values.size(); ++i) g[start + i] = static_cast<float>(values[i]);
}

void check_finite(double v, std::int64_t iteration, const char* term) {
  if (!std::isfinite(v)) throw NonFiniteLossError(iteration, term);
}

void check_breakdown(const loss::LossBreakdown& b, std::int64_t iteration) {
  check_finite(b.model_loss, iteration, "model_loss");
  check_finite(b.adv_real, iteration, "adv_real");
  check_finite(b.adv_fake, iteration, "adv_fake");
  check_finite(b.unsup_real, iteration, "unsup_real");
  check_finite(b.unsup_fake, iteration, "unsup_fake");
  check_finite(b.total_S, iteration, "total_S");
  check_finite(b.total_D, iteration, "total_D");
}

void add_scaled(net::ParameterSet<float>& into, const net::ParameterSet<float>& from, double scale) {
  auto a = net::learnable_tensors(into);
  const auto b = net::learnable_tensors(from);
  for (std::size_t k = 0; k < a.size(); ++k)
    for (std::size_t i = 0; i < a[k]->size(); ++i)
      (*a[k])[i] = static_cast<float>((*a[k])[i] + scale * (*b[k])[i]);
}

// Discriminator input for one batch and the offsets of each group.
struct DiscriminatorBatch {
  Tensor<float> input;
  int real_sup = 0, fake_sup = 0, real_unsup = 0, fake_unsup = 0;  // offsets
  int ns = 0, nc = 0, nr = 0;                                      // group sizes
};

DiscriminatorBatch discriminator_batch(const data::Batch& batch, const Tensor<float>& pred_sup,
                                       const Tensor<float>& pred_unsup, loss::Regime regime) {
  DiscriminatorBatch d;
  d.ns = batch.supervised_count();
  d.nc = batch.clean_count();
  d.nr = batch.rough_count();
  if (regime == loss::Regime::CganBaseline) {
    const Tensor<float> real = stack_channels(batch.supervised_x, batch.supervised_y);
    const Tensor<float> fake = stack_channels(batch.supervised_x, pred_sup);
    d.input = concat_batch({&real, &fake});
  } else {
    d.input = concat_batch({&batch.supervised_y, &pred_sup, &batch.unsup_y, &pred_unsup});
  }
  d.fake_sup = d.ns;
  d.real_unsup = 2 * d.ns;
  d.fake_unsup = 2 * d.ns + d.nc;
  return d;
}

loss::DiscriminatorOutputs split_outputs(const Tensor<float>& p, const DiscriminatorBatch& d) {
  return {to_doubles(p, d.real_sup, d.ns), to_doubles(p, d.fake_sup, d.ns), to_doubles(p, d.real_unsup, d.nc),
          to_doubles(p, d.fake_unsup, d.nr)};
}

Tensor<float> output_gradient(const loss::DiscriminatorOutputs& g, const DiscriminatorBatch& d, int total) {
  Tensor<float> out(1, total, 1, 1);
  if (!g.real_sup.empty()) fill_grad(out, d.real_sup, g.real_sup);
  if (!g.fake_sup.empty()) fill_grad(out, d.fake_sup, g.fake_sup);
  if (!g.real_unsup.empty()) fill_grad(out, d.real_unsup, g.real_unsup);
  if (!g.fake_unsup.empty()) fill_grad(out, d.fake_unsup, g.fake_unsup);
  return out;
}

void check_probabilities(const Tensor<float>& p, std::int64_t iteration) {
  for (std::size_t i = 0; i < p.size(); ++i) check_finite(p[i], iteration, "discriminator_output");
}

struct SimplifierPass {
  Tensor<float> pred_sup;
  Tensor<float> pred_unsup;
  double model_loss = 0.0;
};

SimplifierPass run_simplifier(const net::Model<float>& s, const data::Batch& batch, loss::Regime regime,
                              net::ForwardTape<float>* tape) {
  const Tensor<float> x = concat_batch({&batch.supervised_x, &batch.unsup_x});
  const Tensor<float> y = net::forward(s, x, net::Mode::Train, tape);
  SimplifierPass p;
  const int ns = batch.supervised_count();
  p.pred_sup = slice_batch(y, 0, ns);
  p.pred_unsup = slice_batch(y, ns, batch.rough_count());
  if (loss::has_model_term(regime) && ns > 0) p.model_loss = loss::mse_loss(p.pred_sup, batch.supervised_y);
  return p;
}

std::string format(double v) { return format_double(v); }

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
}

// Keeps the header and the rows whose leading iteration is <= `last`.
void truncate_log(const fs::path& path, std::int64_t last) {
  std::ifstream in(path);
  if (!in) return;
  std::string line, kept;
  bool header = true;
  while (std::getline(in, line)) {
    if (header || std::stoll(line.substr(0, line.find(','))) <= last) kept += line + "\n";
    header = false;
  }
  in.close();
  write_text(path, kept);
}

void write_samples(const fs::path& path, const net::Model<float>& simplifier, double input_mean,
                   const std::vector<data::ImagePair>& validation) {
  if (validation.empty()) return;
  const net::Model<float> folded = net::fold_batchnorm(simplifier);
  std::vector<std::vector<Image>> rows;
  for (std::size_t i = 0; i < validation.size() && i < 4; ++i)
    rows.push_back({validation[i].x, infer::predict(folded, input_mean, validation[i].x), validation[i].y});
  data::write_png(path, data::make_grid(rows));
}

std::string iteration_name(const char* prefix, std::int64_t it, const char* ext) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s%08lld%s", prefix, static_cast<long long>(it), ext);
  return buf;
}

}  // namespace

double balance_gradients(const std::vector<GradientNorms>& window, double multiplier, double low, double high) {
  double model = 0.0, adversarial = 0.0;
  for (const auto& n : window) {
    model += n.model;
    adversarial += n.adversarial;
  }
  if (!(model > 0.0) || !(adversarial > 0.0)) return multiplier;
  const double ratio = adversarial / model;
  if (multiplier * ratio > high) return high / ratio;
  if (multiplier * ratio < low) return low / ratio;
  return multiplier;
}

std::string csv_header() {
  return "iteration,regime,model_loss,adv_real,adv_fake,unsup_real,unsup_fake,total_S,total_D,grad_norm_S,grad_norm_D";
}

std::string csv_row(const TrainRecord& r) {
  const auto& b = r.loss;
  return std::to_string(r.iteration) + "," + loss::to_string(r.regime) + "," + format(b.model_loss) + "," +
         format(b.adv_real) + "," + format(b.adv_fake) + "," + format(b.unsup_real) + "," + format(b.unsup_fake) +
         "," + format(b.total_S) + "," + format(b.total_D) + "," + format(r.grad_norm_s) + "," +
         format(r.grad_norm_d);
}

TrainerState initial_state(const TrainingConfig& config, double input_mean) {
  TrainerState s;
  s.simplifier = net::make_model<float>(config.simplifier_spec(), derive_seed(config.seed, {kInitSimplifier}));
  if (loss::uses_discriminator(config.regime))
    s.discriminator =
        net::make_model<float>(config.discriminator_spec(), derive_seed(config.seed, {kInitDiscriminator}));
  s.simplifier_optimizer = make_adadelta_state(s.simplifier.params, config.adadelta_rho, config.adadelta_epsilon);
  if (s.discriminator)
    s.discriminator_optimizer =
        make_adadelta_state(s.discriminator->params, config.adadelta_rho, config.adadelta_epsilon);
  s.input_mean = input_mean;
  return s;
}

TrainerState state_from_checkpoint(const Checkpoint& c, const TrainingConfig& config, bool resume) {
  if (c.folded) throw ConfigError("cannot train from a folded (inference-only) checkpoint");
  if (!(c.simplifier.spec == config.simplifier_spec()))
    throw ConfigError("checkpoint simplification network does not match the model.* settings");
  TrainerState s = initial_state(config, c.input_mean);
  s.simplifier = c.simplifier;
  // Regimes without a discriminator carry the checkpoint's one through untouched.
  if (c.discriminator && (!s.discriminator || c.discriminator->spec == s.discriminator->spec))
    s.discriminator = c.discriminator;
  if (resume) {
    s.iteration = c.iteration;
    if (c.simplifier_optimizer) s.simplifier_optimizer = *c.simplifier_optimizer;
    if (c.discriminator_optimizer) s.discriminator_optimizer = *c.discriminator_optimizer;
    s.balance_multiplier = c.balance_multiplier;
    for (const auto& n : c.balance_window) s.balance_window.push_back({n[0], n[1]});
  }
  return s;
}

Checkpoint make_checkpoint(const TrainerState& state, const TrainingConfig& config, const std::string& fingerprint,
                           bool pencil_mode, const std::string& stage) {
  Checkpoint c;
  c.simplifier = state.simplifier;
  c.discriminator = state.discriminator;
  c.input_mean = state.input_mean;
  c.iteration = state.iteration;
  c.fingerprint = fingerprint;
  c.pencil_mode = pencil_mode;
  c.regime = loss::to_string(config.regime);
  c.balance_multiplier = state.balance_multiplier;
  for (const auto& n : state.balance_window) c.balance_window.push_back({n.model, n.adversarial});
  c.provenance = {{"stage", stage}};
  if (state.simplifier_optimizer.initialized()) c.simplifier_optimizer = state.simplifier_optimizer;
  if (state.discriminator && state.discriminator_optimizer.initialized())
    c.discriminator_optimizer = state.discriminator_optimizer;
  return c;
}

TrainRecord train_step(TrainerState& state, const data::Batch& batch, const TrainingConfig& config,
                       const StepOptions& options) {
  const loss::Regime regime = config.regime;
  const auto weights = config.loss_weights();
  const std::int64_t it = state.iteration + 1;
  TrainRecord record;
  record.iteration = it;
  record.regime = regime;

  net::ForwardTape<float> s_tape;
  const SimplifierPass sp = run_simplifier(state.simplifier, batch, regime, &s_tape);
  check_finite(sp.model_loss, it, "model_loss");
  const int ns = batch.supervised_count();
  const int n_out = ns + batch.rough_count();
  const int side = batch.supervised_count() > 0 ? batch.supervised_x.height() : batch.unsup_x.height();

  Tensor<float> g_model(1, n_out, side, side);
  if (loss::has_model_term(regime) && ns > 0)
    add_into(g_model, 0, loss::mse_gradient(sp.pred_sup, batch.supervised_y));

  if (!loss::uses_discriminator(regime)) {
    record.loss = loss::generator_objective(sp.model_loss, {}, regime, weights);
    check_breakdown(record.loss, it);
    net::ParameterSet<float> grads = net::zeros_like(state.simplifier.params);
    net::backward(state.simplifier, s_tape, g_model, &grads, false);
    record.grad_norm_s = net::l2_norm(grads);
    if (!options.freeze_simplifier) {
      adadelta_update(state.simplifier.params, grads, state.simplifier_optimizer);
      net::update_running_stats(state.simplifier, s_tape);
    }
    state.iteration = it;
    return record;
  }
  if (!state.discriminator) throw PreconditionError(loss::to_string(regime) + " needs a discriminator");
  net::Model<float>& dnet = *state.discriminator;
  loss::validate_discriminator(regime, dnet.spec);
  Rng rng(derive_seed(config.seed, {kDropout, static_cast<std::uint64_t>(state.iteration)}));

  // D step.
  const DiscriminatorBatch db = discriminator_batch(batch, sp.pred_sup, sp.pred_unsup, regime);
  const int n_d = db.input.batch();
  {
    net::ForwardTape<float> d_tape;
    const Tensor<float> p = net::forward(dnet, db.input, net::Mode::Train, &d_tape, &rng);
    check_probabilities(p, it);
    const loss::DiscriminatorOutputs d = split_outputs(p, db);
    loss::check_pools(d, regime, ns > 0);
    record.loss = loss::generator_objective(sp.model_loss, d, regime, weights);
    check_breakdown(record.loss, it);
    net::ParameterSet<float> grads = net::zeros_like(dnet.params);
    net::backward(dnet, d_tape, output_gradient(loss::discriminator_loss_gradient(d, regime, weights), db, n_d),
                  &grads, false);
    record.grad_norm_d = net::l2_norm(grads);
    if (!options.freeze_discriminator) {
      adadelta_update(dnet.params, grads, state.discriminator_optimizer);
      net::update_running_stats(dnet, d_tape);
    }
  }

  // S step through the updated D; only the fake groups carry gradient.
  net::ForwardTape<float> d_tape;
  const Tensor<float> p = net::forward(dnet, db.input, net::Mode::Train, &d_tape, &rng);
  check_probabilities(p, it);
  const loss::DiscriminatorOutputs d = split_outputs(p, db);
  const Tensor<float> d_input_grad =
      net::backward(dnet, d_tape, output_gradient(loss::generator_loss_gradient(d, regime, weights), db, n_d),
                    nullptr, true);
  Tensor<float> g_adv(1, n_out, side, side);
  const int fake_channel = regime == loss::Regime::CganBaseline ? 1 : 0;
  if (ns > 0) add_into(g_adv, 0, slice_batch(d_input_grad, db.fake_sup, ns), fake_channel);
  if (db.nr > 0) add_into(g_adv, ns, slice_batch(d_input_grad, db.fake_unsup, db.nr));

  net::ParameterSet<float> grads = net::zeros_like(state.simplifier.params);
  if (config.auto_balance) {
    net::ParameterSet<float> g_adv_params = net::zeros_like(state.simplifier.params);
    net::backward(state.simplifier, s_tape, g_model, &grads, false);
    net::backward(state.simplifier, s_tape, g_adv, &g_adv_params, false);
    state.balance_window.push_back({net::l2_norm(grads), net::l2_norm(g_adv_params)});
    while (state.balance_window.size() > static_cast<std::size_t>(config.balance_window))
      state.balance_window.pop_front();
    state.balance_multiplier =
        balance_gradients({state.balance_window.begin(), state.balance_window.end()}, state.balance_multiplier);
    add_scaled(grads, g_adv_params, state.balance_multiplier);
  } else {
    for (std::size_t i = 0; i < g_model.size(); ++i) g_model[i] += g_adv[i];
    net::backward(state.simplifier, s_tape, g_model, &grads, false);
  }
  record.adversarial_scale = state.balance_multiplier;
  record.grad_norm_s = net::l2_norm(grads);
  check_finite(record.grad_norm_s, it, "grad_norm_S");
  if (!options.freeze_simplifier) {
    adadelta_update(state.simplifier.params, grads, state.simplifier_optimizer);
    net::update_running_stats(state.simplifier, s_tape);
  }
  state.iteration = it;
  return record;
}

loss::LossBreakdown evaluate_batch(const TrainerState& state, const data::Batch& batch, const TrainingConfig& config,
                                   std::uint64_t dropout_seed) {
  const SimplifierPass sp = run_simplifier(state.simplifier, batch, config.regime, nullptr);
  if (!loss::uses_discriminator(config.regime))
    return loss::generator_objective(sp.model_loss, {}, config.regime, config.loss_weights());
  Rng rng(dropout_seed);
  const DiscriminatorBatch db = discriminator_batch(batch, sp.pred_sup, sp.pred_unsup, config.regime);
  const Tensor<float> p = net::forward(*state.discriminator, db.input, net::Mode::Train, nullptr, &rng);
  return loss::generator_objective(sp.model_loss, split_outputs(p, db), config.regime, config.loss_weights());
}

void check_regime_pools(const data::DatasetPools& pools, const TrainingConfig& config) {
  const std::string name = loss::to_string(config.regime);
  if (loss::uses_supervised_pool(config.regime) && pools.supervised.empty())
    throw ConfigError(name + " needs supervised pairs, but the supervised pool is empty");
  if (loss::uses_unsupervised_pools(config.regime) && (pools.rough_only.empty() || pools.clean_only.empty()))
    throw ConfigError(name + " needs non-empty rough-only and clean-only pools");
  const data::BatchComposition b = config.regime_batch();
  const std::vector<std::pair<data::Pool, int>> used = {
      {data::Pool::Supervised, b.supervised}, {data::Pool::Rough, b.unsup_rough}, {data::Pool::Clean, b.unsup_clean}};
  for (const auto& [pool, count] : used)
    if (count > 0) data::image_probabilities(pools, pool, config.augmentation);
}

Checkpoint pretrain_supervised(const data::DatasetPools& pools, const TrainingConfig& config,
                               const std::string& fingerprint) {
  config.validate();
  if (pools.supervised.empty()) throw ConfigError("pretraining needs supervised pairs, but the supervised pool is empty");
  TrainingConfig mse = config;
  mse.regime = loss::Regime::MseOnly;
  TrainerState state = initial_state(config, pools.input_mean);
  const data::BatchComposition comp{config.batch.supervised, 0, 0};
  data::image_probabilities(pools, data::Pool::Supervised, config.augmentation);
  {
    data::BatchPrefetcher batches(pools, comp, config.augmentation, derive_seed(config.seed, {kPretrainBatches}), 0,
                                  config.pretrain_iterations, static_cast<std::size_t>(config.prefetch_depth));
    for (std::int64_t it = 0; it < config.pretrain_iterations; ++it) train_step(state, batches.next(), mse);
  }
  // Pretraining optimizer state is not carried into the adversarial phase.
  state.simplifier_optimizer = make_adadelta_state(state.simplifier.params, config.adadelta_rho, config.adadelta_epsilon);
  Checkpoint c = make_checkpoint(state, config, fingerprint, pools.pencil_mode, "pretrain");
  c.regime = loss::to_string(loss::Regime::MseOnly);
  c.simplifier_optimizer.reset();
  c.discriminator_optimizer.reset();
  return c;
}

ValidationSnapshot validate_model(const net::Model<float>& simplifier, double input_mean,
                                  const std::vector<data::ImagePair>& validation) {
  ValidationSnapshot v;
  if (validation.empty()) return v;
  const net::Model<float> folded = net::fold_batchnorm(simplifier);
  for (const auto& pair : validation) {
    const Image out = infer::predict(folded, input_mean, pair.x);
    v.mse += loss::mse_loss(out, pair.y);
    v.midtone_fraction += infer::midtone_fraction(out);
  }
  v.mse /= static_cast<double>(validation.size());
  v.midtone_fraction /= static_cast<double>(validation.size());
  return v;
}

TrainResult train(const data::DatasetPools& pools, const TrainingConfig& config, const TrainOptions& options) {
  config.validate();
  check_regime_pools(pools, config);
  const std::string fingerprint =
      options.fingerprint.empty() ? config_fingerprint(RunConfig{config, {}}) : options.fingerprint;
  const bool writing = !options.output_dir.empty();
  const fs::path ckpt_dir = options.output_dir / "checkpoints";
  const fs::path log_dir = options.output_dir / "logs";
  const fs::path sample_dir = options.output_dir / "samples";
  const fs::path latest = ckpt_dir / "latest.ckpt";

  TrainerState state;
  bool resumed = false;
  if (options.resume && writing && fs::exists(latest)) {
    const Checkpoint c = load_checkpoint(latest);
    if (c.fingerprint != fingerprint)
      throw ConfigError("cannot resume: " + latest.string() + " was written with a different configuration");
    state = state_from_checkpoint(c, config, true);
    resumed = true;
  } else if (options.initial) {
    state = state_from_checkpoint(*options.initial, config, false);
    state.input_mean = pools.input_mean;
  } else {
    state = state_from_checkpoint(pretrain_supervised(pools, config, fingerprint), config, false);
  }

  std::ofstream log, timing, vlog;
  if (writing) {
    for (const auto& d : {ckpt_dir, log_dir, sample_dir}) fs::create_directories(d);
    if (resumed) {
      truncate_log(log_dir / "train.csv", state.iteration);
      truncate_log(log_dir / "validation.csv", state.iteration);
      truncate_log(log_dir / "timing.csv", state.iteration);
    } else {
      write_text(log_dir / "train.csv", csv_header() + "\n");
      write_text(log_dir / "validation.csv", "iteration,validation_mse,midtone_fraction\n");
      write_text(log_dir / "timing.csv", "iteration,seconds\n");
    }
    log.open(log_dir / "train.csv", std::ios::app | std::ios::binary);
    vlog.open(log_dir / "validation.csv", std::ios::app | std::ios::binary);
    timing.open(log_dir / "timing.csv", std::ios::app | std::ios::binary);
  }

  TrainResult result;
  const std::int64_t vint = config.validation_interval > 0 ? config.validation_interval : config.checkpoint_interval;
  auto snapshot = [&] {
    if (options.validation.empty()) return;
    ValidationSnapshot v = validate_model(state.simplifier, state.input_mean, options.validation);
    v.iteration = state.iteration;
    result.validation.push_back(v);
    if (writing)
      vlog << v.iteration << "," << format(v.mse) << "," << format(v.midtone_fraction) << "\n" << std::flush;
  };
  if (!resumed && state.iteration == 0) snapshot();

  {
    data::BatchPrefetcher batches(pools, config.regime_batch(), config.augmentation,
                                  derive_seed(config.seed, {kTrainBatches}), state.iteration, config.iterations,
                                  static_cast<std::size_t>(config.prefetch_depth));
    while (state.iteration < config.iterations) {
      const data::Batch batch = batches.next();
      const auto t0 = std::chrono::steady_clock::now();
      TrainRecord rec = train_step(state, batch, config);
      rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      if (writing) {
        log << csv_row(rec) << "\n" << std::flush;
        timing << rec.iteration << "," << rec.seconds << "\n";
      }
      if (options.on_record) options.on_record(rec);
      result.records.push_back(rec);

      const std::int64_t k = state.iteration;
      const bool last = k == config.iterations;
      if (k % vint == 0 || last) snapshot();
      if (writing && (k % config.checkpoint_interval == 0 || last)) {
        const Checkpoint c = make_checkpoint(state, config, fingerprint, pools.pencil_mode, "train");
        save_checkpoint(c, ckpt_dir / iteration_name("iter_", k, ".ckpt"));
        save_checkpoint(c, latest);
        write_samples(sample_dir / iteration_name("iter_", k, ".png"), state.simplifier, state.input_mean,
                      options.validation);
      }
    }
  }
  result.checkpoint = make_checkpoint(state, config, fingerprint, pools.pencil_mode, "train");
  if (writing) save_checkpoint(result.checkpoint, ckpt_dir / "final.ckpt");
  return result;
}

double fool_rate(const net::Model<float>& simplifier, const net::Model<float>& discriminator, double input_mean,
                 const std::vector<data::ImagePair>& validation, loss::Regime regime) {
  const int p = discriminator.spec.input_size;
  const net::Model<float> folded = net::fold_batchnorm(simplifier);
  std::vector<Image> xs, ys;
  for (const auto& pair : validation) {
    if (pair.x.height < p || pair.x.width < p) continue;
    const Image out = infer::predict(folded, input_mean, pair.x);
    const int y0 = (pair.x.height - p) / 2, x0 = (pair.x.width - p) / 2;
    Image cx(p, p), cy(p, p);
    for (int i = 0; i < p; ++i)
      for (int j = 0; j < p; ++j) {
        cx.at(i, j) = static_cast<float>(pair.x.at(y0 + i, x0 + j) - input_mean);
        cy.at(i, j) = out.at(y0 + i, x0 + j);
      }
    xs.push_back(std::move(cx));
    ys.push_back(std::move(cy));
  }
  if (ys.empty()) return std::nan("");
  const Tensor<float> fake = data::stack_images(ys);
  const Tensor<float> input =
      regime == loss::Regime::CganBaseline ? stack_channels(data::stack_images(xs), fake) : fake;
  const Tensor<float> prob = net::forward(discriminator, input, net::Mode::Eval);
  int fooled = 0;
  for (std::size_t i = 0; i < prob.size(); ++i) fooled += prob[i] > 0.5f;
  return static_cast<double>(fooled) / static_cast<double>(prob.size());
}

std::vector<RegimeMetrics> compare_regimes(const data::DatasetPools& pools, const TrainingConfig& base,
                                           const std::vector<loss::Regime>& regimes,
                                           const CompareOptions& options) {
  for (const auto r : regimes) {
    TrainingConfig cfg = base;
    cfg.regime = r;
    cfg.validate();
    check_regime_pools(pools, cfg);
  }
  const std::string fingerprint =
      options.fingerprint.empty() ? config_fingerprint(RunConfig{base, {}}) : options.fingerprint;
  const Checkpoint pretrained =
      options.pretrained ? *options.pretrained : pretrain_supervised(pools, base, fingerprint);
  const bool writing = !options.output_dir.empty();

  std::vector<RegimeMetrics> rows;
  for (const auto r : regimes) {
    TrainingConfig cfg = base;
    cfg.regime = r;
    TrainOptions topt;
    topt.initial = pretrained;
    topt.validation = options.validation;
    topt.fingerprint = fingerprint;
    if (writing) topt.output_dir = options.output_dir / "runs" / loss::to_string(r);
    TrainResult res = train(pools, cfg, topt);

    RegimeMetrics m;
    m.regime = r;
    const ValidationSnapshot v = validate_model(res.checkpoint.simplifier, res.checkpoint.input_mean, options.validation);
    m.validation_mse = v.mse;
    m.midtone_fraction = v.midtone_fraction;
    m.fool_rate = res.checkpoint.discriminator && !options.validation.empty()
                      ? fool_rate(res.checkpoint.simplifier, *res.checkpoint.discriminator,
                                  res.checkpoint.input_mean, options.validation, r)
                      : std::nan("");
    m.pure_adversarial = !loss::has_model_term(r);
    m.checkpoint = std::move(res.checkpoint);
    if (writing)
      write_samples(options.output_dir / "samples" / ("compare_" + loss::to_string(r) + ".png"),
                    m.checkpoint.simplifier, m.checkpoint.input_mean, options.validation);
    rows.push_back(std::move(m));
  }
  if (writing) {
    fs::create_directories(options.output_dir);
    write_text(options.output_dir / "metrics.csv", metrics_csv(rows));
  }
  return rows;
}

std::string metrics_csv(const std::vector<RegimeMetrics>& rows) {
  std::string out = "regime,validation_mse,midtone_fraction,fool_rate,pure_adversarial\n";
  for (const auto& m : rows)
    out += loss::to_string(m.regime) + "," + format(m.validation_mse) + "," + format(m.midtone_fraction) + "," +
           (std::isnan(m.fool_rate) ? std::string("nan") : format(m.fool_rate)) + "," +
           (m.pure_adversarial ? "true" : "false") + "\n";
  return out;
}

}  // namespace advaug::train
