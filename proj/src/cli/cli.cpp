#include "advaug/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>

#include "advaug/data/image_io.hpp"
#include "advaug/errors.hpp"
#include "advaug/inference.hpp"
#include "advaug/random.hpp"
#include "advaug/trainer/trainer.hpp"

namespace advaug::cli {

namespace fs = std::filesystem;

namespace {

struct ConfigArgs {
  std::string config;
  std::vector<std::string> overrides;
  std::string seed;
  std::string out;
};

void add_config_args(CLI::App* sub, ConfigArgs& a) {
  sub->add_option("--config,-c", a.config, "settings file (key = value lines)");
  sub->add_option("--seed", a.seed, "shorthand for seed=<n>");
  sub->add_option("--out,-o", a.out, std::string("output directory (default: $") + kOutputDirEnv + " or runs/<command>)");
  sub->add_option("overrides", a.overrides, "key=value settings applied after the file");
}

void require_file(const std::string& path, const char* what) {
  if (path.empty()) throw ConfigError(std::string("missing ") + what);
  if (!fs::exists(path)) throw DataError(std::string(what) + " not found: " + path);
}

// Defaults < file < overrides < --seed; validated before any work starts.
train::RunConfig resolve(const ConfigArgs& a) {
  train::RunConfig rc;
  if (!a.config.empty()) {
    require_file(a.config, "config file");
    train::apply_settings(rc, train::read_settings_file(a.config));
  }
  std::vector<train::Setting> settings;
  for (const auto& o : a.overrides) settings.push_back(train::parse_override(o));
  if (!a.seed.empty()) settings.push_back({"seed", a.seed, 0});
  train::apply_settings(rc, settings);
  rc.training.validate();
  return rc;
}

fs::path output_dir(const ConfigArgs& a, const std::string& command) {
  if (!a.out.empty()) return a.out;
  if (const char* env = std::getenv(kOutputDirEnv); env && *env) return fs::path(env) / command;
  return fs::path("runs") / command;
}

void write_snapshot(const fs::path& dir, const train::RunConfig& rc) {
  fs::create_directories(dir);
  std::ofstream f(dir / "config.cfg", std::ios::binary | std::ios::trunc);
  if (!f) throw Error("cannot write " + (dir / "config.cfg").string());
  f << train::to_config_text(rc);
}

std::string fmt(double v) { return train::format_double(v); }

int gen_data(const ConfigArgs& a, std::ostream& out) {
  train::RunConfig rc = resolve(a);
  if (!rc.data.dir.empty()) throw ConfigError("gen-data generates synthetic pools; unset data.dir");
  rc.data.pencil_mode = false;
  const fs::path dir = output_dir(a, "gen-data");
  const data::DatasetPools pools = train::make_pools(rc);
  data::save_dataset(pools, dir / "train");
  data::DatasetPools validation;
  rc.data.validation_dir.clear();
  validation.supervised = train::make_validation(rc);
  data::save_dataset(validation, dir / "validation");
  write_snapshot(dir, rc);
  out << "wrote " << pools.supervised.size() << " pairs, " << pools.rough_only.size() << " rough, "
      << pools.clean_only.size() << " clean and " << validation.supervised.size() << " validation pairs to "
      << dir.string() << "\n";
  return kOk;
}

std::function<void(const train::TrainRecord&)> progress(std::ostream& out, std::int64_t every, std::int64_t total) {
  return [&out, every, total](const train::TrainRecord& r) {
    if (every <= 0 || (r.iteration % every != 0 && r.iteration != total)) return;
    out << "iteration " << r.iteration << "/" << total << "  model_loss " << fmt(r.loss.model_loss) << "  total_S "
        << fmt(r.loss.total_S) << "  total_D " << fmt(r.loss.total_D) << std::endl;
  };
}

int train_cmd(const ConfigArgs& a, const std::string& initial, bool resume, std::int64_t log_every, std::ostream& out) {
  const train::RunConfig rc = resolve(a);
  const fs::path dir = output_dir(a, "train");
  const data::DatasetPools pools = train::make_pools(rc);
  train::check_regime_pools(pools, rc.training);
  const auto validation = train::make_validation(rc);
  write_snapshot(dir, rc);

  train::TrainOptions opt;
  opt.output_dir = dir;
  opt.resume = resume;
  opt.validation = validation;
  opt.fingerprint = train::config_fingerprint(rc);
  opt.on_record = progress(out, log_every, rc.training.iterations);
  const bool resuming = resume && fs::exists(dir / "checkpoints" / "latest.ckpt");
  if (!initial.empty()) {
    require_file(initial, "initial checkpoint");
    opt.initial = train::load_checkpoint(initial);
  } else if (!resuming) {
    out << "pretraining for " << rc.training.pretrain_iterations << " iterations" << std::endl;
    opt.initial = train::pretrain_supervised(pools, rc.training, opt.fingerprint);
    fs::create_directories(dir / "checkpoints");
    train::save_checkpoint(*opt.initial, dir / "checkpoints" / "pretrain.ckpt");
  }
  const train::TrainResult r = train::train(pools, rc.training, opt);
  out << "final checkpoint: " << (dir / "checkpoints" / "final.ckpt").string() << "\n";
  if (!r.validation.empty())
    out << "validation mse " << fmt(r.validation.back().mse) << "  midtone_fraction "
        << fmt(r.validation.back().midtone_fraction) << "\n";
  return kOk;
}

int compare_cmd(const ConfigArgs& a, const std::string& regime_list, const std::string& initial, std::ostream& out) {
  const train::RunConfig rc = resolve(a);
  std::vector<loss::Regime> regimes;
  std::stringstream names(regime_list);
  for (std::string n; std::getline(names, n, ',');)
    if (!n.empty()) regimes.push_back(loss::parse_regime(n));
  if (regimes.empty()) regimes = loss::all_regimes();
  const fs::path dir = output_dir(a, "compare");
  const data::DatasetPools pools = train::make_pools(rc);
  train::CompareOptions opt;
  opt.validation = train::make_validation(rc);
  opt.output_dir = dir;
  opt.fingerprint = train::config_fingerprint(rc);
  for (const auto r : regimes) {
    train::TrainingConfig c = rc.training;
    c.regime = r;
    c.validate();
    train::check_regime_pools(pools, c);
  }
  write_snapshot(dir, rc);
  if (!initial.empty()) {
    require_file(initial, "initial checkpoint");
    opt.pretrained = train::load_checkpoint(initial);
  }
  const auto rows = train::compare_regimes(pools, rc.training, regimes, opt);
  out << train::metrics_csv(rows);
  return kOk;
}

struct ImageArgs {
  std::string checkpoint;
  std::string input;
  std::string output;
  double threshold = -1.0;
  int tile = 0;
  int overlap = -1;
  bool grid = false;
  long long max_pixels = 2048LL * 2048LL;
};

void add_image_args(CLI::App* sub, ImageArgs& a) {
  sub->add_option("--checkpoint,-m", a.checkpoint, "checkpoint archive")->required();
  sub->add_option("--input,-i", a.input, "image file or directory")->required();
  sub->add_option("--output,-o", a.output, "output file (or directory for a directory input)")->required();
  sub->add_option("--threshold", a.threshold, "zero output pixels below this value");
  sub->add_option("--tile", a.tile, "process in tiles of this many pixels");
  sub->add_option("--overlap", a.overlap, "tile context in pixels (default: receptive radius + 8)");
  sub->add_option("--max-pixels", a.max_pixels, "largest untiled input");
  sub->add_flag("--grid", a.grid, "write input and output side by side");
}

infer::InferenceOptions inference_options(const ImageArgs& a) {
  infer::InferenceOptions o;
  if (a.threshold >= 0.0) {
    o.apply_threshold = true;
    o.threshold = a.threshold;
  }
  if (a.tile > 0) {
    o.tiling.enabled = true;
    o.tiling.tile = a.tile;
    o.tiling.overlap = a.overlap;
  }
  o.max_pixels = a.max_pixels;
  return o;
}

std::vector<std::pair<fs::path, fs::path>> image_jobs(const ImageArgs& a) {
  require_file(a.input, "input");
  std::vector<std::pair<fs::path, fs::path>> jobs;
  if (!fs::is_directory(a.input)) {
    jobs.emplace_back(a.input, a.output);
    return jobs;
  }
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(a.input))
    if (e.is_regular_file() && data::is_supported_image(e.path())) files.push_back(e.path());
  std::sort(files.begin(), files.end());
  if (files.empty()) throw DataError("no images in " + a.input);
  for (const auto& f : files) jobs.emplace_back(f, fs::path(a.output) / (f.stem().string() + ".png"));
  return jobs;
}

template <typename Fn>
int image_cmd(const ImageArgs& a, Fn&& apply, std::ostream& out) {
  require_file(a.checkpoint, "checkpoint");
  const train::Checkpoint ck = train::fold_for_inference(train::load_checkpoint(a.checkpoint));
  const infer::InferenceOptions opt = inference_options(a);
  for (const auto& [in, dst] : image_jobs(a)) {
    const Image image = data::read_image(in);
    const Image result = apply(ck, image, opt);
    if (dst.has_parent_path()) fs::create_directories(dst.parent_path());
    data::write_png(dst, a.grid ? data::make_grid({{image, result}}) : result);
    out << in.string() << " -> " << dst.string() << "\n";
  }
  return kOk;
}

struct SingleArgs {
  std::string checkpoint;
  std::string input;
  std::string output;
  std::string save_checkpoint;
  int steps = 100;
  std::optional<double> beta;
  bool non_saturating = false;
};

int optimize_single(const ConfigArgs& c, const SingleArgs& a, std::ostream& out) {
  const train::RunConfig rc = resolve(c);
  require_file(a.checkpoint, "checkpoint");
  require_file(a.input, "input");
  const train::Checkpoint base = train::load_checkpoint(a.checkpoint);
  const Image target = data::read_image(a.input);
  const data::DatasetPools pools = train::make_pools(rc);
  infer::SingleImageOptConfig cfg;
  cfg.steps = a.steps;
  cfg.beta = a.beta.value_or(rc.training.beta);
  cfg.non_saturating = a.non_saturating || rc.training.non_saturating;
  cfg.seed = rc.training.seed;
  if (base.discriminator) cfg.patch_size = base.discriminator->spec.input_size;
  const infer::SingleImageResult r = infer::single_image_optimize(base, target, pools, cfg);
  if (fs::path(a.output).has_parent_path()) fs::create_directories(fs::path(a.output).parent_path());
  data::write_png(a.output, r.prediction);
  if (!a.save_checkpoint.empty()) train::save_checkpoint(r.adapted, a.save_checkpoint);
  out << "fake term before " << fmt(r.fake_term_before) << "  after " << fmt(r.fake_term_after) << "\n";
  return kOk;
}

int export_cmd(const std::string& in, const std::string& dst, std::ostream& out) {
  require_file(in, "checkpoint");
  const train::Checkpoint ck = train::load_checkpoint(in);
  if (ck.folded) {
    out << "checkpoint is already folded; written unchanged\n";
    train::save_checkpoint(ck, dst);
    return kOk;
  }
  const train::Checkpoint folded = train::fold_for_inference(ck);
  // Report the fold error on a fixed probe image.
  Rng rng(derive_seed(0xf01d, {static_cast<std::uint64_t>(ck.iteration)}));
  Image probe(64, 64);
  for (auto& v : probe.pixels) v = static_cast<float>(uniform01(rng));
  const Image a = infer::predict(ck.simplifier, ck.input_mean, probe);
  const Image b = infer::predict(folded.simplifier, folded.input_mean, probe);
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    worst = std::max(worst, static_cast<double>(std::abs(a.pixels[i] - b.pixels[i])));
  train::save_checkpoint(folded, dst);
  out << "folded " << in << " -> " << dst << "  max |folded - unfolded| " << fmt(worst) << "\n";
  return kOk;
}

int eval_cmd(const ConfigArgs& c, const std::string& checkpoint, std::ostream& out) {
  const train::RunConfig rc = resolve(c);
  require_file(checkpoint, "checkpoint");
  const train::Checkpoint ck = train::fold_for_inference(train::load_checkpoint(checkpoint));
  const auto validation = train::make_validation(rc);
  if (validation.empty()) throw ConfigError("validation set is empty");
  double mse = 0.0, copy = 0.0, mid = 0.0, near = 0.0;
  for (const auto& p : validation) {
    const Image y = infer::simplify(ck, p.x);
    mse += loss::mse_loss(y, p.y);
    copy += loss::mse_loss(p.x, p.y);
    mid += infer::midtone_fraction(y);
    near += infer::midtone_near_strokes(y, p.x);
  }
  const double n = static_cast<double>(validation.size());
  out << "pairs,validation_mse,copy_input_mse,midtone_fraction,midtone_near_strokes\n"
      << validation.size() << "," << fmt(mse / n) << "," << fmt(copy / n) << "," << fmt(mid / n) << ","
      << fmt(near / n) << "\n";
  return kOk;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Sketch simplification with adversarial augmentation", "advaug"};
  app.require_subcommand(1);

  ConfigArgs gen_args, train_args, compare_args, single_cfg, eval_args;
  std::string train_initial, compare_initial, eval_checkpoint, export_in, export_out;
  bool resume = false;
  std::int64_t log_every = 100;
  std::string regimes;
  ImageArgs simplify_args, pencil_args;
  SingleArgs single_args;

  auto* gen = app.add_subcommand("gen-data", "write synthetic training and validation pools");
  add_config_args(gen, gen_args);

  auto* tr = app.add_subcommand("train", "pretrain, then train the configured regime");
  add_config_args(tr, train_args);
  tr->add_option("--initial", train_initial, "start from this checkpoint instead of pretraining");
  tr->add_flag("--resume", resume, "continue from <out>/checkpoints/latest.ckpt");
  tr->add_option("--log-every", log_every, "progress line interval (0: silent)");

  auto* cmp = app.add_subcommand("compare", "train several regimes from one pretrained checkpoint");
  add_config_args(cmp, compare_args);
  cmp->add_option("--regimes", regimes, "comma-separated regimes to compare (default: all)");
  cmp->add_option("--initial", compare_initial, "shared pretrained checkpoint");

  auto* simp = app.add_subcommand("simplify", "simplify rough sketches");
  add_image_args(simp, simplify_args);

  auto* pen = app.add_subcommand("pencil", "render pencil drawings with a pencil-mode checkpoint");
  add_image_args(pen, pencil_args);

  auto* single = app.add_subcommand("optimize-single", "adapt a checkpoint to one image, then simplify it");
  add_config_args(single, single_cfg);
  single->add_option("--checkpoint,-m", single_args.checkpoint, "checkpoint with a discriminator")->required();
  single->add_option("--input,-i", single_args.input, "target image")->required();
  single->add_option("--output", single_args.output, "simplified output image")->required();
  single->add_option("--save-checkpoint", single_args.save_checkpoint, "write the adapted checkpoint here");
  single->add_option("--steps", single_args.steps, "adaptation steps");
  single->add_option("--beta", single_args.beta, "weight of the unsupervised adversarial terms (default: beta setting)");
  single->add_flag("--non-saturating", single_args.non_saturating, "non-saturating generator loss (default: non_saturating setting)");

  auto* exp = app.add_subcommand("export", "fold batch normalisation into an inference-only checkpoint");
  exp->add_option("input", export_in, "source checkpoint")->required();
  exp->add_option("output", export_out, "folded checkpoint")->required();

  auto* ev = app.add_subcommand("eval", "validation metrics of a checkpoint");
  add_config_args(ev, eval_args);
  ev->add_option("--checkpoint,-m", eval_checkpoint, "checkpoint archive")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return kUsage;
  }

  try {
    if (*gen) return gen_data(gen_args, out);
    if (*tr) return train_cmd(train_args, train_initial, resume, log_every, out);
    if (*cmp) return compare_cmd(compare_args, regimes, compare_initial, out);
    if (*simp)
      return image_cmd(
          simplify_args,
          [](const train::Checkpoint& c, const Image& im, const infer::InferenceOptions& o) {
            return infer::simplify(c, im, o);
          },
          out);
    if (*pen)
      return image_cmd(
          pencil_args,
          [](const train::Checkpoint& c, const Image& im, const infer::InferenceOptions& o) {
            return infer::pencil_generate(c, im, o);
          },
          out);
    if (*single) return optimize_single(single_cfg, single_args, out);
    if (*exp) return export_cmd(export_in, export_out, out);
    if (*ev) return eval_cmd(eval_args, eval_checkpoint, out);
  } catch (const CheckpointError& e) {
    err << "error: " << e.what() << "\n";
    return kModelError;
  } catch (const StructuralError& e) {
    err << "error: " << e.what() << "\n";
    return kModelError;
  } catch (const NonFiniteLossError& e) {
    err << "error: " << e.what() << "\n";
    return kModelError;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kInputError;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return kInputError;
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << "\n";
    return kInternalError;
  }
  err << app.help();
  return kUsage;
}

}  // namespace advaug::cli
