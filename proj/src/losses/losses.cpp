#include "advaug/losses.hpp"

#include <algorithm>
#include <cmath>

#include "advaug/errors.hpp"

namespace advaug::loss {

namespace {

struct RegimeName {
  Regime regime;
  const char* name;
};

constexpr RegimeName kRegimeNames[] = {
    {Regime::MseOnly, "mse_only"},
    {Regime::SupervisedAdversarial, "supervised_adversarial"},
    {Regime::AdversarialAugmentation, "adversarial_augmentation"},
    {Regime::CganBaseline, "cgan_baseline"},
    {Regime::UnsupervisedOnly, "unsupervised_only"},
};

// Weight on the supervised adversarial terms (alpha; 1 for the cgan baseline).
double supervised_weight(Regime regime, const LossWeights& w) {
  switch (regime) {
    case Regime::SupervisedAdversarial:
    case Regime::AdversarialAugmentation:
      return w.alpha;
    case Regime::CganBaseline:
      return 1.0;
    default:
      return 0.0;
  }
}

double unsupervised_weight(Regime regime, const LossWeights& w) {
  switch (regime) {
    case Regime::AdversarialAugmentation:
    case Regime::UnsupervisedOnly:
      return w.beta;
    default:
      return 0.0;
  }
}

double mean_log(const std::vector<double>& p) {
  double sum = 0.0;
  for (double v : p) sum += safe_log(v);
  return sum / static_cast<double>(p.size());
}

double mean_log_complement(const std::vector<double>& p) {
  double sum = 0.0;
  for (double v : p) sum += safe_log(1.0 - v);
  return sum / static_cast<double>(p.size());
}

// Generator-side term for one fake pool.
double generator_term(const std::vector<double>& fake, double weight, bool non_saturating) {
  if (weight == 0.0 || fake.empty()) return 0.0;
  return non_saturating ? -weight * mean_log(fake) : weight * mean_log_complement(fake);
}

void check_probabilities(const std::vector<double>& p) {
  for (double v : p) {
    if (!(v >= 0.0 && v <= 1.0)) throw DomainError("discriminator output " + std::to_string(v) + " outside [0,1]");
  }
}

}  // namespace

std::string to_string(Regime regime) {
  for (const auto& e : kRegimeNames) {
    if (e.regime == regime) return e.name;
  }
  return "?";
}

Regime parse_regime(const std::string& name) {
  for (const auto& e : kRegimeNames) {
    if (name == e.name) return e.regime;
  }
  throw ConfigError("unknown regime '" + name + "'");
}

const std::vector<Regime>& all_regimes() {
  static const std::vector<Regime> regimes = {Regime::MseOnly, Regime::SupervisedAdversarial,
                                              Regime::AdversarialAugmentation, Regime::CganBaseline,
                                              Regime::UnsupervisedOnly};
  return regimes;
}

bool has_model_term(Regime regime) {
  return regime == Regime::MseOnly || regime == Regime::SupervisedAdversarial ||
         regime == Regime::AdversarialAugmentation;
}

bool uses_discriminator(Regime regime) { return regime != Regime::MseOnly; }

bool uses_supervised_pool(Regime regime) { return regime != Regime::UnsupervisedOnly; }

bool uses_unsupervised_pools(Regime regime) {
  return regime == Regime::AdversarialAugmentation || regime == Regime::UnsupervisedOnly;
}

void validate_discriminator(Regime regime, const net::NetworkSpec& discriminator) {
  const int expected = regime == Regime::CganBaseline ? 2 : 1;
  if (discriminator.input_channels != expected)
    throw ConfigError("regime " + to_string(regime) + " needs a discriminator with " + std::to_string(expected) +
                      " input channel(s), got " + std::to_string(discriminator.input_channels));
  if (discriminator.output_arity != net::OutputArity::Scalar)
    throw ConfigError("discriminator must produce a scalar probability");
}

double safe_log(double p) {
  if (!(p >= 0.0 && p <= 1.0)) throw DomainError("safe_log argument " + std::to_string(p) + " outside [0,1]");
  return std::log(std::clamp(p, kLogEpsilon, 1.0 - kLogEpsilon));
}

double safe_log_derivative(double p) {
  if (!(p >= 0.0 && p <= 1.0)) throw DomainError("safe_log argument " + std::to_string(p) + " outside [0,1]");
  if (p <= kLogEpsilon || p >= 1.0 - kLogEpsilon) return 0.0;
  return 1.0 / p;
}

template <typename T>
double mse_loss(const Tensor<T>& prediction, const Tensor<T>& target) {
  if (!prediction.same_shape(target))
    throw PreconditionError("mse_loss shape mismatch: " + shape_string(prediction.shape()) + " vs " +
                            shape_string(target.shape()));
  if (prediction.empty()) throw PreconditionError("mse_loss of an empty tensor");
  double sum = 0.0;
  for (std::size_t i = 0; i < prediction.size(); ++i) {
    const double d = static_cast<double>(prediction[i]) - static_cast<double>(target[i]);
    sum += d * d;
  }
  return sum / static_cast<double>(prediction.size());
}

double mse_loss(const Image& prediction, const Image& target) {
  if (!prediction.same_size(target))
    throw PreconditionError("mse_loss size mismatch: " + std::to_string(prediction.height) + "x" +
                            std::to_string(prediction.width) + " vs " + std::to_string(target.height) + "x" +
                            std::to_string(target.width));
  if (prediction.empty()) throw PreconditionError("mse_loss of an empty image");
  double sum = 0.0;
  for (std::size_t i = 0; i < prediction.size(); ++i) {
    const double d = static_cast<double>(prediction.pixels[i]) - static_cast<double>(target.pixels[i]);
    sum += d * d;
  }
  return sum / static_cast<double>(prediction.size());
}

template <typename T>
Tensor<T> mse_gradient(const Tensor<T>& prediction, const Tensor<T>& target, double scale) {
  if (!prediction.same_shape(target)) throw PreconditionError("mse_gradient shape mismatch");
  Tensor<T> g(prediction.shape());
  const double k = 2.0 * scale / static_cast<double>(prediction.size());
  for (std::size_t i = 0; i < g.size(); ++i)
    g[i] = static_cast<T>(k * (static_cast<double>(prediction[i]) - static_cast<double>(target[i])));
  return g;
}

void check_pools(const DiscriminatorOutputs& d, Regime regime, bool have_supervised_targets) {
  const std::string name = to_string(regime);
  if (regime == Regime::CganBaseline && (!d.real_unsup.empty() || !d.fake_unsup.empty()))
    throw ConfigError("cgan_baseline cannot use unsupervised pools");
  if (regime == Regime::UnsupervisedOnly) {
    if (d.real_unsup.empty() || d.fake_unsup.empty())
      throw ConfigError("unsupervised_only needs non-empty rough and clean pools");
    return;
  }
  if (has_model_term(regime) && !have_supervised_targets)
    throw ConfigError(name + " needs supervised pairs");
  if (regime != Regime::MseOnly && (d.real_sup.empty() || d.fake_sup.empty()))
    throw ConfigError(name + " needs discriminator outputs over supervised pairs");
  if (regime == Regime::AdversarialAugmentation && (d.real_unsup.empty() || d.fake_unsup.empty()))
    throw ConfigError("adversarial_augmentation needs non-empty rough and clean pools");
  for (const auto* p : {&d.real_sup, &d.fake_sup, &d.real_unsup, &d.fake_unsup}) check_probabilities(*p);
}

double discriminator_objective(const DiscriminatorOutputs& d, Regime regime, const LossWeights& w) {
  const LossBreakdown b = generator_objective(0.0, d, regime, w);
  return -b.total_D;
}

double discriminator_loss(const DiscriminatorOutputs& d, Regime regime, const LossWeights& w) {
  return generator_objective(0.0, d, regime, w).total_D;
}

DiscriminatorOutputs discriminator_loss_gradient(const DiscriminatorOutputs& d, Regime regime, const LossWeights& w) {
  DiscriminatorOutputs g;
  auto fill = [](const std::vector<double>& p, double weight, bool real, std::vector<double>& out) {
    out.assign(p.size(), 0.0);
    if (weight == 0.0 || p.empty()) return;
    const double n = static_cast<double>(p.size());
    for (std::size_t i = 0; i < p.size(); ++i) {
      // loss = -weight * mean log(p) for real, -weight * mean log(1 - p) for fake.
      out[i] = real ? -weight * safe_log_derivative(p[i]) / n : weight * safe_log_derivative(1.0 - p[i]) / n;
    }
  };
  const double ws = supervised_weight(regime, w);
  const double wu = unsupervised_weight(regime, w);
  fill(d.real_sup, ws, true, g.real_sup);
  fill(d.fake_sup, ws, false, g.fake_sup);
  fill(d.real_unsup, wu, true, g.real_unsup);
  fill(d.fake_unsup, wu, false, g.fake_unsup);
  return g;
}

LossBreakdown generator_objective(double model_loss, const DiscriminatorOutputs& d, Regime regime,
                                  const LossWeights& w) {
  const double ws = supervised_weight(regime, w);
  const double wu = unsupervised_weight(regime, w);
  LossBreakdown b;
  b.model_loss = has_model_term(regime) ? model_loss : 0.0;
  if (ws != 0.0 && !d.real_sup.empty()) b.adv_real = ws * mean_log(d.real_sup);
  if (ws != 0.0 && !d.fake_sup.empty()) b.adv_fake = ws * mean_log_complement(d.fake_sup);
  if (wu != 0.0 && !d.real_unsup.empty()) b.unsup_real = wu * mean_log(d.real_unsup);
  if (wu != 0.0 && !d.fake_unsup.empty()) b.unsup_fake = wu * mean_log_complement(d.fake_unsup);
  b.gen_adv = w.non_saturating ? generator_term(d.fake_sup, ws, true) : b.adv_fake;
  b.gen_unsup = w.non_saturating ? generator_term(d.fake_unsup, wu, true) : b.unsup_fake;
  b.total_S = b.model_loss + b.gen_adv + b.gen_unsup;
  b.total_D = -(b.adv_real + b.adv_fake + b.unsup_real + b.unsup_fake);
  return b;
}

template <typename T>
LossBreakdown generator_objective(const Tensor<T>& prediction, const Tensor<T>& target, const DiscriminatorOutputs& d,
                                  Regime regime, const LossWeights& w) {
  return generator_objective(mse_loss(prediction, target), d, regime, w);
}

DiscriminatorOutputs generator_loss_gradient(const DiscriminatorOutputs& d, Regime regime, const LossWeights& w) {
  DiscriminatorOutputs g;
  auto fill = [&](const std::vector<double>& p, double weight, std::vector<double>& out) {
    out.assign(p.size(), 0.0);
    if (weight == 0.0 || p.empty()) return;
    const double n = static_cast<double>(p.size());
    for (std::size_t i = 0; i < p.size(); ++i) {
      out[i] = w.non_saturating ? -weight * safe_log_derivative(p[i]) / n
                                : -weight * safe_log_derivative(1.0 - p[i]) / n;
    }
  };
  fill(d.fake_sup, supervised_weight(regime, w), g.fake_sup);
  fill(d.fake_unsup, unsupervised_weight(regime, w), g.fake_unsup);
  return g;
}

AdversarialPair cgan_objective(const std::vector<double>& d_real_pairs, const std::vector<double>& d_fake_pairs,
                               bool non_saturating) {
  DiscriminatorOutputs d;
  d.real_sup = d_real_pairs;
  d.fake_sup = d_fake_pairs;
  check_pools(d, Regime::CganBaseline, true);
  LossWeights w;
  w.non_saturating = non_saturating;
  const LossBreakdown b = generator_objective(0.0, d, Regime::CganBaseline, w);
  return {b.total_S, -b.total_D};
}

AdversarialPair unsupervised_only_objective(const std::vector<double>& d_real, const std::vector<double>& d_fake,
                                            double beta, bool non_saturating) {
  DiscriminatorOutputs d;
  d.real_unsup = d_real;
  d.fake_unsup = d_fake;
  check_pools(d, Regime::UnsupervisedOnly, false);
  LossWeights w;
  w.alpha = 0.0;
  w.beta = beta;
  w.non_saturating = non_saturating;
  const LossBreakdown b = generator_objective(0.0, d, Regime::UnsupervisedOnly, w);
  return {b.total_S, -b.total_D};
}

bool breakdown_consistent(const LossBreakdown& b, Regime regime) {
  if (!has_model_term(regime) && b.model_loss != 0.0) return false;
  return b.total_S == b.model_loss + b.gen_adv + b.gen_unsup &&
         b.total_D == -(b.adv_real + b.adv_fake + b.unsup_real + b.unsup_fake);
}

template double mse_loss<float>(const Tensor<float>&, const Tensor<float>&);
template double mse_loss<double>(const Tensor<double>&, const Tensor<double>&);
template Tensor<float> mse_gradient<float>(const Tensor<float>&, const Tensor<float>&, double);
template Tensor<double> mse_gradient<double>(const Tensor<double>&, const Tensor<double>&, double);
template LossBreakdown generator_objective<float>(const Tensor<float>&, const Tensor<float>&,
                                                  const DiscriminatorOutputs&, Regime, const LossWeights&);
template LossBreakdown generator_objective<double>(const Tensor<double>&, const Tensor<double>&,
                                                   const DiscriminatorOutputs&, Regime, const LossWeights&);

}  // namespace advaug::loss
