#pragma once

#include <string>
#include <vector>

#include "advaug/image.hpp"
#include "advaug/netcore/layer_spec.hpp"
#include "advaug/tensor.hpp"

namespace advaug::loss {

// Probabilities are clamped to [kLogEpsilon, 1 - kLogEpsilon] before every log.
inline constexpr double kLogEpsilon = 1e-7;

enum class Regime { MseOnly, SupervisedAdversarial, AdversarialAugmentation, CganBaseline, UnsupervisedOnly };

std::string to_string(Regime regime);
Regime parse_regime(const std::string& name);
const std::vector<Regime>& all_regimes();

// True for the regimes whose S objective includes the MSE model loss.
bool has_model_term(Regime regime);
bool uses_discriminator(Regime regime);
bool uses_supervised_pool(Regime regime);
bool uses_unsupervised_pools(Regime regime);

// The cgan baseline needs a discriminator over x stacked with y (two channels);
// every other adversarial regime needs a single-channel one.
void validate_discriminator(Regime regime, const net::NetworkSpec& discriminator);

// log(clamp(p, eps, 1 - eps)); p outside [0,1] raises DomainError.
double safe_log(double p);
// d/dp safe_log(p): 1/p inside the clamp range, 0 where the clamp is active.
double safe_log_derivative(double p);

// Squared Euclidean distance divided by the pixel count.
template <typename T>
double mse_loss(const Tensor<T>& prediction, const Tensor<T>& target);
double mse_loss(const Image& prediction, const Image& target);

// d mse_loss / d prediction, multiplied by `scale`.
template <typename T>
Tensor<T> mse_gradient(const Tensor<T>& prediction, const Tensor<T>& target, double scale = 1.0);

// Discriminator probabilities for one mini-batch, grouped by pool.
// real_sup: D(y*) over supervised targets (D(x, y*) for the cgan baseline);
// fake_sup: D(S(x)) over supervised inputs; real_unsup: D(y) over the clean
// pool; fake_unsup: D(S(x)) over the rough pool.
struct DiscriminatorOutputs {
  std::vector<double> real_sup;
  std::vector<double> fake_sup;
  std::vector<double> real_unsup;
  std::vector<double> fake_unsup;
};

struct LossWeights {
  double alpha = 8e-5;
  double beta = 8e-5;
  // Generator uses -log D(S(x)) instead of log(1 - D(S(x))).
  bool non_saturating = false;
};

// Per-term values of one evaluation. adv_* and unsup_* are the weighted
// expectation terms as D sees them (all <= 0); gen_adv and gen_unsup are the
// adversarial terms S minimises (equal to adv_fake / unsup_fake in the
// saturating form).
//   total_S = model_loss + gen_adv + gen_unsup
//   total_D = -(adv_real + adv_fake + unsup_real + unsup_fake)
struct LossBreakdown {
  double model_loss = 0.0;
  double adv_real = 0.0;
  double adv_fake = 0.0;
  double unsup_real = 0.0;
  double unsup_fake = 0.0;
  double gen_adv = 0.0;
  double gen_unsup = 0.0;
  double total_S = 0.0;
  double total_D = 0.0;
};

// Throws ConfigError when the regime needs a pool that is empty, or when the
// cgan baseline is handed unsupervised outputs.
void check_pools(const DiscriminatorOutputs& d, Regime regime, bool have_supervised_targets);

// The quantity D maximises (before negation), e.g. for the supervised
// adversarial regime alpha * mean[log D(y*) + log(1 - D(S(x)))].
double discriminator_objective(const DiscriminatorOutputs& d, Regime regime, const LossWeights& w);

// Minimisation target of D's optimizer: -discriminator_objective.
double discriminator_loss(const DiscriminatorOutputs& d, Regime regime, const LossWeights& w);

// d discriminator_loss / d probability, per sample, same grouping as the input.
DiscriminatorOutputs discriminator_loss_gradient(const DiscriminatorOutputs& d, Regime regime, const LossWeights& w);

// Full breakdown given the (already computed) mean model loss.
LossBreakdown generator_objective(double model_loss, const DiscriminatorOutputs& d, Regime regime,
                                  const LossWeights& w);

template <typename T>
LossBreakdown generator_objective(const Tensor<T>& prediction, const Tensor<T>& target, const DiscriminatorOutputs& d,
                                  Regime regime, const LossWeights& w);

// d total_S / d probability for fake_sup and fake_unsup (other groups empty).
DiscriminatorOutputs generator_loss_gradient(const DiscriminatorOutputs& d, Regime regime, const LossWeights& w);

// Conditional GAN on predictions: S minimises mean log(1 - D(x, S(x))),
// D maximises mean[log D(x, y*) + log(1 - D(x, S(x)))]. No model loss.
struct AdversarialPair {
  double s_loss = 0.0;
  double d_objective = 0.0;
};
AdversarialPair cgan_objective(const std::vector<double>& d_real_pairs, const std::vector<double>& d_fake_pairs,
                               bool non_saturating = false);

// Supervised expectation removed: S minimises beta * mean log(1 - D(S(x)))
// over the rough pool, D maximises beta * mean[log D(y)] + beta * mean[log(1 - D(S(x)))].
AdversarialPair unsupervised_only_objective(const std::vector<double>& d_real, const std::vector<double>& d_fake,
                                            double beta, bool non_saturating = false);

// Checks the per-regime sums documented on LossBreakdown (exact equality).
bool breakdown_consistent(const LossBreakdown& b, Regime regime);

}  // namespace advaug::loss
