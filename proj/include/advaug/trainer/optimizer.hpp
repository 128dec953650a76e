#pragma once

#include <cmath>
#include <vector>

#include "advaug/netcore/network.hpp"

namespace advaug::train {

inline constexpr double kAdadeltaRho = 0.95;
inline constexpr double kAdadeltaEpsilon = 1e-6;

// One ADADELTA step for a single component. Updates both running averages
// and returns the increment to add to the parameter.
inline double adadelta_delta(double g, double& grad_sq, double& update_sq, double rho, double epsilon) {
  grad_sq = rho * grad_sq + (1.0 - rho) * g * g;
  const double dx = -std::sqrt(update_sq + epsilon) / std::sqrt(grad_sq + epsilon) * g;
  update_sq = rho * update_sq + (1.0 - rho) * dx * dx;
  return dx;
}

// Running averages of squared gradients and squared updates, one tensor per
// learnable tensor of the parameter set (net::learnable_tensors order).
struct AdadeltaState {
  double rho = kAdadeltaRho;
  double epsilon = kAdadeltaEpsilon;
  std::vector<Tensor<float>> grad_sq;
  std::vector<Tensor<float>> update_sq;

  bool initialized() const { return !grad_sq.empty(); }
  friend bool operator==(const AdadeltaState&, const AdadeltaState&) = default;
};

// Zero accumulators shaped like the learnable tensors of `params`.
AdadeltaState make_adadelta_state(const net::ParameterSet<float>& params, double rho = kAdadeltaRho,
                                  double epsilon = kAdadeltaEpsilon);

// Applies one step to every learnable tensor. Accumulators are created on
// first use; any shape disagreement raises PreconditionError.
void adadelta_update(net::ParameterSet<float>& params, const net::ParameterSet<float>& grads, AdadeltaState& state);

}  // namespace advaug::train
