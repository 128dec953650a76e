#include "advaug/trainer/optimizer.hpp"

#include "advaug/errors.hpp"

namespace advaug::train {

AdadeltaState make_adadelta_state(const net::ParameterSet<float>& params, double rho, double epsilon) {
  AdadeltaState s;
  s.rho = rho;
  s.epsilon = epsilon;
  for (const Tensor<float>* t : net::learnable_tensors(params)) {
    s.grad_sq.emplace_back(t->shape());
    s.update_sq.emplace_back(t->shape());
  }
  return s;
}

void adadelta_update(net::ParameterSet<float>& params, const net::ParameterSet<float>& grads, AdadeltaState& state) {
  const auto p = net::learnable_tensors(params);
  const auto g = net::learnable_tensors(grads);
  if (p.size() != g.size()) throw PreconditionError("gradient set does not match the parameter set");
  if (!state.initialized()) state = make_adadelta_state(params, state.rho, state.epsilon);
  if (state.grad_sq.size() != p.size() || state.update_sq.size() != p.size())
    throw PreconditionError("optimizer state does not match the parameter set");
  for (std::size_t k = 0; k < p.size(); ++k) {
    Tensor<float>& x = *p[k];
    const Tensor<float>& dx = *g[k];
    Tensor<float>& eg = state.grad_sq[k];
    Tensor<float>& ex = state.update_sq[k];
    if (!x.same_shape(dx) || !x.same_shape(eg) || !x.same_shape(ex))
      throw PreconditionError("optimizer tensor " + std::to_string(k) + " has mismatched shape");
    for (std::size_t i = 0; i < x.size(); ++i) {
      double gs = eg[i], us = ex[i];
      const double step = adadelta_delta(dx[i], gs, us, state.rho, state.epsilon);
      eg[i] = static_cast<float>(gs);
      ex[i] = static_cast<float>(us);
      x[i] = static_cast<float>(x[i] + step);
    }
  }
}

}  // namespace advaug::train
