#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "advaug/netcore/network.hpp"

namespace advaug::testkit {

using ActivationPattern = std::vector<unsigned char>;

// On/off state of every ReLU unit recorded in a tape.
template <typename T>
void append_relu_pattern(const net::NetworkSpec& spec, const net::ForwardTape<T>& tape, ActivationPattern& out) {
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    if (spec.layers[i].activation != net::Activation::ReLU) continue;
    for (T v : tape.layers[i].output.vec()) out.push_back(v > T(0));
  }
}

struct GradientCheck {
  double relative_error = 0.0;  // ||analytic - numeric|| / max(||analytic||, ||numeric||)
  int checked = 0;
  // Components whose +-h probe flips a ReLU; the loss is not differentiable
  // across the kink so the central difference says nothing about them.
  int skipped = 0;
};

// Central differences over every learnable parameter. `loss` evaluates the
// objective and, when given a pattern, records the ReLU states it crossed.
template <typename T>
GradientCheck parameter_gradient_check(net::Model<T>& model, const net::ParameterSet<T>& analytic,
                                       const std::function<double(ActivationPattern*)>& loss, double h) {
  auto params = net::learnable_tensors(model.params);
  auto grads = net::learnable_tensors(analytic);
  ActivationPattern base;
  loss(&base);
  GradientCheck result;
  double diff = 0.0, na = 0.0, nn = 0.0;
  for (std::size_t t = 0; t < params.size(); ++t) {
    for (std::size_t i = 0; i < params[t]->size(); ++i) {
      T& v = (*params[t])[i];
      const T saved = v;
      ActivationPattern pu, pd;
      v = static_cast<T>(saved + h);
      const double up = loss(&pu);
      const double hi = static_cast<double>(v);
      v = static_cast<T>(saved - h);
      const double down = loss(&pd);
      const double lo = static_cast<double>(v);
      v = saved;
      if (pu != base || pd != base) {
        ++result.skipped;
        continue;
      }
      const double numeric = (up - down) / (hi - lo);
      const double a = static_cast<double>((*grads[t])[i]);
      diff += (a - numeric) * (a - numeric);
      na += a * a;
      nn += numeric * numeric;
      ++result.checked;
    }
  }
  const double denom = std::max(std::sqrt(na), std::sqrt(nn));
  result.relative_error = denom == 0.0 ? 0.0 : std::sqrt(diff) / denom;
  return result;
}

}  // namespace advaug::testkit
