#pragma once

#include <cstdint>
#include <random>
#include <type_traits>
#include <vector>

#include "advaug/netcore/layer_spec.hpp"
#include "advaug/tensor.hpp"

namespace advaug::net {

inline constexpr double kBatchNormEpsilon = 1e-5;
inline constexpr double kRunningStatMomentum = 0.9;

// Learnable state of one layer. Conv weights are {out, in, k, k} for every
// conv kind (up-convolutions included); fully-connected weights are
// {out, features, 1, 1}. Batch-norm tensors are {C, 1, 1, 1} and empty when
// the layer has no batch norm.
template <typename T>
struct LayerParams {
  Tensor<T> weight;
  Tensor<T> bias;
  Tensor<T> bn_scale;
  Tensor<T> bn_shift;
  Tensor<T> bn_mean;
  Tensor<T> bn_var;
};

template <typename T>
struct ParameterSet {
  std::vector<LayerParams<T>> layers;
};

template <typename T>
struct Model {
  NetworkSpec spec;
  ParameterSet<T> params;
};

enum class Mode { Train, Eval };

// Kaiming fan-in initialization for conv/FC weights, zero biases, identity batch norm.
template <typename T>
ParameterSet<T> init_parameters(const NetworkSpec& spec, std::uint64_t seed);

template <typename T>
Model<T> make_model(const NetworkSpec& spec, std::uint64_t seed) {
  return Model<T>{spec, init_parameters<T>(spec, seed)};
}

// Checks tensor shapes against the network spec and that running variances are positive.
template <typename T>
void validate_parameters(const NetworkSpec& spec, const ParameterSet<T>& params);

// Zero-valued parameter set with the same shapes (batch-norm statistics included).
template <typename T>
ParameterSet<T> zeros_like(const ParameterSet<T>& params);

// Values recorded during a forward pass and consumed by backward().
template <typename T>
struct LayerCache {
  std::array<int, 4> input_shape{};
  Tensor<T> columns;     // im2col matrix (down/flat conv) or the input (up conv, FC features)
  Tensor<T> normalized;  // batch-norm x-hat
  std::vector<T> inv_std;
  std::vector<T> batch_mean;
  std::vector<T> batch_var;  // unbiased, for running statistics
  Tensor<T> output;          // post-activation output
  Tensor<T> mask;            // dropout keep mask, already scaled by 1/(1-rate)
};

template <typename T>
struct ForwardTape {
  Mode mode = Mode::Eval;
  std::vector<LayerCache<T>> layers;
};

// Single layer: the affine map of the convolution followed by (eval-mode)
// batch norm if present and the layer's activation.
template <typename T>
Tensor<T> conv_forward(const Tensor<T>& input, const LayerSpec& layer, const LayerParams<T>& params,
                       int layer_index = 0);

// Runs the network on a {C, N, H, W} batch. Train mode uses batch statistics
// and samples dropout masks from `rng` (required when the network spec has dropout);
// eval mode uses running statistics and no dropout. When `tape` is non-null
// the intermediates needed by backward() are recorded.
template <typename T>
Tensor<T> forward(const Model<T>& model, const Tensor<T>& input, Mode mode, std::type_identity_t<ForwardTape<T>>* tape = nullptr,
                  std::mt19937_64* rng = nullptr);

// Back-propagates `grad_output` through the recorded pass. Parameter
// gradients are accumulated (+=) into `grads` when it is non-null. Returns
// the gradient w.r.t. the network input when `need_input_grad` is set,
// otherwise an empty tensor.
template <typename T>
Tensor<T> backward(const Model<T>& model, const ForwardTape<T>& tape, const Tensor<T>& grad_output,
                   std::type_identity_t<ParameterSet<T>>* grads, bool need_input_grad = true);

// running <- momentum * running + (1 - momentum) * batch, for every batch-norm
// layer recorded in a train-mode tape.
template <typename T>
void update_running_stats(Model<T>& model, const ForwardTape<T>& tape, double momentum = kRunningStatMomentum);

// Absorbs every batch-norm layer into the preceding convolution and clears
// has_batchnorm. Models without batch norm are returned unchanged.
template <typename T>
Model<T> fold_batchnorm(const Model<T>& model);

bool has_batchnorm(const NetworkSpec& spec);

// Flattens every learnable tensor (weights, biases, bn scale/shift) for
// optimizers and gradient checks; statistics are excluded.
template <typename T>
std::vector<Tensor<T>*> learnable_tensors(ParameterSet<T>& params);
template <typename T>
std::vector<const Tensor<T>*> learnable_tensors(const ParameterSet<T>& params);

template <typename T>
double l2_norm(const ParameterSet<T>& params);

}  // namespace advaug::net
