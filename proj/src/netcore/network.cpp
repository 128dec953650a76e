#include "advaug/netcore/network.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "advaug/errors.hpp"
#include "advaug/random.hpp"

namespace advaug::net {

namespace {

template <typename T>
using RowMatrix = typename Tensor<T>::RowMatrix;
template <typename T>
using Map = typename Tensor<T>::MatrixMap;
template <typename T>
using ConstMap = typename Tensor<T>::ConstMatrixMap;

// Geometry of a strided convolution from an (H x W) map to (Ho x Wo).
struct ConvGeometry {
  int kernel;
  int stride;
  int pad;
  int height;
  int width;
  int out_height;
  int out_width;
};

// Valid output range [lo, hi) for kernel offset `k` so that the input index
// o * stride - pad + k lies inside [0, extent).
inline void valid_range(int k, int stride, int pad, int extent, int out_extent, int& lo, int& hi) {
  const int shift = k - pad;
  lo = shift >= 0 ? 0 : (-shift + stride - 1) / stride;
  // o * stride + shift <= extent - 1
  const int top = extent - 1 - shift;
  hi = top < 0 ? 0 : std::min(out_extent, top / stride + 1);
  if (hi < lo) hi = lo;
}

// Channel-major im2col: rows (c, ky, kx), columns (n, oy, ox).
template <typename T>
void im2col(const T* in, int channels, int batch, const ConvGeometry& g, T* col) {
  const std::size_t in_plane = static_cast<std::size_t>(g.height) * g.width;
  const std::size_t out_plane = static_cast<std::size_t>(g.out_height) * g.out_width;
  const std::size_t row_len = out_plane * batch;
  for (int c = 0; c < channels; ++c) {
    for (int ky = 0; ky < g.kernel; ++ky) {
      int oy_lo, oy_hi;
      valid_range(ky, g.stride, g.pad, g.height, g.out_height, oy_lo, oy_hi);
      for (int kx = 0; kx < g.kernel; ++kx) {
        int ox_lo, ox_hi;
        valid_range(kx, g.stride, g.pad, g.width, g.out_width, ox_lo, ox_hi);
        T* row = col + ((static_cast<std::size_t>(c) * g.kernel + ky) * g.kernel + kx) * row_len;
        for (int n = 0; n < batch; ++n) {
          const T* src = in + (static_cast<std::size_t>(c) * batch + n) * in_plane;
          T* dst_plane = row + static_cast<std::size_t>(n) * out_plane;
          for (int oy = 0; oy < g.out_height; ++oy) {
            T* dst = dst_plane + static_cast<std::size_t>(oy) * g.out_width;
            if (oy < oy_lo || oy >= oy_hi) {
              std::fill(dst, dst + g.out_width, T(0));
              continue;
            }
            const T* srow = src + static_cast<std::size_t>(oy * g.stride - g.pad + ky) * g.width;
            std::fill(dst, dst + ox_lo, T(0));
            if (g.stride == 1) {
              const int ix0 = ox_lo - g.pad + kx;
              std::copy(srow + ix0, srow + ix0 + (ox_hi - ox_lo), dst + ox_lo);
            } else {
              for (int ox = ox_lo; ox < ox_hi; ++ox) dst[ox] = srow[ox * g.stride - g.pad + kx];
            }
            std::fill(dst + ox_hi, dst + g.out_width, T(0));
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatter-adds columns back onto a zero-initialised map.
template <typename T>
void col2im(const T* col, int channels, int batch, const ConvGeometry& g, T* out) {
  const std::size_t in_plane = static_cast<std::size_t>(g.height) * g.width;
  const std::size_t out_plane = static_cast<std::size_t>(g.out_height) * g.out_width;
  const std::size_t row_len = out_plane * batch;
  for (int c = 0; c < channels; ++c) {
    for (int ky = 0; ky < g.kernel; ++ky) {
      int oy_lo, oy_hi;
      valid_range(ky, g.stride, g.pad, g.height, g.out_height, oy_lo, oy_hi);
      for (int kx = 0; kx < g.kernel; ++kx) {
        int ox_lo, ox_hi;
        valid_range(kx, g.stride, g.pad, g.width, g.out_width, ox_lo, ox_hi);
        const T* row = col + ((static_cast<std::size_t>(c) * g.kernel + ky) * g.kernel + kx) * row_len;
        for (int n = 0; n < batch; ++n) {
          T* dst = out + (static_cast<std::size_t>(c) * batch + n) * in_plane;
          const T* src_plane = row + static_cast<std::size_t>(n) * out_plane;
          for (int oy = oy_lo; oy < oy_hi; ++oy) {
            const T* src = src_plane + static_cast<std::size_t>(oy) * g.out_width;
            T* drow = dst + static_cast<std::size_t>(oy * g.stride - g.pad + ky) * g.width;
            if (g.stride == 1) {
              const int ix0 = ox_lo - g.pad + kx;
              for (int ox = ox_lo; ox < ox_hi; ++ox) drow[ix0 + ox - ox_lo] += src[ox];
            } else {
              for (int ox = ox_lo; ox < ox_hi; ++ox) drow[ox * g.stride - g.pad + kx] += src[ox];
            }
          }
        }
      }
    }
  }
}

ConvGeometry strided_geometry(const LayerSpec& l, int height, int width) {
  return ConvGeometry{l.kernel_size, l.stride == Stride::Two ? 2 : 1, l.padding, height, width,
                      output_extent(l, height), output_extent(l, width)};
}

// An up-convolution is the adjoint of a stride-2 convolution from the
// upsampled map back to the input resolution.
ConvGeometry up_geometry(const LayerSpec& l, int height, int width) {
  const int uh = output_extent(l, height);
  const int uw = output_extent(l, width);
  return ConvGeometry{l.kernel_size, 2, l.padding, uh, uw, height, width};
}

// Up-conv weights stored {out, in, k, k} rearranged as an (in x out*k*k) matrix.
template <typename T>
RowMatrix<T> up_matrix(const Tensor<T>& weight) {
  const int cout = weight.dim(0);
  const int cin = weight.dim(1);
  const int kk = weight.dim(2) * weight.dim(3);
  RowMatrix<T> g(cin, static_cast<Eigen::Index>(cout) * kk);
  for (int co = 0; co < cout; ++co)
    for (int ci = 0; ci < cin; ++ci)
      for (int k = 0; k < kk; ++k) g(ci, co * kk + k) = weight[(static_cast<std::size_t>(co) * cin + ci) * kk + k];
  return g;
}

template <typename T>
void add_bias(Tensor<T>& y, const Tensor<T>& bias) {
  auto m = y.matrix();
  for (Eigen::Index c = 0; c < m.rows(); ++c) m.row(c).array() += bias[static_cast<std::size_t>(c)];
}

template <typename T>
void check_conv_input(const Tensor<T>& x, const LayerSpec& l, int idx) {
  if (x.channels() != l.in_channels)
    throw StructuralError(idx, "input has " + std::to_string(x.channels()) + " channels, layer expects " +
                                   std::to_string(l.in_channels));
  if (l.kind != LayerKind::UpConv &&
      (x.height() + 2 * l.padding < l.kernel_size || x.width() + 2 * l.padding < l.kernel_size))
    throw StructuralError(idx, "input " + std::to_string(x.height()) + "x" + std::to_string(x.width()) +
                                   " smaller than the padded kernel footprint");
}

// Affine part of a convolution. Stores what backward needs in `cache`.
template <typename T>
Tensor<T> conv_affine(const Tensor<T>& x, const LayerSpec& l, const LayerParams<T>& p, LayerCache<T>* cache) {
  const int n = x.batch();
  const int cout = l.out_channels;
  if (l.kind == LayerKind::UpConv) {
    const ConvGeometry g = up_geometry(l, x.height(), x.width());
    const RowMatrix<T> gm = up_matrix(p.weight);
    Tensor<T> cols(cout * l.kernel_size * l.kernel_size, n, x.height(), x.width());
    cols.matrix().noalias() = gm.transpose() * x.matrix();
    Tensor<T> y(cout, n, g.height, g.width);
    col2im(cols.data(), cout, n, g, y.data());
    add_bias(y, p.bias);
    if (cache) cache->columns = x;
    return y;
  }
  const ConvGeometry g = strided_geometry(l, x.height(), x.width());
  const int k = l.in_channels * l.kernel_size * l.kernel_size;
  Tensor<T> cols(k, n, g.out_height, g.out_width);
  im2col(x.data(), l.in_channels, n, g, cols.data());
  Tensor<T> y(cout, n, g.out_height, g.out_width);
  ConstMap<T> w(p.weight.data(), cout, k);
  y.matrix().noalias() = w * cols.matrix();
  add_bias(y, p.bias);
  if (cache) cache->columns = std::move(cols);
  return y;
}

template <typename T>
void batchnorm_eval(Tensor<T>& y, const LayerParams<T>& p) {
  auto m = y.matrix();
  for (Eigen::Index c = 0; c < m.rows(); ++c) {
    const auto ci = static_cast<std::size_t>(c);
    const T s = p.bn_scale[ci] / std::sqrt(p.bn_var[ci] + static_cast<T>(kBatchNormEpsilon));
    const T b = p.bn_shift[ci] - p.bn_mean[ci] * s;
    m.row(c).array() = m.row(c).array() * s + b;
  }
}

template <typename T>
void batchnorm_train(Tensor<T>& y, const LayerParams<T>& p, LayerCache<T>* cache) {
  auto m = y.matrix();
  const Eigen::Index count = m.cols();
  const Eigen::Index channels = m.rows();
  std::vector<T> inv_std(static_cast<std::size_t>(channels));
  std::vector<T> mean(static_cast<std::size_t>(channels));
  std::vector<T> unbiased(static_cast<std::size_t>(channels));
  for (Eigen::Index c = 0; c < channels; ++c) {
    const T* row = m.data() + c * count;
    double sum = 0.0;
    for (Eigen::Index i = 0; i < count; ++i) sum += static_cast<double>(row[i]);
    const double mu = sum / static_cast<double>(count);
    double sq = 0.0;
    for (Eigen::Index i = 0; i < count; ++i) {
      const double d = static_cast<double>(row[i]) - mu;
      sq += d * d;
    }
    const double var = sq / static_cast<double>(count);
    const auto ci = static_cast<std::size_t>(c);
    mean[ci] = static_cast<T>(mu);
    unbiased[ci] = static_cast<T>(count > 1 ? sq / static_cast<double>(count - 1) : var);
    inv_std[ci] = static_cast<T>(1.0 / std::sqrt(var + kBatchNormEpsilon));
    m.row(c).array() = (m.row(c).array() - static_cast<T>(mu)) * inv_std[ci];
  }
  if (cache) {
    cache->normalized = y;
    cache->inv_std = inv_std;
    cache->batch_mean = std::move(mean);
    cache->batch_var = std::move(unbiased);
  }
  for (Eigen::Index c = 0; c < channels; ++c) {
    const auto ci = static_cast<std::size_t>(c);
    m.row(c).array() = m.row(c).array() * p.bn_scale[ci] + p.bn_shift[ci];
  }
}

template <typename T>
void activate(Tensor<T>& y, Activation a) {
  switch (a) {
    case Activation::None:
      return;
    case Activation::ReLU:
      for (auto& v : y.vec()) v = v > T(0) ? v : T(0);
      return;
    case Activation::Sigmoid:
      for (auto& v : y.vec()) v = T(1) / (T(1) + std::exp(-v));
      return;
  }
}

template <typename T>
void check_input(const Model<T>& model, const Tensor<T>& input) {
  const auto& spec = model.spec;
  if (model.params.layers.size() != spec.layers.size())
    throw StructuralError(0, "parameter set has " + std::to_string(model.params.layers.size()) +
                                 " layers, spec has " + std::to_string(spec.layers.size()));
  if (input.channels() != spec.input_channels)
    throw StructuralError(0, "input has " + std::to_string(input.channels()) + " channels, network expects " +
                                 std::to_string(spec.input_channels));
  if (input.batch() <= 0) throw PreconditionError("empty input batch");
  if (spec.output_arity == OutputArity::Image) {
    const int m = spec.required_multiple();
    if (input.height() % m != 0 || input.width() % m != 0)
      throw PreconditionError("input " + std::to_string(input.height()) + "x" + std::to_string(input.width()) +
                              " is not divisible by " + std::to_string(m) + "; pad it with pad_to_multiple first");
  }
  if (spec.input_size > 0 && (input.height() != spec.input_size || input.width() != spec.input_size))
    throw PreconditionError("network expects " + std::to_string(spec.input_size) + "x" +
                            std::to_string(spec.input_size) + " inputs, got " + std::to_string(input.height()) + "x" +
                            std::to_string(input.width()));
}

template <typename T>
Tensor<T> fc_forward(const Tensor<T>& x, const LayerSpec& l, const LayerParams<T>& p, int idx, LayerCache<T>* cache) {
  const int n = x.batch();
  const int c = x.channels();
  const std::size_t plane = x.plane();
  const int features = static_cast<int>(c * plane);
  if (features != l.in_channels)
    throw StructuralError(idx, "fully-connected layer expects " + std::to_string(l.in_channels) +
                                   " features, input has " + std::to_string(features));
  Tensor<T> f(n, features, 1, 1);
  for (int ch = 0; ch < c; ++ch)
    for (int s = 0; s < n; ++s)
      std::copy_n(x.data() + (static_cast<std::size_t>(ch) * n + s) * plane, plane,
                  f.data() + static_cast<std::size_t>(s) * features + ch * plane);
  Tensor<T> y(l.out_channels, n, 1, 1);
  ConstMap<T> w(p.weight.data(), l.out_channels, features);
  y.matrix().noalias() = w * f.matrix().transpose();
  add_bias(y, p.bias);
  if (cache) cache->columns = std::move(f);
  return y;
}

template <typename T>
Tensor<T> layer_forward(const Tensor<T>& x, const LayerSpec& l, const LayerParams<T>& p, int idx, Mode mode,
                        LayerCache<T>* cache, std::mt19937_64* rng) {
  if (cache) cache->input_shape = x.shape();
  Tensor<T> y;
  switch (l.kind) {
    case LayerKind::DownConv:
    case LayerKind::FlatConv:
    case LayerKind::UpConv:
      check_conv_input(x, l, idx);
      y = conv_affine(x, l, p, cache);
      if (l.has_batchnorm) {
        if (mode == Mode::Train)
          batchnorm_train(y, p, cache);
        else
          batchnorm_eval(y, p);
      }
      break;
    case LayerKind::Dropout:
      y = x;
      if (mode == Mode::Train && l.dropout_rate > 0.0) {
        if (!rng) throw PreconditionError("train-mode forward through dropout needs a random generator");
        Tensor<T> mask(x.shape());
        const T keep_scale = static_cast<T>(1.0 / (1.0 - l.dropout_rate));
        for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = bernoulli(*rng, l.dropout_rate) ? T(0) : keep_scale;
        for (std::size_t i = 0; i < y.size(); ++i) y[i] *= mask[i];
        if (cache) cache->mask = std::move(mask);
      }
      break;
    case LayerKind::FullyConnected:
      y = fc_forward(x, l, p, idx, cache);
      break;
  }
  activate(y, l.activation);
  if (cache) cache->output = y;
  return y;
}

template <typename T>
void activation_backward(Tensor<T>& g, const Tensor<T>& out, Activation a) {
  switch (a) {
    case Activation::None:
      return;
    case Activation::ReLU:
      for (std::size_t i = 0; i < g.size(); ++i)
        if (!(out[i] > T(0))) g[i] = T(0);
      return;
    case Activation::Sigmoid:
      for (std::size_t i = 0; i < g.size(); ++i) g[i] *= out[i] * (T(1) - out[i]);
      return;
  }
}

template <typename T>
void batchnorm_backward(Tensor<T>& g, const LayerParams<T>& p, const LayerCache<T>& cache, Mode mode,
                        LayerParams<T>* grads) {
  auto gm = g.matrix();
  const Eigen::Index channels = gm.rows();
  const Eigen::Index count = gm.cols();
  if (mode == Mode::Eval) {
    // Running statistics are constants here; only the input gradient flows.
    for (Eigen::Index c = 0; c < channels; ++c) {
      const auto ci = static_cast<std::size_t>(c);
      gm.row(c) *= p.bn_scale[ci] / std::sqrt(p.bn_var[ci] + static_cast<T>(kBatchNormEpsilon));
    }
    return;
  }
  auto xm = cache.normalized.matrix();
  for (Eigen::Index c = 0; c < channels; ++c) {
    const auto ci = static_cast<std::size_t>(c);
    double sum_g = 0.0;
    double sum_gx = 0.0;
    for (Eigen::Index i = 0; i < count; ++i) {
      sum_g += static_cast<double>(gm(c, i));
      sum_gx += static_cast<double>(gm(c, i)) * static_cast<double>(xm(c, i));
    }
    if (grads) {
      grads->bn_scale[ci] += static_cast<T>(sum_gx);
      grads->bn_shift[ci] += static_cast<T>(sum_g);
    }
    const T mean_g = static_cast<T>(sum_g / static_cast<double>(count));
    const T mean_gx = static_cast<T>(sum_gx / static_cast<double>(count));
    const T scale = p.bn_scale[ci] * cache.inv_std[ci];
    gm.row(c).array() = scale * (gm.row(c).array() - mean_g - xm.row(c).array() * mean_gx);
  }
}

template <typename T>
Tensor<T> layer_backward(const Tensor<T>& grad_out, const LayerSpec& l, const LayerParams<T>& p,
                         const LayerCache<T>& cache, Mode mode, LayerParams<T>* grads, bool need_input_grad) {
  Tensor<T> g = grad_out;
  activation_backward(g, cache.output, l.activation);
  const auto& in_shape = cache.input_shape;
  switch (l.kind) {
    case LayerKind::Dropout: {
      if (!cache.mask.empty())
        for (std::size_t i = 0; i < g.size(); ++i) g[i] *= cache.mask[i];
      return g;
    }
    case LayerKind::FullyConnected: {
      const int n = in_shape[1];
      const int features = l.in_channels;
      ConstMap<T> w(p.weight.data(), l.out_channels, features);
      if (grads) {
        Map<T>(grads->weight.data(), l.out_channels, features).noalias() += g.matrix() * cache.columns.matrix();
        for (int c = 0; c < l.out_channels; ++c) grads->bias[static_cast<std::size_t>(c)] += g.matrix().row(c).sum();
      }
      if (!need_input_grad) return {};
      RowMatrix<T> df = g.matrix().transpose() * w;  // n x features
      Tensor<T> dx(in_shape);
      const std::size_t plane = static_cast<std::size_t>(in_shape[2]) * in_shape[3];
      for (int ch = 0; ch < in_shape[0]; ++ch)
        for (int s = 0; s < n; ++s)
          std::copy_n(df.data() + static_cast<std::size_t>(s) * features + ch * plane, plane,
                      dx.data() + (static_cast<std::size_t>(ch) * n + s) * plane);
      return dx;
    }
    default:
      break;
  }

  if (l.has_batchnorm) batchnorm_backward(g, p, cache, mode, grads);
  if (grads) {
    auto gm = g.matrix();
    for (Eigen::Index c = 0; c < gm.rows(); ++c) grads->bias[static_cast<std::size_t>(c)] += gm.row(c).sum();
  }

  const int n = in_shape[1];
  const int cout = l.out_channels;
  if (l.kind == LayerKind::UpConv) {
    const ConvGeometry geo = up_geometry(l, in_shape[2], in_shape[3]);
    const int kk = l.kernel_size * l.kernel_size;
    Tensor<T> dcols(cout * kk, n, in_shape[2], in_shape[3]);
    im2col(g.data(), cout, n, geo, dcols.data());
    if (grads) {
      const RowMatrix<T> dg = cache.columns.matrix() * dcols.matrix().transpose();  // in x out*kk
      const int cin = l.in_channels;
      for (int co = 0; co < cout; ++co)
        for (int ci = 0; ci < cin; ++ci)
          for (int k = 0; k < kk; ++k)
            grads->weight[(static_cast<std::size_t>(co) * cin + ci) * kk + k] += dg(ci, co * kk + k);
    }
    if (!need_input_grad) return {};
    Tensor<T> dx(in_shape);
    dx.matrix().noalias() = up_matrix(p.weight) * dcols.matrix();
    return dx;
  }

  const ConvGeometry geo = strided_geometry(l, in_shape[2], in_shape[3]);
  const int k = l.in_channels * l.kernel_size * l.kernel_size;
  if (grads) Map<T>(grads->weight.data(), cout, k).noalias() += g.matrix() * cache.columns.matrix().transpose();
  if (!need_input_grad) return {};
  ConstMap<T> w(p.weight.data(), cout, k);
  Tensor<T> dcols(k, n, geo.out_height, geo.out_width);
  dcols.matrix().noalias() = w.transpose() * g.matrix();
  Tensor<T> dx(in_shape);
  col2im(dcols.data(), l.in_channels, n, geo, dx.data());
  return dx;
}

std::array<int, 4> weight_shape(const LayerSpec& l) {
  if (l.kind == LayerKind::FullyConnected) return {l.out_channels, l.in_channels, 1, 1};
  return {l.out_channels, l.in_channels, l.kernel_size, l.kernel_size};
}

}  // namespace

bool has_batchnorm(const NetworkSpec& spec) {
  return std::any_of(spec.layers.begin(), spec.layers.end(), [](const LayerSpec& l) { return l.has_batchnorm; });
}

template <typename T>
ParameterSet<T> init_parameters(const NetworkSpec& spec, std::uint64_t seed) {
  spec.validate();
  Rng rng(seed);
  ParameterSet<T> params;
  params.layers.resize(spec.layers.size());
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const auto& l = spec.layers[i];
    auto& p = params.layers[i];
    if (!l.has_weights()) continue;
    p.weight = Tensor<T>(weight_shape(l));
    double fan_in = 0.0;
    switch (l.kind) {
      case LayerKind::UpConv:
        fan_in = l.in_channels * (l.kernel_size * l.kernel_size) / 4.0;
        break;
      case LayerKind::FullyConnected:
        fan_in = l.in_channels;
        break;
      default:
        fan_in = static_cast<double>(l.in_channels) * l.kernel_size * l.kernel_size;
        break;
    }
    const double gain = l.activation == Activation::ReLU ? 2.0 : 1.0;
    const double stddev = std::sqrt(gain / fan_in);
    for (auto& v : p.weight.vec()) v = static_cast<T>(normal(rng) * stddev);
    p.bias = Tensor<T>(l.out_channels, 1, 1, 1);
    if (l.has_batchnorm) {
      p.bn_scale = Tensor<T>(l.out_channels, 1, 1, 1, T(1));
      p.bn_shift = Tensor<T>(l.out_channels, 1, 1, 1);
      p.bn_mean = Tensor<T>(l.out_channels, 1, 1, 1);
      p.bn_var = Tensor<T>(l.out_channels, 1, 1, 1, T(1));
    }
  }
  return params;
}

template <typename T>
void validate_parameters(const NetworkSpec& spec, const ParameterSet<T>& params) {
  if (params.layers.size() != spec.layers.size())
    throw StructuralError(0, "parameter set has " + std::to_string(params.layers.size()) + " layers, spec has " +
                                 std::to_string(spec.layers.size()));
  const std::array<int, 4> empty{0, 0, 0, 0};
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const auto& l = spec.layers[i];
    const auto& p = params.layers[i];
    const int idx = static_cast<int>(i);
    auto expect = [&](const Tensor<T>& t, std::array<int, 4> shape, const char* role) {
      if (t.shape() != shape)
        throw StructuralError(idx, std::string(role) + " has shape " + shape_string(t.shape()) + ", expected " +
                                       shape_string(shape));
    };
    const std::array<int, 4> vec_shape{l.out_channels, 1, 1, 1};
    if (l.has_weights()) {
      expect(p.weight, weight_shape(l), "weight");
      expect(p.bias, vec_shape, "bias");
    } else {
      expect(p.weight, empty, "weight");
      expect(p.bias, empty, "bias");
    }
    const auto bn_shape = l.has_batchnorm ? vec_shape : empty;
    expect(p.bn_scale, bn_shape, "bn_scale");
    expect(p.bn_shift, bn_shape, "bn_shift");
    expect(p.bn_mean, bn_shape, "bn_mean");
    expect(p.bn_var, bn_shape, "bn_var");
    for (T v : p.bn_var.vec()) {
      if (!(v > T(0))) throw StructuralError(idx, "running variance must be strictly positive");
    }
  }
}

template <typename T>
ParameterSet<T> zeros_like(const ParameterSet<T>& params) {
  ParameterSet<T> out;
  out.layers.resize(params.layers.size());
  for (std::size_t i = 0; i < params.layers.size(); ++i) {
    const auto& p = params.layers[i];
    auto& z = out.layers[i];
    z.weight = Tensor<T>(p.weight.shape());
    z.bias = Tensor<T>(p.bias.shape());
    z.bn_scale = Tensor<T>(p.bn_scale.shape());
    z.bn_shift = Tensor<T>(p.bn_shift.shape());
    z.bn_mean = Tensor<T>(p.bn_mean.shape());
    z.bn_var = Tensor<T>(p.bn_var.shape());
  }
  return out;
}

template <typename T>
Tensor<T> conv_forward(const Tensor<T>& input, const LayerSpec& layer, const LayerParams<T>& params,
                       int layer_index) {
  if (!layer.is_conv()) throw StructuralError(layer_index, "conv_forward needs a convolution layer");
  return layer_forward<T>(input, layer, params, layer_index, Mode::Eval, nullptr, nullptr);
}

template <typename T>
Tensor<T> forward(const Model<T>& model, const Tensor<T>& input, Mode mode, std::type_identity_t<ForwardTape<T>>* tape,
                  std::mt19937_64* rng) {
  check_input(model, input);
  const auto& layers = model.spec.layers;
  if (tape) {
    tape->mode = mode;
    tape->layers.assign(layers.size(), LayerCache<T>{});
  }
  Tensor<T> x;
  const Tensor<T>* cur = &input;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    LayerCache<T>* cache = tape ? &tape->layers[i] : nullptr;
    x = layer_forward(*cur, layers[i], model.params.layers[i], static_cast<int>(i), mode, cache, rng);
    cur = &x;
  }
  return x;
}

template <typename T>
Tensor<T> backward(const Model<T>& model, const ForwardTape<T>& tape, const Tensor<T>& grad_output,
                   std::type_identity_t<ParameterSet<T>>* grads, bool need_input_grad) {
  const auto& layers = model.spec.layers;
  if (tape.layers.size() != layers.size()) throw PreconditionError("tape does not match the network");
  if (!tape.layers.back().output.same_shape(grad_output))
    throw PreconditionError("output gradient has shape " + shape_string(grad_output.shape()) + ", network output is " +
                            shape_string(tape.layers.back().output.shape()));
  Tensor<T> g = grad_output;
  for (std::size_t r = layers.size(); r-- > 0;) {
    LayerParams<T>* lg = grads ? &grads->layers[r] : nullptr;
    const bool need = r > 0 || need_input_grad;
    g = layer_backward(g, layers[r], model.params.layers[r], tape.layers[r], tape.mode, lg, need);
    if (!need) return {};
  }
  return g;
}

template <typename T>
void update_running_stats(Model<T>& model, const ForwardTape<T>& tape, double momentum) {
  if (tape.mode != Mode::Train) return;
  for (std::size_t i = 0; i < model.spec.layers.size(); ++i) {
    if (!model.spec.layers[i].has_batchnorm) continue;
    const auto& cache = tape.layers[i];
    auto& p = model.params.layers[i];
    for (std::size_t c = 0; c < cache.batch_mean.size(); ++c) {
      p.bn_mean[c] = static_cast<T>(momentum * p.bn_mean[c] + (1.0 - momentum) * cache.batch_mean[c]);
      p.bn_var[c] = static_cast<T>(momentum * p.bn_var[c] + (1.0 - momentum) * cache.batch_var[c]);
    }
  }
}

template <typename T>
Model<T> fold_batchnorm(const Model<T>& model) {
  Model<T> out = model;
  for (std::size_t i = 0; i < out.spec.layers.size(); ++i) {
    auto& l = out.spec.layers[i];
    if (!l.has_batchnorm) continue;
    if (!l.is_conv()) throw StructuralError(static_cast<int>(i), "batch norm is not preceded by a convolution");
    auto& p = out.params.layers[i];
    const std::size_t per_out = p.weight.size() / static_cast<std::size_t>(l.out_channels);
    for (int c = 0; c < l.out_channels; ++c) {
      const auto ci = static_cast<std::size_t>(c);
      if (!(p.bn_var[ci] > T(0))) throw StructuralError(static_cast<int>(i), "running variance must be positive");
      const double s = static_cast<double>(p.bn_scale[ci]) / std::sqrt(static_cast<double>(p.bn_var[ci]) + kBatchNormEpsilon);
      T* w = p.weight.data() + ci * per_out;
      for (std::size_t k = 0; k < per_out; ++k) w[k] = static_cast<T>(w[k] * s);
      p.bias[ci] = static_cast<T>((static_cast<double>(p.bias[ci]) - p.bn_mean[ci]) * s + p.bn_shift[ci]);
    }
    p.bn_scale = Tensor<T>();
    p.bn_shift = Tensor<T>();
    p.bn_mean = Tensor<T>();
    p.bn_var = Tensor<T>();
    l.has_batchnorm = false;
  }
  return out;
}

template <typename T>
std::vector<Tensor<T>*> learnable_tensors(ParameterSet<T>& params) {
  std::vector<Tensor<T>*> out;
  for (auto& p : params.layers) {
    for (Tensor<T>* t : {&p.weight, &p.bias, &p.bn_scale, &p.bn_shift})
      if (!t->empty()) out.push_back(t);
  }
  return out;
}

template <typename T>
std::vector<const Tensor<T>*> learnable_tensors(const ParameterSet<T>& params) {
  std::vector<const Tensor<T>*> out;
  for (const auto& p : params.layers) {
    for (const Tensor<T>* t : {&p.weight, &p.bias, &p.bn_scale, &p.bn_shift})
      if (!t->empty()) out.push_back(t);
  }
  return out;
}

template <typename T>
double l2_norm(const ParameterSet<T>& params) {
  double sum = 0.0;
  for (const Tensor<T>* t : learnable_tensors(params))
    for (T v : t->vec()) sum += static_cast<double>(v) * static_cast<double>(v);
  return std::sqrt(sum);
}

#define ADVAUG_INSTANTIATE(T)                                                                                   \
  template ParameterSet<T> init_parameters<T>(const NetworkSpec&, std::uint64_t);                              \
  template void validate_parameters<T>(const NetworkSpec&, const ParameterSet<T>&);                            \
  template ParameterSet<T> zeros_like<T>(const ParameterSet<T>&);                                              \
  template Tensor<T> conv_forward<T>(const Tensor<T>&, const LayerSpec&, const LayerParams<T>&, int);           \
  template Tensor<T> forward<T>(const Model<T>&, const Tensor<T>&, Mode, ForwardTape<T>*, std::mt19937_64*);    \
  template Tensor<T> backward<T>(const Model<T>&, const ForwardTape<T>&, const Tensor<T>&, ParameterSet<T>*,   \
                                 bool);                                                                         \
  template void update_running_stats<T>(Model<T>&, const ForwardTape<T>&, double);                              \
  template Model<T> fold_batchnorm<T>(const Model<T>&);                                                         \
  template std::vector<Tensor<T>*> learnable_tensors<T>(ParameterSet<T>&);                                      \
  template std::vector<const Tensor<T>*> learnable_tensors<T>(const ParameterSet<T>&);                          \
  template double l2_norm<T>(const ParameterSet<T>&);

ADVAUG_INSTANTIATE(float)
ADVAUG_INSTANTIATE(double)

#undef ADVAUG_INSTANTIATE

}  // namespace advaug::net
