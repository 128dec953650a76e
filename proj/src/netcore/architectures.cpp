#include "advaug/netcore/architectures.hpp"

#include <algorithm>

#include "advaug/errors.hpp"

namespace advaug::net {

namespace {

enum class Block { Down, Flat, Up };

// Hourglass template: three down-convolutions within the first seven layers,
// seven flat layers, three up-convolutions within the last nine.
constexpr Block kTemplate[kSimplificationLayers] = {
    Block::Down, Block::Flat, Block::Flat, Block::Down, Block::Flat, Block::Flat, Block::Down,  // encoder
    Block::Flat, Block::Flat, Block::Flat, Block::Flat, Block::Flat, Block::Flat, Block::Flat,  // bottleneck
    Block::Up,   Block::Flat, Block::Flat, Block::Up,   Block::Flat, Block::Flat, Block::Up,
    Block::Flat, Block::Flat,  // decoder
};

LayerSpec conv_layer(LayerKind kind, int kernel, int in, int out) {
  LayerSpec l;
  l.kind = kind;
  l.kernel_size = kernel;
  l.in_channels = in;
  l.out_channels = out;
  l.activation = Activation::ReLU;
  l.has_batchnorm = true;
  switch (kind) {
    case LayerKind::DownConv:
      l.stride = Stride::Two;
      l.padding = (kernel - 1) / 2;
      break;
    case LayerKind::FlatConv:
      l.stride = Stride::One;
      l.padding = (kernel - 1) / 2;
      break;
    case LayerKind::UpConv:
      l.stride = Stride::Half;
      l.padding = 1;
      break;
    default:
      break;
  }
  return l;
}

}  // namespace

ChannelSchedule default_channel_schedule(int base, int cap) {
  if (base <= 0 || cap <= 0) throw ConfigError("channel schedule base and cap must be positive");
  const int c1 = std::min(base, cap);
  const int c2 = std::min(2 * base, cap);
  const int c4 = std::min(4 * base, cap);
  const int c8 = std::min(8 * base, cap);
  const int half = std::max(1, c1 / 2);
  return {
      c1, c1, c1, c2, c2, c2, c4,              // encoder
      c8, c8, c8, c8, c8, c8, c4,              // bottleneck
      c4, c4, c2, c2, c2, c1, c1, half, 1,     // decoder
  };
}

ChannelSchedule scale_schedule(const ChannelSchedule& schedule, int divisor) {
  if (divisor <= 0) throw ConfigError("channel divisor must be positive");
  ChannelSchedule out = schedule;
  for (std::size_t i = 0; i + 1 < out.size(); ++i) out[i] = std::max(1, out[i] / divisor);
  return out;
}

NetworkSpec build_simplification_network(const ChannelSchedule& schedule) {
  if (schedule.size() != kSimplificationLayers)
    throw ConfigError("channel schedule has " + std::to_string(schedule.size()) + " entries, the hourglass needs " +
                      std::to_string(kSimplificationLayers));
  if (schedule.back() != 1) throw ConfigError("the last layer of the simplification network must output one channel");
  for (int c : schedule) {
    if (c <= 0) throw ConfigError("channel widths must be positive");
  }

  NetworkSpec spec;
  spec.input_channels = 1;
  spec.output_arity = OutputArity::Image;
  int in = 1;
  for (int i = 0; i < kSimplificationLayers; ++i) {
    const int out = schedule[static_cast<std::size_t>(i)];
    LayerSpec l;
    switch (kTemplate[i]) {
      case Block::Down:
        l = conv_layer(LayerKind::DownConv, i == 0 ? 5 : 3, in, out);
        break;
      case Block::Flat:
        l = conv_layer(LayerKind::FlatConv, 3, in, out);
        break;
      case Block::Up:
        l = conv_layer(LayerKind::UpConv, 4, in, out);
        break;
    }
    spec.layers.push_back(l);
    in = out;
  }
  auto& last = spec.layers.back();
  last.activation = Activation::Sigmoid;
  last.has_batchnorm = false;
  spec.validate();
  return spec;
}

NetworkSpec build_discriminator(int input_size, int width_divisor, int input_channels) {
  if (input_size <= 0 || input_size % 64 != 0)
    throw ConfigError("discriminator input size must be a positive multiple of 64, got " + std::to_string(input_size));
  if (width_divisor <= 0) throw ConfigError("width divisor must be positive");
  auto width = [&](int full) { return std::max(1, full / width_divisor); };

  NetworkSpec spec;
  spec.input_channels = input_channels;
  spec.output_arity = OutputArity::Scalar;
  spec.input_size = input_size;

  int in = input_channels;
  spec.layers.push_back(conv_layer(LayerKind::DownConv, 5, in, width(16)));
  in = width(16);
  for (int full : {32, 64, 128, 256, 512}) {
    spec.layers.push_back(conv_layer(LayerKind::DownConv, 3, in, width(full)));
    in = width(full);
  }
  LayerSpec dropout;
  dropout.kind = LayerKind::Dropout;
  dropout.kernel_size = 0;
  dropout.padding = 0;
  dropout.activation = Activation::None;
  dropout.dropout_rate = 0.5;
  spec.layers.push_back(dropout);
  spec.layers.push_back(conv_layer(LayerKind::FlatConv, 3, in, width(512)));
  in = width(512);
  spec.layers.push_back(dropout);

  const int side = input_size / 64;
  LayerSpec fc;
  fc.kind = LayerKind::FullyConnected;
  fc.kernel_size = 1;
  fc.padding = 0;
  fc.in_channels = in * side * side;
  fc.out_channels = 1;
  fc.activation = Activation::Sigmoid;
  spec.layers.push_back(fc);
  spec.validate();
  return spec;
}

}  // namespace advaug::net
