#pragma once

#include <vector>

#include "advaug/netcore/layer_spec.hpp"

namespace advaug::net {

inline constexpr int kSimplificationLayers = 23;
inline constexpr int kEncoderLayers = 7;
inline constexpr int kFlatLayers = 7;
inline constexpr int kDecoderLayers = 9;

// Output width of each of the 23 hourglass layers; the last entry must be 1.
using ChannelSchedule = std::vector<int>;

// Widths double at each resolution stage of the encoder (base, 2*base, 4*base),
// the bottleneck runs at min(8*base, cap) and the decoder mirrors the encoder.
ChannelSchedule default_channel_schedule(int base = 48, int cap = 1024);

// Divides every width (except the single output channel) by `divisor`, keeping at least 1.
ChannelSchedule scale_schedule(const ChannelSchedule& schedule, int divisor);

// 23-layer hourglass: layers 1-7 hold three down-convolutions (the first one
// 5x5 with 2x2 padding), 8-14 are flat, 15-23 hold three 4x4 up-convolutions
// and end in a single sigmoid channel. Batch norm follows every convolution
// except the output layer.
NetworkSpec build_simplification_network(const ChannelSchedule& schedule = default_channel_schedule());

// Discriminator for square inputs of `input_size` (a multiple of 64).
// 5x5 conv to 16 channels, four 3x3 convs doubling the width, a 3x3 conv to
// 512 channels, two 50% dropouts and a sigmoid fully-connected output.
// `width_divisor` shrinks every conv width uniformly for desk-scale runs.
NetworkSpec build_discriminator(int input_size = 384, int width_divisor = 1, int input_channels = 1);

}  // namespace advaug::net
