#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "advaug/netcore/network.hpp"
#include "advaug/trainer/optimizer.hpp"

namespace advaug::train {

// Archive layout (all integers little-endian):
//   "ADVAUGCK" u32 version
//   then sections: char[4] tag, u64 payload length, payload, u32 CRC-32 of payload
// Sections, in this order:
//   META  JSON: iteration, input_mean, fingerprint, folded, pencil_mode,
//         regime, balance_multiplier, balance_window, provenance
//   SPEC  JSON network spec of the simplification network
//   PARM  its tensors
//   DSPC, DPRM  discriminator spec and tensors (optional)
//   OPTS, OPTD  ADADELTA accumulators of S and D (optional)
// Tensor payload: u32 count, then per tensor u32 layer, u32 role, u32 ndim,
// ndim x u32 dims, row-major float32 values. Parameter roles: 0 weight,
// 1 bias, 2 bn_scale, 3 bn_shift, 4 bn_mean, 5 bn_var; empty tensors are
// omitted. Optimizer payloads start with f64 rho and f64 epsilon; `layer`
// then indexes the learnable tensor and role is 0 (squared gradients) or 1
// (squared updates).
struct Checkpoint {
  net::Model<float> simplifier;
  std::optional<net::Model<float>> discriminator;
  double input_mean = 0.0;
  std::int64_t iteration = 0;
  std::string fingerprint;
  bool folded = false;
  bool pencil_mode = false;
  std::string regime;
  double balance_multiplier = 1.0;
  // Recent (model, adversarial) gradient norms seen by the balancer.
  std::vector<std::array<double, 2>> balance_window;
  nlohmann::json provenance = nlohmann::json::object();
  std::optional<AdadeltaState> simplifier_optimizer;
  std::optional<AdadeltaState> discriminator_optimizer;
};

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& checkpoint);

// Raises CheckpointError naming the failing section on corruption, CRC
// mismatch or a spec/parameter shape disagreement.
Checkpoint parse_checkpoint(const std::vector<std::uint8_t>& bytes);

// Writes to a temporary file in the same directory, then renames it into place.
void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Inference-only copy: batch norm folded into the convolutions, optimizer
// state and discriminator dropped, provenance recording the source.
Checkpoint fold_for_inference(const Checkpoint& checkpoint);

}  // namespace advaug::train
