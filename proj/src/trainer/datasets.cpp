#include "advaug/random.hpp"
#include "advaug/trainer/config.hpp"

namespace advaug::train {

namespace {

constexpr std::uint64_t kPoolData = 0xda7a;
constexpr std::uint64_t kValidationData = 0x7a1d;

data::SyntheticSketchSpec styled(const data::SyntheticSketchSpec& spec, const std::string& style) {
  data::SyntheticSketchSpec s = spec;
  if (!style.empty()) s.style = data::parse_sketch_style(style);
  return s;
}

}  // namespace

data::DatasetPools make_pools(const RunConfig& config) {
  const DataConfig& d = config.data;
  data::DatasetPools pools;
  if (!d.dir.empty()) {
    pools = data::load_dataset(d.dir);
  } else {
    const std::uint64_t seed = derive_seed(config.training.seed, {kPoolData});
    pools = data::generate_synthetic(d.synthetic, d.synthetic_pairs, 0, 0, seed);
    const data::DatasetPools unsup =
        data::generate_synthetic(styled(d.synthetic, d.unsupervised_style), 0, d.synthetic_rough, d.synthetic_clean, seed);
    pools.rough_only = unsup.rough_only;
    pools.clean_only = unsup.clean_only;
  }
  return d.pencil_mode ? data::swap_for_pencil_mode(pools, d.keep_unsupervised) : pools;
}

std::vector<data::ImagePair> make_validation(const RunConfig& config) {
  const DataConfig& d = config.data;
  std::vector<data::ImagePair> pairs;
  if (!d.validation_dir.empty()) {
    pairs = data::load_dataset(d.validation_dir).supervised;
  } else {
    pairs = data::generate_synthetic(styled(d.synthetic, d.validation_style), d.validation_count, 0, 0,
                                     derive_seed(config.training.seed, {kValidationData}))
                .supervised;
  }
  if (d.pencil_mode)
    for (auto& p : pairs) std::swap(p.x, p.y);
  return pairs;
}

}  // namespace advaug::train
