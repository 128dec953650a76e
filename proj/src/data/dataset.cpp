#include "advaug/data/dataset.hpp"

#include <algorithm>
#include <map>

#include "advaug/data/image_io.hpp"
#include "advaug/errors.hpp"

namespace advaug::data {

namespace fs = std::filesystem;

namespace {

// Image files of a directory keyed by stem; a missing directory is an empty pool.
std::map<std::string, fs::path> list_images(const fs::path& dir) {
  std::map<std::string, fs::path> out;
  if (!fs::exists(dir)) return out;
  if (!fs::is_directory(dir)) throw DataError(dir.string() + " is not a directory");
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    const fs::path& p = entry.path();
    if (p.filename().string().starts_with(".")) continue;
    if (!is_supported_image(p)) throw DataError("unsupported image format: " + p.string());
    const std::string stem = p.stem().string();
    if (!out.emplace(stem, p).second) throw DataError("two files share the stem '" + stem + "' in " + dir.string());
  }
  return out;
}

std::vector<NamedImage> load_pool(const fs::path& dir) {
  std::vector<NamedImage> pool;
  for (const auto& [stem, path] : list_images(dir)) pool.push_back({stem, read_image(path)});
  return pool;
}

void save_pool(const std::vector<NamedImage>& pool, const fs::path& dir) {
  fs::create_directories(dir);
  for (const auto& item : pool) write_png(dir / (item.name + ".png"), item.image);
}

}  // namespace

double supervised_input_mean(const DatasetPools& pools) {
  double sum = 0.0;
  std::size_t count = 0;
  for (const auto& pair : pools.supervised) {
    for (float v : pair.x.pixels) sum += v;
    count += pair.x.size();
  }
  return count == 0 ? 0.0 : sum / static_cast<double>(count);
}

DatasetPools load_dataset(const fs::path& root) {
  if (!fs::is_directory(root)) throw DataError("dataset root " + root.string() + " is not a directory");
  const auto rough = list_images(root / "pairs" / "rough");
  const auto clean = list_images(root / "pairs" / "clean");
  for (const auto& [stem, path] : rough) {
    if (!clean.contains(stem)) throw DataError("pair '" + stem + "' has no clean counterpart in pairs/clean");
  }
  for (const auto& [stem, path] : clean) {
    if (!rough.contains(stem)) throw DataError("pair '" + stem + "' has no rough counterpart in pairs/rough");
  }
  DatasetPools pools;
  for (const auto& [stem, path] : rough) {
    ImagePair pair{stem, read_image(path), read_image(clean.at(stem))};
    if (!pair.x.same_size(pair.y))
      throw DataError("pair '" + stem + "' has mismatched sizes: rough " + std::to_string(pair.x.height) + "x" +
                      std::to_string(pair.x.width) + ", clean " + std::to_string(pair.y.height) + "x" +
                      std::to_string(pair.y.width));
    pools.supervised.push_back(std::move(pair));
  }
  pools.rough_only = load_pool(root / "rough");
  pools.clean_only = load_pool(root / "clean");
  pools.input_mean = supervised_input_mean(pools);
  return pools;
}

void save_dataset(const DatasetPools& pools, const fs::path& root) {
  std::vector<NamedImage> xs, ys;
  for (const auto& pair : pools.supervised) {
    xs.push_back({pair.name, pair.x});
    ys.push_back({pair.name, pair.y});
  }
  save_pool(xs, root / "pairs" / "rough");
  save_pool(ys, root / "pairs" / "clean");
  save_pool(pools.rough_only, root / "rough");
  save_pool(pools.clean_only, root / "clean");
}

DatasetPools swap_for_pencil_mode(const DatasetPools& pools, bool keep_unsupervised) {
  if (pools.supervised.empty()) throw ConfigError("pencil mode needs supervised pairs to swap");
  DatasetPools out;
  out.supervised.reserve(pools.supervised.size());
  for (const auto& pair : pools.supervised) out.supervised.push_back({pair.name, pair.y, pair.x});
  if (keep_unsupervised) {
    // The roles of the single-sided pools swap along with the pairs.
    out.rough_only = pools.clean_only;
    out.clean_only = pools.rough_only;
  }
  out.pencil_mode = !pools.pencil_mode;
  out.input_mean = supervised_input_mean(out);
  return out;
}

std::string to_string(SketchStyle style) { return style == SketchStyle::Curves ? "curves" : "geometric"; }

SketchStyle parse_sketch_style(const std::string& name) {
  if (name == "curves") return SketchStyle::Curves;
  if (name == "geometric") return SketchStyle::Geometric;
  throw ConfigError("unknown sketch style '" + name + "' (expected curves or geometric)");
}

}  // namespace advaug::data
