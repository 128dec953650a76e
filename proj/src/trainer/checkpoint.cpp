#include "advaug/trainer/checkpoint.hpp"

#include <zlib.h>

#include <array>
#include <bit>
#include <cstring>
#include <fstream>

#include "advaug/errors.hpp"

namespace advaug::train {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'A', 'D', 'V', 'A', 'U', 'G', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

class Writer {
 public:
  template <typename T>
  void put(T v) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
    bytes.insert(bytes.end(), p, p + sizeof(T));
  }
  void put_bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    bytes.insert(bytes.end(), p, p + n);
  }
  std::vector<std::uint8_t> bytes;
};

class Reader {
 public:
  Reader(const std::uint8_t* data, std::size_t size, std::string section)
      : data_(data), size_(size), section_(std::move(section)) {}

  template <typename T>
  T get() {
    T v;
    std::memcpy(&v, take(sizeof(T)), sizeof(T));
    return v;
  }
  const std::uint8_t* take(std::size_t n) {
    if (n > size_ - pos_) throw CheckpointError(section_, "truncated");
    const std::uint8_t* p = data_ + pos_;
    pos_ += n;
    return p;
  }
  bool done() const { return pos_ == size_; }
  const std::string& section() const { return section_; }

 private:
  const std::uint8_t* data_;
  std::size_t size_;
  std::size_t pos_ = 0;
  std::string section_;
};

void put_tensor(Writer& w, std::uint32_t layer, std::uint32_t role, const Tensor<float>& t) {
  w.put(layer);
  w.put(role);
  w.put(std::uint32_t{4});
  for (int d : t.shape()) w.put(static_cast<std::uint32_t>(d));
  w.put_bytes(t.data(), t.size() * sizeof(float));
}

struct TensorRecord {
  std::uint32_t layer;
  std::uint32_t role;
  Tensor<float> tensor;
};

TensorRecord get_tensor(Reader& r) {
  TensorRecord rec;
  rec.layer = r.get<std::uint32_t>();
  rec.role = r.get<std::uint32_t>();
  const auto ndim = r.get<std::uint32_t>();
  if (ndim != 4) throw CheckpointError(r.section(), "tensor rank " + std::to_string(ndim) + " is not 4");
  Tensor<float>::Shape shape{};
  std::size_t count = 1;
  for (auto& d : shape) {
    d = static_cast<int>(r.get<std::uint32_t>());
    if (d <= 0 || d > (1 << 24)) throw CheckpointError(r.section(), "implausible tensor dimension");
    count *= static_cast<std::size_t>(d);
  }
  rec.tensor = Tensor<float>(shape);
  std::memcpy(rec.tensor.data(), r.take(count * sizeof(float)), count * sizeof(float));
  return rec;
}

std::array<Tensor<float>*, 6> roles(net::LayerParams<float>& p) {
  return {&p.weight, &p.bias, &p.bn_scale, &p.bn_shift, &p.bn_mean, &p.bn_var};
}
std::array<const Tensor<float>*, 6> roles(const net::LayerParams<float>& p) {
  return {&p.weight, &p.bias, &p.bn_scale, &p.bn_shift, &p.bn_mean, &p.bn_var};
}

std::vector<std::uint8_t> params_payload(const net::ParameterSet<float>& params) {
  Writer w;
  std::uint32_t count = 0;
  for (const auto& l : params.layers)
    for (const auto* t : roles(l)) count += !t->empty();
  w.put(count);
  for (std::size_t i = 0; i < params.layers.size(); ++i) {
    const auto r = roles(params.layers[i]);
    for (std::uint32_t k = 0; k < r.size(); ++k)
      if (!r[k]->empty()) put_tensor(w, static_cast<std::uint32_t>(i), k, *r[k]);
  }
  return w.bytes;
}

net::ParameterSet<float> parse_params(Reader& r, const net::NetworkSpec& spec) {
  net::ParameterSet<float> params;
  params.layers.resize(spec.layers.size());
  const auto count = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    TensorRecord rec = get_tensor(r);
    if (rec.layer >= params.layers.size())
      throw CheckpointError(r.section(), "tensor for layer " + std::to_string(rec.layer) + " beyond the network spec");
    if (rec.role >= 6) throw CheckpointError(r.section(), "unknown tensor role " + std::to_string(rec.role));
    Tensor<float>* slot = roles(params.layers[rec.layer])[rec.role];
    if (!slot->empty()) throw CheckpointError(r.section(), "duplicate tensor record");
    *slot = std::move(rec.tensor);
  }
  if (!r.done()) throw CheckpointError(r.section(), "trailing bytes");
  try {
    net::validate_parameters(spec, params);
  } catch (const Error& e) {
    throw CheckpointError(r.section(), std::string("parameters do not match the network spec: ") + e.what());
  }
  return params;
}

std::vector<std::uint8_t> optimizer_payload(const AdadeltaState& s) {
  Writer w;
  w.put(s.rho);
  w.put(s.epsilon);
  w.put(static_cast<std::uint32_t>(2 * s.grad_sq.size()));
  for (std::size_t i = 0; i < s.grad_sq.size(); ++i) {
    put_tensor(w, static_cast<std::uint32_t>(i), 0, s.grad_sq[i]);
    put_tensor(w, static_cast<std::uint32_t>(i), 1, s.update_sq[i]);
  }
  return w.bytes;
}

AdadeltaState parse_optimizer(Reader& r, const net::ParameterSet<float>& params) {
  AdadeltaState s;
  s.rho = r.get<double>();
  s.epsilon = r.get<double>();
  const auto learnable = net::learnable_tensors(params);
  const auto count = r.get<std::uint32_t>();
  if (count != 2 * learnable.size()) throw CheckpointError(r.section(), "accumulator count does not match the network");
  s.grad_sq.resize(learnable.size());
  s.update_sq.resize(learnable.size());
  for (std::uint32_t i = 0; i < count; ++i) {
    TensorRecord rec = get_tensor(r);
    if (rec.layer >= learnable.size() || rec.role > 1 || !rec.tensor.same_shape(*learnable[rec.layer]))
      throw CheckpointError(r.section(), "accumulator " + std::to_string(rec.layer) + " does not match its parameter");
    (rec.role == 0 ? s.grad_sq : s.update_sq)[rec.layer] = std::move(rec.tensor);
  }
  if (!r.done()) throw CheckpointError(r.section(), "trailing bytes");
  return s;
}

std::vector<std::uint8_t> json_payload(const nlohmann::json& doc) {
  const std::string s = doc.dump(1);
  return {s.begin(), s.end()};
}

nlohmann::json parse_json(Reader& r, std::size_t size) {
  const auto* p = r.take(size);
  try {
    return nlohmann::json::parse(p, p + size);
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(r.section(), std::string("malformed JSON: ") + e.what());
  }
}

net::NetworkSpec parse_spec(Reader& r, std::size_t size) {
  try {
    net::NetworkSpec spec = net::network_spec_from_json(parse_json(r, size));
    spec.validate();
    return spec;
  } catch (const CheckpointError&) {
    throw;
  } catch (const std::exception& e) {
    throw CheckpointError(r.section(), std::string("invalid network spec: ") + e.what());
  }
}

void put_section(Writer& w, const char (&tag)[5], const std::vector<std::uint8_t>& payload) {
  w.put_bytes(tag, 4);
  w.put(static_cast<std::uint64_t>(payload.size()));
  w.put_bytes(payload.data(), payload.size());
  w.put(static_cast<std::uint32_t>(crc32(0L, payload.data(), static_cast<uInt>(payload.size()))));
}

}  // namespace

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& c) {
  nlohmann::json meta = {
      {"iteration", c.iteration},
      {"input_mean", c.input_mean},
      {"fingerprint", c.fingerprint},
      {"folded", c.folded},
      {"pencil_mode", c.pencil_mode},
      {"regime", c.regime},
      {"balance_multiplier", c.balance_multiplier},
      {"balance_window", c.balance_window},
      {"provenance", c.provenance},
  };
  Writer w;
  w.put_bytes(kMagic, sizeof kMagic);
  w.put(kVersion);
  put_section(w, "META", json_payload(meta));
  put_section(w, "SPEC", json_payload(net::to_json(c.simplifier.spec)));
  put_section(w, "PARM", params_payload(c.simplifier.params));
  if (c.discriminator) {
    put_section(w, "DSPC", json_payload(net::to_json(c.discriminator->spec)));
    put_section(w, "DPRM", params_payload(c.discriminator->params));
  }
  if (c.simplifier_optimizer) put_section(w, "OPTS", optimizer_payload(*c.simplifier_optimizer));
  if (c.discriminator_optimizer) put_section(w, "OPTD", optimizer_payload(*c.discriminator_optimizer));
  return w.bytes;
}

Checkpoint parse_checkpoint(const std::vector<std::uint8_t>& bytes) {
  Reader header(bytes.data(), bytes.size(), "header");
  if (bytes.size() < sizeof kMagic + 4 || std::memcmp(header.take(sizeof kMagic), kMagic, sizeof kMagic) != 0)
    throw CheckpointError("header", "not a checkpoint archive");
  const auto version = header.get<std::uint32_t>();
  if (version != kVersion) throw CheckpointError("header", "unsupported version " + std::to_string(version));

  Checkpoint c;
  bool have_meta = false, have_spec = false, have_params = false;
  std::optional<net::NetworkSpec> dspec;
  std::string last = "header";
  while (!header.done()) {
    std::string tag;
    std::uint64_t size = 0;
    try {
      const auto* t = header.take(4);
      tag.assign(reinterpret_cast<const char*>(t), 4);
      size = header.get<std::uint64_t>();
    } catch (const CheckpointError&) {
      throw CheckpointError(last, "truncated archive after this section");
    }
    if (size > bytes.size()) throw CheckpointError(tag, "section length exceeds the archive");
    const std::uint8_t* payload;
    std::uint32_t stored;
    try {
      payload = header.take(static_cast<std::size_t>(size));
      stored = header.get<std::uint32_t>();
    } catch (const CheckpointError&) {
      throw CheckpointError(tag, "truncated");
    }
    if (stored != crc32(0L, payload, static_cast<uInt>(size))) throw CheckpointError(tag, "CRC mismatch");
    Reader r(payload, static_cast<std::size_t>(size), tag);
    if (tag == "META") {
      const auto m = parse_json(r, size);
      try {
        c.iteration = m.at("iteration").get<std::int64_t>();
        c.input_mean = m.at("input_mean").get<double>();
        c.fingerprint = m.at("fingerprint").get<std::string>();
        c.folded = m.at("folded").get<bool>();
        c.pencil_mode = m.at("pencil_mode").get<bool>();
        c.regime = m.at("regime").get<std::string>();
        c.balance_multiplier = m.at("balance_multiplier").get<double>();
        c.balance_window = m.at("balance_window").get<std::vector<std::array<double, 2>>>();
        c.provenance = m.at("provenance");
      } catch (const nlohmann::json::exception& e) {
        throw CheckpointError(tag, std::string("missing or mistyped field: ") + e.what());
      }
      have_meta = true;
    } else if (tag == "SPEC") {
      c.simplifier.spec = parse_spec(r, size);
      have_spec = true;
    } else if (tag == "PARM") {
      if (!have_spec) throw CheckpointError(tag, "appears before SPEC");
      c.simplifier.params = parse_params(r, c.simplifier.spec);
      have_params = true;
    } else if (tag == "DSPC") {
      dspec = parse_spec(r, size);
    } else if (tag == "DPRM") {
      if (!dspec) throw CheckpointError(tag, "appears before DSPC");
      c.discriminator = net::Model<float>{*dspec, parse_params(r, *dspec)};
    } else if (tag == "OPTS") {
      if (!have_params) throw CheckpointError(tag, "appears before PARM");
      c.simplifier_optimizer = parse_optimizer(r, c.simplifier.params);
    } else if (tag == "OPTD") {
      if (!c.discriminator) throw CheckpointError(tag, "appears before DPRM");
      c.discriminator_optimizer = parse_optimizer(r, c.discriminator->params);
    } else {
      throw CheckpointError(tag, "unknown section");
    }
    last = tag;
  }
  if (!have_meta) throw CheckpointError("META", "missing");
  if (!have_spec) throw CheckpointError("SPEC", "missing");
  if (!have_params) throw CheckpointError("PARM", "missing");
  if (dspec && !c.discriminator) throw CheckpointError("DPRM", "missing");
  return c;
}

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path) {
  const auto bytes = serialize_checkpoint(checkpoint);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error("failed writing " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("header", "cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_checkpoint(bytes);
}

Checkpoint fold_for_inference(const Checkpoint& checkpoint) {
  if (checkpoint.folded) return checkpoint;
  Checkpoint out;
  out.simplifier = net::fold_batchnorm(checkpoint.simplifier);
  out.input_mean = checkpoint.input_mean;
  out.iteration = checkpoint.iteration;
  out.fingerprint = checkpoint.fingerprint;
  out.folded = true;
  out.pencil_mode = checkpoint.pencil_mode;
  out.regime = checkpoint.regime;
  out.balance_multiplier = checkpoint.balance_multiplier;
  out.balance_window = checkpoint.balance_window;
  out.provenance = checkpoint.provenance;
  out.provenance["folded_from"] = {{"fingerprint", checkpoint.fingerprint}, {"iteration", checkpoint.iteration}};
  return out;
}

}  // namespace advaug::train
