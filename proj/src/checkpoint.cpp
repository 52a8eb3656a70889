#include "mvlt/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "mvlt/error.hpp"

namespace mvlt {
namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

constexpr char kMagic[4] = {'M', 'V', 'L', 'T'};

class Writer {
 public:
  template <typename T>
  void put(T value) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&value);
    out.insert(out.end(), p, p + sizeof(T));
  }
  void bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    out.insert(out.end(), p, p + n);
  }
  void doubles(const std::vector<double>& v) { bytes(v.data(), v.size() * sizeof(double)); }

  std::vector<std::uint8_t> out;
};

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& buf) : buf_(buf) {}

  template <typename T>
  T get(const char* what) {
    T value;
    std::memcpy(&value, take(sizeof(T), what), sizeof(T));
    return value;
  }
  std::string string(std::size_t n, const char* what) {
    const auto* p = take(n, what);
    return std::string(reinterpret_cast<const char*>(p), n);
  }
  std::vector<double> doubles(std::size_t n, const char* what) {
    if (n > remaining() / sizeof(double)) truncated(what);
    std::vector<double> v(n);
    std::memcpy(v.data(), take(n * sizeof(double), what), n * sizeof(double));
    return v;
  }
  std::size_t remaining() const { return buf_.size() - pos_; }

 private:
  const std::uint8_t* take(std::size_t n, const char* what) {
    if (n > remaining()) truncated(what);
    const auto* p = buf_.data() + pos_;
    pos_ += n;
    return p;
  }
  [[noreturn]] static void truncated(const char* what) {
    throw FormatError(std::string("checkpoint truncated while reading ") + what);
  }

  const std::vector<std::uint8_t>& buf_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ckpt) {
  Writer w;
  w.bytes(kMagic, 4);
  w.put<std::uint32_t>(kCheckpointVersion);

  nlohmann::json header{{"schema_version", kConfigSchemaVersion}, {"model", ckpt.model}};
  if (ckpt.train) header["train"] = *ckpt.train;
  const std::string text = header.dump();
  w.put<std::uint64_t>(text.size());
  w.bytes(text.data(), text.size());

  w.put<std::uint64_t>(ckpt.tensors.size());
  for (const auto& t : ckpt.tensors) {
    if (shape_numel(t.shape) != t.data.size()) {
      throw ContractError("tensor " + t.name + " data does not match shape " + shape_str(t.shape));
    }
    w.put<std::uint32_t>(static_cast<std::uint32_t>(t.name.size()));
    w.bytes(t.name.data(), t.name.size());
    w.put<std::uint32_t>(static_cast<std::uint32_t>(t.shape.size()));
    for (auto d : t.shape) w.put<std::uint64_t>(d);
    w.doubles(t.data);
  }

  w.put<std::uint8_t>(ckpt.optimizer ? 1 : 0);
  if (ckpt.optimizer) {
    const auto& opt = *ckpt.optimizer;
    if (opt.m.size() != ckpt.tensors.size() || opt.v.size() != ckpt.tensors.size()) {
      throw ContractError("optimizer state does not match the tensor table");
    }
    w.put<std::uint64_t>(opt.t);
    for (std::size_t i = 0; i < ckpt.tensors.size(); ++i) {
      if (opt.m[i].size() != ckpt.tensors[i].data.size() ||
          opt.v[i].size() != ckpt.tensors[i].data.size()) {
        throw ContractError("optimizer moments for " + ckpt.tensors[i].name + " have the wrong size");
      }
      w.doubles(opt.m[i]);
      w.doubles(opt.v[i]);
    }
  }

  w.put<std::uint64_t>(ckpt.seed);
  w.put<std::uint64_t>(ckpt.rng_step);
  w.put<std::uint64_t>(ckpt.step);
  return std::move(w.out);
}

Checkpoint deserialize_checkpoint(const std::vector<std::uint8_t>& bytes) {
  Reader r(bytes);
  if (r.string(4, "magic") != std::string(kMagic, 4)) throw FormatError("not an MVLT checkpoint (bad magic)");
  const auto version = r.get<std::uint32_t>("version");
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version) + " (expected " +
                      std::to_string(kCheckpointVersion) + ")");
  }

  Checkpoint ckpt;
  const auto header_len = r.get<std::uint64_t>("header length");
  if (header_len > r.remaining()) throw FormatError("checkpoint truncated while reading header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(r.string(header_len, "header"));
    if (header.value("schema_version", -1) != kConfigSchemaVersion) {
      throw FormatError("checkpoint config schema version mismatch");
    }
    ckpt.model = header.at("model").get<ModelConfig>();
    if (header.contains("train")) ckpt.train = header.at("train").get<TrainConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint header is not valid: ") + e.what());
  } catch (const ConfigError& e) {
    throw FormatError(std::string("checkpoint header is not valid: ") + e.what());
  }

  const auto count = r.get<std::uint64_t>("tensor count");
  for (std::uint64_t i = 0; i < count; ++i) {
    NamedTensor t;
    t.name = r.string(r.get<std::uint32_t>("name length"), "tensor name");
    const auto rank = r.get<std::uint32_t>("rank");
    if (rank > 8) throw FormatError("tensor " + t.name + " has implausible rank " + std::to_string(rank));
    for (std::uint32_t d = 0; d < rank; ++d) t.shape.push_back(r.get<std::uint64_t>("dims"));
    t.data = r.doubles(shape_numel(t.shape), "tensor data");
    ckpt.tensors.push_back(std::move(t));
  }

  const auto has_opt = r.get<std::uint8_t>("optimizer flag");
  if (has_opt > 1) throw FormatError("bad optimizer flag");
  if (has_opt) {
    AdamWState opt;
    opt.t = r.get<std::uint64_t>("optimizer step");
    for (const auto& t : ckpt.tensors) {
      opt.m.push_back(r.doubles(t.data.size(), "optimizer moments"));
      opt.v.push_back(r.doubles(t.data.size(), "optimizer moments"));
    }
    ckpt.optimizer = std::move(opt);
  }

  ckpt.seed = r.get<std::uint64_t>("seed");
  ckpt.rng_step = r.get<std::uint64_t>("rng state");
  ckpt.step = r.get<std::uint64_t>("step");
  if (r.remaining() != 0) throw FormatError("trailing bytes after checkpoint");
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  const auto bytes = serialize_checkpoint(ckpt);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes);
}

Checkpoint capture(const MvltModel& model, const std::optional<TrainConfig>& train,
                   const AdamWState* optimizer, std::uint64_t seed, std::uint64_t step) {
  Checkpoint ckpt;
  ckpt.model = model.config();
  ckpt.train = train;
  for (const auto& p : model.params()) {
    auto data = p.value.data();
    ckpt.tensors.push_back({p.name, p.value.shape(), std::vector<double>(data.begin(), data.end())});
  }
  if (optimizer) ckpt.optimizer = *optimizer;
  ckpt.seed = seed;
  ckpt.rng_step = step;
  ckpt.step = step;
  return ckpt;
}

void restore_parameters(MvltModel& model, const Checkpoint& ckpt) {
  auto& store = model.params();
  if (ckpt.tensors.size() != store.size()) {
    throw FormatError("checkpoint has " + std::to_string(ckpt.tensors.size()) + " tensors, model expects " +
                      std::to_string(store.size()));
  }
  for (std::size_t i = 0; i < store.size(); ++i) {
    const auto& t = ckpt.tensors[i];
    const auto& p = store[i];
    if (t.name != p.name) throw FormatError("checkpoint tensor " + t.name + " where " + p.name + " was expected");
    if (t.shape != p.value.shape()) {
      throw FormatError("shape mismatch for " + t.name + ": checkpoint " + shape_str(t.shape) + ", model " +
                        shape_str(p.value.shape()));
    }
  }
  for (std::size_t i = 0; i < store.size(); ++i) {
    auto dst = store[i].value.data();
    std::copy(ckpt.tensors[i].data.begin(), ckpt.tensors[i].data.end(), dst.begin());
  }
}

MvltModel model_from_checkpoint(const Checkpoint& ckpt) {
  ckpt.model.validate();
  MvltModel model(ckpt.model, ckpt.seed);
  restore_parameters(model, ckpt);
  return model;
}

}  // namespace mvlt
