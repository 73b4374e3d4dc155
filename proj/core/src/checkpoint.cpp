#include "ifer/checkpoint.hpp"

#include "ifer/errors.hpp"
#include "ifer/util.hpp"

#include <ATen/CPUGeneratorImpl.h>

#include <cstring>
#include <fstream>
#include <iterator>

namespace ifer {

namespace {

class Writer {
 public:
  void bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const uint8_t*>(data);
    out_.insert(out_.end(), p, p + n);
  }
  template <typename T>
  void le(T value) {
    for (std::size_t i = 0; i < sizeof(T); ++i) out_.push_back(static_cast<uint8_t>(uint64_t(value) >> (8 * i)));
  }
  void str(const std::string& s) {
    le<uint32_t>(static_cast<uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  std::vector<uint8_t> take() { return std::move(out_); }

 private:
  std::vector<uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(const std::vector<uint8_t>& in) : in_(in) {}
  const uint8_t* bytes(std::size_t n) {
    if (pos_ + n > in_.size()) throw LoadError("checkpoint truncated at byte " + std::to_string(pos_));
    const auto* p = in_.data() + pos_;
    pos_ += n;
    return p;
  }
  template <typename T>
  T le() {
    const auto* p = bytes(sizeof(T));
    uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= uint64_t(p[i]) << (8 * i);
    return static_cast<T>(v);
  }
  std::string str() {
    const auto n = le<uint32_t>();
    const auto* p = bytes(n);
    return std::string(reinterpret_cast<const char*>(p), n);
  }
  bool done() const { return pos_ == in_.size(); }

 private:
  const std::vector<uint8_t>& in_;
  std::size_t pos_ = 0;
};

std::string encode_record(const Checkpoint::Record& r) {
  std::string out;
  for (const auto& [k, v] : r) out += k + "=" + v + "\n";
  return out;
}

Checkpoint::Record decode_record(const std::string& text) {
  Checkpoint::Record r;
  std::size_t start = 0;
  while (start < text.size()) {
    const auto end = text.find('\n', start);
    const auto line = text.substr(start, end - start);
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw LoadError("malformed architecture record line '" + line + "'");
    r[line.substr(0, eq)] = line.substr(eq + 1);
    if (end == std::string::npos) break;
    start = end + 1;
  }
  return r;
}

static_assert(sizeof(float) == 4);

void write_floats_le(Writer& w, const torch::Tensor& t) {
  const auto* data = t.data_ptr<float>();
  for (int64_t i = 0; i < t.numel(); ++i) {
    uint32_t bits;
    std::memcpy(&bits, data + i, 4);
    w.le<uint32_t>(bits);
  }
}

}  // namespace

std::vector<uint8_t> Checkpoint::to_bytes() const {
  Writer w;
  w.bytes(kMagic, sizeof(kMagic) - 1);
  w.le<uint32_t>(kSchemaVersion);
  w.str(stage);
  w.le<uint64_t>(iteration);
  w.le<uint64_t>(rng_state.size());
  w.bytes(rng_state.data(), rng_state.size());
  w.str(encode_record(architecture));
  w.le<uint32_t>(static_cast<uint32_t>(arrays.size()));
  for (const auto& [name, tensor] : arrays) {
    auto t = tensor.detach().to(torch::kCPU, torch::kFloat32).contiguous();
    w.str(name);
    w.le<uint32_t>(static_cast<uint32_t>(t.dim()));
    for (auto d : t.sizes()) w.le<uint64_t>(static_cast<uint64_t>(d));
    write_floats_le(w, t);
  }
  return w.take();
}

Checkpoint Checkpoint::from_bytes(const std::vector<uint8_t>& bytes) {
  Reader r(bytes);
  const auto* magic = r.bytes(sizeof(kMagic) - 1);
  if (std::memcmp(magic, kMagic, sizeof(kMagic) - 1) != 0) throw LoadError("not a checkpoint (bad magic)");
  const auto version = r.le<uint32_t>();
  if (version != kSchemaVersion)
    throw LoadError("checkpoint schema version " + std::to_string(version) + " is not supported (expected " +
                    std::to_string(kSchemaVersion) + ")");
  Checkpoint c;
  c.stage = r.str();
  c.iteration = r.le<uint64_t>();
  const auto rng_len = r.le<uint64_t>();
  const auto* rng = r.bytes(rng_len);
  c.rng_state.assign(rng, rng + rng_len);
  c.architecture = decode_record(r.str());
  const auto count = r.le<uint32_t>();
  for (uint32_t i = 0; i < count; ++i) {
    auto name = r.str();
    const auto rank = r.le<uint32_t>();
    std::vector<int64_t> dims(rank);
    int64_t numel = 1;
    for (auto& d : dims) {
      d = static_cast<int64_t>(r.le<uint64_t>());
      numel *= d;
    }
    auto t = torch::empty(dims, torch::kFloat32);
    auto* out = t.data_ptr<float>();
    for (int64_t k = 0; k < numel; ++k) {
      const auto bits = r.le<uint32_t>();
      std::memcpy(out + k, &bits, 4);
    }
    c.arrays.emplace(std::move(name), std::move(t));
  }
  if (!r.done()) throw LoadError("checkpoint has trailing bytes");
  return c;
}

void Checkpoint::save(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto bytes = to_bytes();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw LoadError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw LoadError("failed writing " + path.string());
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open checkpoint " + path.string());
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return from_bytes(bytes);
  } catch (const LoadError& e) {
    throw LoadError(path.string() + ": " + e.what());
  }
}

uint64_t Checkpoint::hash() const {
  const auto bytes = to_bytes();
  return fnv1a(std::span(bytes.data(), bytes.size()));
}

void Checkpoint::store(const std::string& prefix, const torch::nn::Module& module) {
  for (const auto& item : module.named_parameters(true))
    arrays[prefix + "." + item.key()] = item.value().detach().to(torch::kCPU, torch::kFloat32).contiguous().clone();
  for (const auto& item : module.named_buffers(true))
    arrays[prefix + "." + item.key()] = item.value().detach().to(torch::kCPU, torch::kFloat32).contiguous().clone();
}

void Checkpoint::restore(const std::string& prefix, torch::nn::Module& module) const {
  torch::NoGradGuard no_grad;
  auto assign = [&](const std::string& key, torch::Tensor& target) {
    const auto name = prefix + "." + key;
    auto it = arrays.find(name);
    if (it == arrays.end()) throw LoadError("checkpoint is missing array '" + name + "'");
    if (it->second.sizes() != target.sizes())
      throw LoadError("array '" + name + "' has shape " + c10::str(it->second.sizes()) + ", model expects " +
                      c10::str(target.sizes()));
    target.copy_(it->second.to(target.dtype()));
  };
  for (auto& item : module.named_parameters(true)) assign(item.key(), item.value());
  for (auto& item : module.named_buffers(true)) assign(item.key(), item.value());
}

bool Checkpoint::has_prefix(const std::string& prefix) const {
  auto it = arrays.lower_bound(prefix + ".");
  return it != arrays.end() && it->first.rfind(prefix + ".", 0) == 0;
}

void Checkpoint::require_architecture(const Record& expected) const {
  for (const auto& [key, value] : expected) {
    auto it = architecture.find(key);
    if (it == architecture.end())
      throw LoadError("architecture mismatch: checkpoint has no '" + key + "' (expected " + value + ")");
    if (it->second != value)
      throw LoadError("architecture mismatch: '" + key + "' is " + it->second + " in checkpoint, expected " + value);
  }
}

void Checkpoint::capture_rng() {
  auto state = at::detail::getDefaultCPUGenerator().get_state().contiguous();
  const auto* p = state.data_ptr<uint8_t>();
  rng_state.assign(p, p + state.numel());
}

void Checkpoint::restore_rng() const {
  if (rng_state.empty()) return;
  auto state = torch::empty({static_cast<int64_t>(rng_state.size())}, torch::kUInt8);
  std::memcpy(state.data_ptr<uint8_t>(), rng_state.data(), rng_state.size());
  auto gen = at::detail::getDefaultCPUGenerator();
  gen.set_state(state);
}

}  // namespace ifer
