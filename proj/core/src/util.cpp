#include "ifer/util.hpp"

#include "ifer/errors.hpp"

#include <cstdio>
#include <sstream>

namespace ifer {

uint64_t fnv1a(std::span<const uint8_t> bytes, uint64_t seed) {
  uint64_t h = seed;
  for (uint8_t b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

uint64_t fnv1a(const std::string& s, uint64_t seed) {
  return fnv1a(std::span(reinterpret_cast<const uint8_t*>(s.data()), s.size()), seed);
}

uint64_t parameter_checksum(const torch::nn::Module& module) {
  uint64_t h = 0xcbf29ce484222325ULL;
  auto fold = [&](const std::string& name, const torch::Tensor& t) {
    h = fnv1a(name, h);
    auto c = t.detach().to(torch::kCPU).contiguous();
    h = fnv1a(std::span(static_cast<const uint8_t*>(c.data_ptr()), c.nbytes()), h);
  };
  for (const auto& item : module.named_parameters(true)) fold(item.key(), item.value());
  for (const auto& item : module.named_buffers(true)) fold(item.key(), item.value());
  return h;
}

std::string hex64(uint64_t value) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(value));
  return buf;
}

uint64_t mix_seed(uint64_t seed, uint64_t tag) {
  uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (tag + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

FreezeGuard::FreezeGuard(torch::nn::Module& module) {
  for (auto& p : module.parameters(true)) {
    params_.push_back(p);
    previous_.push_back(p.requires_grad());
    p.set_requires_grad(false);
  }
}

FreezeGuard::~FreezeGuard() {
  for (std::size_t i = 0; i < params_.size(); ++i) params_[i].set_requires_grad(previous_[i]);
}

void set_requires_grad(torch::nn::Module& module, bool value) {
  for (auto& p : module.parameters(true)) p.set_requires_grad(value);
}

void seed_everything(uint64_t seed) {
  torch::set_num_threads(1);
  torch::manual_seed(seed);
}

bool is_power_of_two(int64_t v) { return v > 0 && (v & (v - 1)) == 0; }

int64_t ilog2(int64_t v) {
  int64_t r = 0;
  while ((int64_t{1} << (r + 1)) <= v) ++r;
  return r;
}

std::string join(const std::vector<int64_t>& values, char sep) {
  std::ostringstream out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) out << sep;
    out << values[i];
  }
  return out.str();
}

std::vector<int64_t> parse_int_list(const std::string& text) {
  std::vector<int64_t> out;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    try {
      out.push_back(std::stoll(item));
    } catch (const std::exception&) {
      throw ConfigError("not an integer list: '" + text + "'");
    }
  }
  return out;
}

}  // namespace ifer
