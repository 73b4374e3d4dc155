#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace ifer {

/// FNV-1a over raw bytes; used for checkpoint and dataset fingerprints.
uint64_t fnv1a(std::span<const uint8_t> bytes, uint64_t seed = 0xcbf29ce484222325ULL);
uint64_t fnv1a(const std::string& s, uint64_t seed = 0xcbf29ce484222325ULL);

/// Fingerprint of every parameter and buffer of a module, taken in name order.
uint64_t parameter_checksum(const torch::nn::Module& module);

std::string hex64(uint64_t value);

/// SplitMix64 finalizer; derives independent stream seeds from (seed, tag).
uint64_t mix_seed(uint64_t seed, uint64_t tag);

/// Disables requires_grad on a module's parameters for the guard's lifetime.
class FreezeGuard {
 public:
  explicit FreezeGuard(torch::nn::Module& module);
  ~FreezeGuard();
  FreezeGuard(const FreezeGuard&) = delete;
  FreezeGuard& operator=(const FreezeGuard&) = delete;

 private:
  std::vector<torch::Tensor> params_;
  std::vector<bool> previous_;
};

void set_requires_grad(torch::nn::Module& module, bool value);

/// Deterministic single-threaded execution with seeded torch RNG.
void seed_everything(uint64_t seed);

bool is_power_of_two(int64_t v);
int64_t ilog2(int64_t v);

std::string join(const std::vector<int64_t>& values, char sep = ',');
std::vector<int64_t> parse_int_list(const std::string& text);

}  // namespace ifer
