#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace ifer {

/// Binary checkpoint.
///
/// Layout (all integers little-endian):
///   "IFERCKPT1"                      9-byte magic
///   u32 schema version
///   str stage tag                    (u32 length + bytes)
///   u64 iteration
///   u64 rng-state length + bytes
///   str architecture record          canonical "key=value\n" lines, sorted by key
///   u32 array count
///   per array, sorted by name: str name, u32 rank, u64 dims[rank], float32 data
class Checkpoint {
 public:
  static constexpr char kMagic[] = "IFERCKPT1";
  static constexpr uint32_t kSchemaVersion = 1;

  using Record = std::map<std::string, std::string>;

  std::string stage;
  uint64_t iteration = 0;
  std::vector<uint8_t> rng_state;
  Record architecture;
  std::map<std::string, torch::Tensor> arrays;  // float32, CPU, contiguous

  std::vector<uint8_t> to_bytes() const;
  static Checkpoint from_bytes(const std::vector<uint8_t>& bytes);

  void save(const std::filesystem::path& path) const;
  static Checkpoint load(const std::filesystem::path& path);

  /// Fingerprint of the serialized bytes.
  uint64_t hash() const;

  /// Copies every parameter and buffer of the module under "prefix.".
  void store(const std::string& prefix, const torch::nn::Module& module);
  /// Restores a module stored under prefix; missing or mis-shaped arrays throw LoadError.
  void restore(const std::string& prefix, torch::nn::Module& module) const;
  bool has_prefix(const std::string& prefix) const;

  /// Throws LoadError naming the first key whose value differs from expected.
  void require_architecture(const Record& expected) const;

  void capture_rng();
  void restore_rng() const;
};

}  // namespace ifer
