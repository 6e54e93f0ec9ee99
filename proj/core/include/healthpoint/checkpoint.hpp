// Flat checkpoint archive.
//
// Layout (all integers little-endian):
//   magic    "HPCKPT01"                      8 bytes
//   u64      manifest length, then manifest  UTF-8 JSON {config_hash, step, epoch, config, state}
//   u64      entry count
//   entries  u32 name length, name bytes, u32 ndim, ndim x u64 extents,
//            numel x float64 payload
// Entry names are parameter names; optimizer moments are stored under
// "adamw.m/<name>" and "adamw.v/<name>".

#ifndef HEALTHPOINT_CHECKPOINT_HPP
#define HEALTHPOINT_CHECKPOINT_HPP

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "healthpoint/autodiff.hpp"
#include "healthpoint/optim.hpp"

namespace hp {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct CheckpointManifest {
  std::string config_hash;
  std::uint64_t step = 0;
  std::uint64_t epoch = 0;
  /// Serialized JSON of the effective configuration.
  std::string config_json = "{}";
  /// Serialized JSON of caller-defined resume state (e.g. the metric history).
  std::string state_json = "{}";

  bool operator==(const CheckpointManifest&) const = default;
};

struct Checkpoint {
  CheckpointManifest manifest;
  std::vector<std::pair<std::string, Tensor>> entries;

  const Tensor* find(const std::string& name) const;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Snapshot of all parameters (and optimizer moments when given).
Checkpoint capture(const ParameterStore& store, const AdamW* optimizer, CheckpointManifest manifest);
/// Writes values back; every parameter in the store must be present with a matching shape.
void restore(const Checkpoint& checkpoint, ParameterStore& store, AdamW* optimizer);

}  // namespace hp

#endif  // HEALTHPOINT_CHECKPOINT_HPP
