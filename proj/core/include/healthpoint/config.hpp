// Run configuration and its JSON form.
//
// Schema (every key optional; missing keys keep their defaults):
//   {
//     "data":  {"train_cases", "val_cases", "test_cases", "modalities", "feature_dims": [..],
//               "horizon", "event_rate": [..], "modality_missing", "label_missing",
//               "task": "separable"|"coupled", "noise", "seed"},
//     "model": {"width", "heads", "rank", "ffn_multiplier", "delta", "k_max",
//               "grid1": [..], "grid3": [..], "pre_norm",
//               "isolate_reconstruction", "init_seed"},
//     "loss":  {"lambda_a", "lambda_r", "normalize", "detach_target", "temperature",
//               "fga_excluded": [..]},
//     "train": {"epochs", "batch_size", "learning_rate", "weight_decay", "seed",
//               "branch": "entropy"|"global"}
//   }
// The model's modality count, feature widths and horizon are taken from "data".

#ifndef HEALTHPOINT_CONFIG_HPP
#define HEALTHPOINT_CONFIG_HPP

#include <filesystem>
#include <stdexcept>
#include <string>

#include "healthpoint/objectives.hpp"
#include "healthpoint/synthgen.hpp"

namespace hp {

struct TrainConfig {
  std::size_t epochs = 30;
  std::size_t batch_size = 16;
  double learning_rate = 8e-4;
  double weight_decay = 0.01;
  std::uint64_t seed = 0;
  InferenceMode branch = InferenceMode::entropy;

  bool operator==(const TrainConfig&) const = default;
};

struct RunConfig {
  GenConfig data;
  ModelConfig model;
  LossConfig loss;
  TrainConfig train;

  /// Model configuration with the data-dependent fields filled in.
  ModelConfig effective_model() const;

  bool operator==(const RunConfig&) const = default;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Canonical pretty-printed JSON of every field.
std::string to_json(const RunConfig& config);
/// Overlays the keys present in `text` onto `base`; unknown keys raise ConfigError.
RunConfig parse_run_config(const std::string& text, const RunConfig& base = {});
RunConfig load_run_config(const std::filesystem::path& path, const RunConfig& base = {});

/// 16 hex digits of FNV-1a over the canonical JSON.
std::string config_hash(const RunConfig& config);

std::string inference_mode_name(InferenceMode mode);
InferenceMode parse_inference_mode(const std::string& name);

}  // namespace hp

#endif  // HEALTHPOINT_CONFIG_HPP
