// Seeded synthetic multimodal event streams.
//
// Every case carries a smooth latent path z(t) (damped oscillators plus a level)
// observed through per-modality channels: features are a fixed linear map of z(t)
// plus a tanh nonlinearity plus Gaussian noise, at irregular times drawn from a
// Poisson process. Two outcome rules:
//   separable  y = [level + 0.5 * drift > 0], visible in every modality
//   coupled    y = [s_0 == s_1]; modality m shows a transient bump of sign s_m
//              around a shared event time t*, so each modality alone is
//              uninformative and only the product of the two signs predicts y
// Missingness: with probability p_m a case loses a random nonempty proper subset
// of its modalities; with probability p_l its label is hidden (training split only;
// validation and test labels stay observed so metrics are defined).

#ifndef HEALTHPOINT_SYNTHGEN_HPP
#define HEALTHPOINT_SYNTHGEN_HPP

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "healthpoint/events.hpp"
#include "healthpoint/tensor.hpp"

namespace hp {

enum class TaskKind { separable, coupled };

std::string task_name(TaskKind task);
TaskKind parse_task(const std::string& name);

struct GenConfig {
  std::size_t train_cases = 2000;
  std::size_t val_cases = 500;
  std::size_t test_cases = 500;
  std::size_t modalities = 2;
  std::vector<std::size_t> feature_dims{8, 8};
  double horizon = 48.0;
  std::vector<double> event_rate{0.5, 0.25};  ///< Mean events per hour, per modality.
  double modality_missing = 0.0;
  double label_missing = 0.0;
  TaskKind task = TaskKind::separable;
  double noise = 0.3;
  std::uint64_t seed = 0;

  bool operator==(const GenConfig&) const = default;
};

inline constexpr std::size_t kLatentDims = 4;

/// Parameters of a case's latent path.
struct Trajectory {
  double level = 0.0, drift = 0.0;
  double amp1 = 0.0, freq1 = 0.0, phase1 = 0.0, damp1 = 0.0;
  double amp2 = 0.0, freq2 = 0.0, phase2 = 0.0;

  /// z(t) = (level + drift u, damped sine, cosine, level cos(2 pi u)) with u = t / horizon.
  std::array<double, kLatentDims> at(double t, double horizon) const;
};

/// Per-modality observation map, fixed by the dataset seed.
struct Channel {
  Tensor linear;     ///< (features, latent)
  Tensor nonlinear;  ///< (features, latent)
  std::vector<double> transient_direction;  ///< Unit vector along which the coupled-task bump appears.
};

std::vector<Channel> observation_channels(const GenConfig& config);

/// Ground truth behind one generated case.
struct LatentCase {
  std::int64_t case_id = 0;
  Trajectory z;
  int sign0 = 1;
  int sign1 = 1;
  double event_time = 24.0;
  int label = 0;
};

struct Dataset {
  EventBatch train, val, test;
  std::vector<LatentCase> train_latent, val_latent, test_latent;
};

/// Signed height of modality m's transient at time t (zero on the separable task).
double transient(const GenConfig& config, const LatentCase& latent, std::size_t m, double t);

/// Expected content of an event of modality m at time t, without the transient and without noise.
std::vector<double> baseline_content(const GenConfig& config, const Channel& channel, const LatentCase& latent,
                                     double t);

/// Throws std::invalid_argument on rates outside [0, 1] or inconsistent per-modality lists.
Dataset generate(const GenConfig& config);

/// Split of `count` cases with ids starting at `first_id`; `labels_hidden` enables label missingness.
EventBatch generate_split(const GenConfig& config, std::size_t count, std::int64_t first_id, bool labels_hidden,
                          std::uint64_t stream, std::vector<LatentCase>* latent = nullptr);

}  // namespace hp

#endif  // HEALTHPOINT_SYNTHGEN_HPP
