#ifndef HEALTHPOINT_OPTIM_HPP
#define HEALTHPOINT_OPTIM_HPP

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "healthpoint/autodiff.hpp"

namespace hp {

struct AdamWConfig {
  double learning_rate = 8e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.01;
};

/// AdamW with decoupled weight decay:
///   p <- p - lr * wd * p - lr * m_hat / (sqrt(v_hat) + eps)
/// Moments are keyed by parameter name so they survive checkpointing.
class AdamW {
 public:
  explicit AdamW(AdamWConfig config = {}) : config_(config) {}

  /// Applies one update to every parameter, then zeroes the gradients.
  void step(const std::vector<Parameter*>& params);

  const AdamWConfig& config() const { return config_; }
  void set_learning_rate(double lr) { config_.learning_rate = lr; }
  std::uint64_t steps() const { return step_; }

  struct Moments {
    Tensor first;
    Tensor second;
  };
  const std::map<std::string, Moments>& moments() const { return moments_; }
  void restore(std::uint64_t step, std::map<std::string, Moments> moments);

 private:
  AdamWConfig config_;
  std::uint64_t step_ = 0;
  std::map<std::string, Moments> moments_;
};

}  // namespace hp

#endif  // HEALTHPOINT_OPTIM_HPP
