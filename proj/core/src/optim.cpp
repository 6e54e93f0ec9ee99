#include "healthpoint/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace hp {

void AdamW::step(const std::vector<Parameter*>& params) {
  ++step_;
  const auto& c = config_;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(step_));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(step_));
  for (Parameter* p : params) {
    auto it = moments_.find(p->name);
    if (it == moments_.end()) {
      it = moments_.emplace(p->name, Moments{Tensor::zeros_like(p->value), Tensor::zeros_like(p->value)}).first;
    }
    auto& m = it->second.first;
    auto& v = it->second.second;
    if (m.shape() != p->value.shape()) {
      throw ShapeError("AdamW: moment shape " + to_string(m.shape()) + " does not match parameter " + p->name +
                       " of shape " + to_string(p->value.shape()));
    }
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const double g = p->grad[i];
      m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g;
      v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g * g;
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      p->value[i] -= c.learning_rate * c.weight_decay * p->value[i];
      p->value[i] -= c.learning_rate * mhat / (std::sqrt(vhat) + c.epsilon);
    }
    p->zero_grad();
  }
}

void AdamW::restore(std::uint64_t step, std::map<std::string, Moments> moments) {
  step_ = step;
  moments_ = std::move(moments);
}

}  // namespace hp
