#include "healthpoint/autodiff.hpp"

#include <stdexcept>

namespace hp {

Parameter& ParameterStore::create(const std::string& name, Tensor init) {
  if (index_.count(name)) throw std::invalid_argument("duplicate parameter name: " + name);
  index_.emplace(name, params_.size());
  Tensor grad = Tensor::zeros_like(init);
  params_.push_back(Parameter{name, std::move(init), std::move(grad)});
  return params_.back();
}

Parameter* ParameterStore::find(const std::string& name) {
  auto it = index_.find(name);
  return it == index_.end() ? nullptr : &params_[it->second];
}

const Parameter* ParameterStore::find(const std::string& name) const {
  auto it = index_.find(name);
  return it == index_.end() ? nullptr : &params_[it->second];
}

std::vector<Parameter*> ParameterStore::all() {
  std::vector<Parameter*> out;
  out.reserve(params_.size());
  for (auto& p : params_) out.push_back(&p);
  return out;
}

std::vector<const Parameter*> ParameterStore::all() const {
  std::vector<const Parameter*> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.push_back(&p);
  return out;
}

std::size_t ParameterStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

void ParameterStore::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

const Tensor& Var::value() const { return tape_->value(id_); }
bool Var::requires_grad() const { return tape_->requires_grad(id_); }

Var Tape::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, false, false, nullptr, {}});
  return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

Var Tape::parameter(Parameter& param) {
  nodes_.push_back(Node{param.value, {}, true, false, &param, {}});
  return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

Var Tape::record(Tensor value, std::initializer_list<Var> inputs, Backward backward) {
  bool needs = false;
  for (const auto& v : inputs) {
    if (&v.tape() != this) throw std::logic_error("operands recorded on different tapes");
    needs = needs || v.requires_grad();
  }
  nodes_.push_back(Node{std::move(value), {}, needs, false, nullptr,
                        needs ? std::move(backward) : Backward{}});
  return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

Var Tape::record(Tensor value, const std::vector<Var>& inputs, Backward backward) {
  bool needs = false;
  for (const auto& v : inputs) {
    if (&v.tape() != this) throw std::logic_error("operands recorded on different tapes");
    needs = needs || v.requires_grad();
  }
  nodes_.push_back(Node{std::move(value), {}, needs, false, nullptr,
                        needs ? std::move(backward) : Backward{}});
  return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

Tensor& Tape::grad(Var v) {
  Node& n = nodes_[v.id()];
  if (!n.has_grad) {
    n.grad = Tensor::zeros_like(n.value);
    n.has_grad = true;
  }
  return n.grad;
}

const Tensor* Tape::grad_if_any(Var v) const {
  const Node& n = nodes_[v.id()];
  return n.has_grad ? &n.grad : nullptr;
}

void Tape::backward(Var loss) {
  if (&loss.tape() != this) throw std::logic_error("loss belongs to another tape");
  if (loss.size() != 1) {
    throw ShapeError("backward() needs a scalar loss, got shape " + to_string(loss.shape()));
  }
  if (!loss.requires_grad()) return;
  grad(loss).fill(1.0);
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.has_grad || !n.requires_grad) continue;
    if (n.param != nullptr) {
      auto& dst = n.param->grad.buffer();
      const auto& src = n.grad.buffer();
      for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
    } else if (n.backward) {
      n.backward(*this, n.grad);
    }
  }
}

}  // namespace hp
