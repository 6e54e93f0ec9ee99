// Reverse-mode differentiation on an explicit tape.
//
// Every operation appends one node to the Tape holding its output value and a
// closure that maps the output adjoint onto the adjoints of its inputs. Nodes
// are appended in evaluation order, so the tape is already topologically
// sorted; backward() walks it once in reverse. Parameters enter the tape as
// leaves and receive accumulated (+=) gradients, which makes parameters shared
// between several call sites work without special handling.

#ifndef HEALTHPOINT_AUTODIFF_HPP
#define HEALTHPOINT_AUTODIFF_HPP

#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "healthpoint/tensor.hpp"

namespace hp {

/// A trainable tensor with a stable name used for checkpointing.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;

  void zero_grad() { grad.fill(0.0); }
};

/// Owns every parameter of a model. Addresses are stable for the store's lifetime.
class ParameterStore {
 public:
  ParameterStore() = default;
  ParameterStore(const ParameterStore&) = delete;
  ParameterStore& operator=(const ParameterStore&) = delete;

  Parameter& create(const std::string& name, Tensor init);
  Parameter* find(const std::string& name);
  const Parameter* find(const std::string& name) const;

  /// Parameters in creation order.
  std::vector<Parameter*> all();
  std::vector<const Parameter*> all() const;
  std::size_t size() const { return params_.size(); }
  std::size_t scalar_count() const;

  void zero_grad();

 private:
  std::deque<Parameter> params_;
  std::map<std::string, std::size_t> index_;
};

class Tape;

/// Handle to a node on a tape. Cheap to copy; only valid while the tape lives.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::uint32_t id) : tape_(tape), id_(id) {}

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t size() const { return value().size(); }
  double item() const { return value().item(); }
  bool requires_grad() const;
  bool valid() const { return tape_ != nullptr; }

  Tape& tape() const { return *tape_; }
  std::uint32_t id() const { return id_; }

 private:
  Tape* tape_ = nullptr;
  std::uint32_t id_ = 0;
};

class Tape {
 public:
  using Backward = std::function<void(Tape&, const Tensor& out_grad)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  Var parameter(Parameter& param);

  /// Appends an operation result. The closure is dropped when no input needs a gradient.
  Var record(Tensor value, std::initializer_list<Var> inputs, Backward backward);
  Var record(Tensor value, const std::vector<Var>& inputs, Backward backward);

  const Tensor& value(std::uint32_t id) const { return nodes_[id].value; }
  bool requires_grad(std::uint32_t id) const { return nodes_[id].requires_grad; }

  /// Adjoint buffer of a node, zero-initialised on first access.
  Tensor& grad(Var v);
  /// Adjoint of a node after backward(); empty when the node was not reached.
  const Tensor* grad_if_any(Var v) const;

  /// Propagates d(loss)/d(node) to every reachable node and into Parameter::grad.
  void backward(Var loss);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    bool has_grad = false;
    Parameter* param = nullptr;
    Backward backward;
  };

  std::deque<Node> nodes_;
};

}  // namespace hp

#endif  // HEALTHPOINT_AUTODIFF_HPP
