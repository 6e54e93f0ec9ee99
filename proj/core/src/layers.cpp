#include "healthpoint/layers.hpp"

#include <cmath>
#include <stdexcept>

namespace hp {

Var activate(Var x, Activation act) {
  switch (act) {
    case Activation::identity: return x;
    case Activation::relu: return ops::relu(x);
    case Activation::tanh: return ops::tanh(x);
    case Activation::gelu: return ops::gelu(x);
  }
  throw std::invalid_argument("unknown activation");
}

Linear::Linear(ParameterStore& store, const std::string& name, std::size_t in, std::size_t out, Rng& rng,
               bool with_bias) {
  weight = &store.create(name + ".weight", rng.normal_tensor({in, out}, 1.0 / std::sqrt(static_cast<double>(in))));
  if (with_bias) bias = &store.create(name + ".bias", Tensor({out}));
}

Var Linear::forward(Tape& tape, Var x) const {
  Var y = ops::matmul(x, tape.parameter(*weight));
  return bias ? ops::add(y, tape.parameter(*bias)) : y;
}

Mlp::Mlp(ParameterStore& store, const std::string& name, std::size_t in, std::size_t hidden, std::size_t out,
         Activation act, Rng& rng)
    : first(store, name + ".fc1", in, hidden, rng), second(store, name + ".fc2", hidden, out, rng), activation(act) {}

Var Mlp::forward(Tape& tape, Var x) const {
  return second.forward(tape, activate(first.forward(tape, x), activation));
}

LayerNorm::LayerNorm(ParameterStore& store, const std::string& name, std::size_t width) {
  Tensor ones({width});
  ones.fill(1.0);
  gain = &store.create(name + ".gain", std::move(ones));
  bias = &store.create(name + ".bias", Tensor({width}));
}

Var LayerNorm::forward(Tape& tape, Var x) const {
  return ops::layer_norm(x, tape.parameter(*gain), tape.parameter(*bias));
}

GruCell::GruCell(ParameterStore& store, const std::string& name, std::size_t in, std::size_t hidden_width, Rng& rng)
    : input(store, name + ".input", in, 3 * hidden_width, rng),
      hidden(store, name + ".hidden", hidden_width, 3 * hidden_width, rng),
      width(hidden_width) {}

Var GruCell::step(Tape& tape, Var x, Var h) const {
  const Var gx = input.forward(tape, x);
  const Var gh = hidden.forward(tape, h);
  const std::size_t w = width;
  const Var z = ops::sigmoid(ops::slice(gx, 1, 0, w) + ops::slice(gh, 1, 0, w));
  const Var r = ops::sigmoid(ops::slice(gx, 1, w, 2 * w) + ops::slice(gh, 1, w, 2 * w));
  const Var n = ops::tanh(ops::slice(gx, 1, 2 * w, 3 * w) + r * ops::slice(gh, 1, 2 * w, 3 * w));
  // h' = (1 - z) * n + z * h = n + z * (h - n)
  return n + z * (h - n);
}

BiGru::BiGru(ParameterStore& store, const std::string& name, std::size_t in, std::size_t hidden, std::size_t out,
             Rng& rng)
    : forward_cell(store, name + ".fwd", in, hidden, rng),
      backward_cell(store, name + ".bwd", in, hidden, rng),
      readout(store, name + ".readout", 2 * hidden, out, rng) {}

Var BiGru::forward(Tape& tape, const std::vector<Var>& steps) const {
  if (steps.empty()) throw std::invalid_argument("BiGru: empty sequence");
  const std::size_t batch = steps.front().value().rows();
  Var hf = tape.constant(Tensor({batch, forward_cell.width}));
  for (const auto& x : steps) hf = forward_cell.step(tape, x, hf);
  Var hb = tape.constant(Tensor({batch, backward_cell.width}));
  for (auto it = steps.rbegin(); it != steps.rend(); ++it) hb = backward_cell.step(tape, *it, hb);
  return readout.forward(tape, ops::concat({hf, hb}, 1));
}

}  // namespace hp
