// Small parameterised building blocks shared by the attention layers.

#ifndef HEALTHPOINT_LAYERS_HPP
#define HEALTHPOINT_LAYERS_HPP

#include <string>
#include <vector>

#include "healthpoint/ops.hpp"
#include "healthpoint/rng.hpp"

namespace hp {

enum class Activation { identity, relu, tanh, gelu };

Var activate(Var x, Activation act);

/// y = x W + b with W stored (in, out).
struct Linear {
  Parameter* weight = nullptr;
  Parameter* bias = nullptr;  // null when created without bias

  Linear() = default;
  Linear(ParameterStore& store, const std::string& name, std::size_t in, std::size_t out, Rng& rng,
         bool with_bias = true);

  std::size_t in_features() const { return weight->value.dim(0); }
  std::size_t out_features() const { return weight->value.dim(1); }
  Var forward(Tape& tape, Var x) const;
};

/// Two-layer perceptron in -> hidden -> out with one hidden activation.
struct Mlp {
  Linear first;
  Linear second;
  Activation activation = Activation::gelu;

  Mlp() = default;
  Mlp(ParameterStore& store, const std::string& name, std::size_t in, std::size_t hidden, std::size_t out,
      Activation act, Rng& rng);

  Var forward(Tape& tape, Var x) const;
};

struct LayerNorm {
  Parameter* gain = nullptr;
  Parameter* bias = nullptr;

  LayerNorm() = default;
  LayerNorm(ParameterStore& store, const std::string& name, std::size_t width);

  Var forward(Tape& tape, Var x) const;
};

/// Gated recurrent unit cell, gates packed as [update | reset | candidate].
struct GruCell {
  Linear input;    // in -> 3*hidden, with bias
  Linear hidden;   // hidden -> 3*hidden, with bias
  std::size_t width = 0;

  GruCell() = default;
  GruCell(ParameterStore& store, const std::string& name, std::size_t in, std::size_t hidden_width, Rng& rng);

  Var step(Tape& tape, Var x, Var h) const;
};

/// Bidirectional GRU over equal-length batched sequences. The readout concatenates
/// the last forward and last backward hidden states and projects them to `out`.
struct BiGru {
  GruCell forward_cell;
  GruCell backward_cell;
  Linear readout;

  BiGru() = default;
  BiGru(ParameterStore& store, const std::string& name, std::size_t in, std::size_t hidden, std::size_t out,
        Rng& rng);

  /// steps[s] is (batch, in); returns (batch, out).
  Var forward(Tape& tape, const std::vector<Var>& steps) const;
};

}  // namespace hp

#endif  // HEALTHPOINT_LAYERS_HPP
