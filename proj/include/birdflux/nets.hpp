#pragma once

#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "birdflux/autodiff.hpp"
#include "birdflux/random.hpp"

namespace birdflux::nets {

using ad::Matrix;

/// Trainable weights keyed by canonical name ("mlp_v.w0", "enc.wx", ...).
/// Iteration order is the sorted name order.
class ParamSet {
 public:
  void add(const std::string& name, Matrix value);
  Matrix& at(const std::string& name);
  const Matrix& at(const std::string& name) const;
  bool contains(const std::string& name) const { return values_.count(name) != 0; }
  const std::map<std::string, Matrix>& all() const { return values_; }
  std::map<std::string, Matrix>& all() { return values_; }
  std::size_t num_scalars() const;

 private:
  std::map<std::string, Matrix> values_;
};

/// A ParamSet placed on a tape as leaves.
class Bindings {
 public:
  Bindings(ad::Tape& tape, const ParamSet& params, bool requires_grad = true);
  /// Binds existing nodes, e.g. leaves created by a gradient checker.
  Bindings(ad::Tape& tape, std::map<std::string, ad::Var> vars) : tape_(&tape), vars_(std::move(vars)) {}
  const ad::Var& operator[](const std::string& name) const;
  ad::Tape& tape() const { return *tape_; }
  /// Gradients keyed like the parameter set; call after Tape::backward.
  std::map<std::string, Matrix> gradients() const;

 private:
  ad::Tape* tape_;
  std::map<std::string, ad::Var> vars_;
};

/// Dropout configuration for one forward pass. Eval mode (training == false) is the identity.
struct DropoutSpec {
  double rate = 0.0;
  bool training = false;
  Rng* rng = nullptr;
};

/// Zeroes entries with probability `rate` and scales survivors by 1/(1 - rate) in training mode.
ad::Var dropout(const ad::Var& x, const DropoutSpec& spec);

/// Replicates a 1 x c row vector to n rows.
ad::Var expand_rows(const ad::Var& row, int n);

enum class Activation { relu, tanh };

/// Fully connected network; the last layer is linear.
struct Mlp {
  std::string name;
  std::vector<int> sizes;  // input, hidden..., output
  Activation activation = Activation::relu;

  void init(ParamSet& params, Rng& rng) const;
  ad::Var forward(const Bindings& p, const ad::Var& x, const DropoutSpec& drop = {}) const;
};

struct LstmState {
  ad::Var h;
  ad::Var c;
};

/// Single-layer LSTM cell with gates ordered (input, forget, candidate, output).
struct Lstm {
  std::string name;
  int input = 0;
  int hidden = 0;

  void init(ParamSet& params, Rng& rng) const;
  LstmState step(const Bindings& p, const ad::Var& x, const LstmState& state) const;
  LstmState zero_state(ad::Tape& tape, int rows) const;
};

/// Directed message edges src -> dst; every node carries a self loop.
struct GraphEdges {
  ad::IndexList src;
  ad::IndexList dst;
  int num_nodes = 0;

  static GraphEdges from_adjacency(const std::vector<std::vector<int>>& adjacency);
};

/// Single-head additive graph attention, ReLU between layers, linear output layer.
struct Gat {
  std::string name;
  std::vector<int> sizes;  // input, hidden..., output
  double negative_slope = 0.2;

  void init(ParamSet& params, Rng& rng) const;
  /// `attention`, when given, receives one E x 1 coefficient node per layer.
  ad::Var forward(const Bindings& p, const ad::Var& x, const GraphEdges& edges,
                  std::vector<ad::Var>* attention = nullptr) const;
};

nlohmann::ordered_json params_to_json(const ParamSet& params);
ParamSet params_from_json(const nlohmann::json& j);

}  // namespace birdflux::nets
