#include "birdflux/nets.hpp"

#include <cmath>
#include <limits>

#include "birdflux/errors.hpp"

namespace birdflux::nets {

namespace {

Matrix uniform(int rows, int cols, double bound, Rng& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  return m;
}

void add_dense(ParamSet& params, const std::string& prefix, int fan_in, int fan_out, Rng& rng) {
  params.add(prefix + ".w", uniform(fan_in, fan_out, 1.0 / std::sqrt(static_cast<double>(fan_in)), rng));
  params.add(prefix + ".b", Matrix::Zero(1, fan_out));
}

ad::Var dense(const Bindings& p, const std::string& prefix, const ad::Var& x) {
  return ad::add(ad::matmul(x, p[prefix + ".w"]), expand_rows(p[prefix + ".b"], static_cast<int>(x.rows())));
}

}  // namespace

void ParamSet::add(const std::string& name, Matrix value) {
  if (!values_.emplace(name, std::move(value)).second) throw ConfigError("duplicate parameter '" + name + "'");
}

Matrix& ParamSet::at(const std::string& name) {
  auto it = values_.find(name);
  if (it == values_.end()) throw LookupError("unknown parameter '" + name + "'");
  return it->second;
}

const Matrix& ParamSet::at(const std::string& name) const {
  auto it = values_.find(name);
  if (it == values_.end()) throw LookupError("unknown parameter '" + name + "'");
  return it->second;
}

std::size_t ParamSet::num_scalars() const {
  std::size_t n = 0;
  for (const auto& [_, m] : values_) n += static_cast<std::size_t>(m.size());
  return n;
}

Bindings::Bindings(ad::Tape& tape, const ParamSet& params, bool requires_grad) : tape_(&tape) {
  for (const auto& [name, m] : params.all()) vars_.emplace(name, tape.leaf(m, requires_grad));
}

const ad::Var& Bindings::operator[](const std::string& name) const {
  auto it = vars_.find(name);
  if (it == vars_.end()) throw LookupError("unbound parameter '" + name + "'");
  return it->second;
}

std::map<std::string, Matrix> Bindings::gradients() const {
  std::map<std::string, Matrix> out;
  for (const auto& [name, v] : vars_) out.emplace(name, v.grad());
  return out;
}

ad::Var dropout(const ad::Var& x, const DropoutSpec& spec) {
  if (!spec.training || spec.rate <= 0.0) return x;
  if (spec.rate >= 1.0) throw ConfigError("dropout rate must be below 1");
  if (spec.rng == nullptr) throw ConfigError("dropout in training mode needs a generator");
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Matrix mask(x.rows(), x.cols());
  const double keep = 1.0 / (1.0 - spec.rate);
  for (Eigen::Index i = 0; i < mask.size(); ++i) mask.data()[i] = u(*spec.rng) < spec.rate ? 0.0 : keep;
  return ad::mul(x, x.tape().constant(std::move(mask)));
}

ad::Var expand_rows(const ad::Var& row, int n) {
  if (row.rows() == n) return row;
  return ad::gather_rows(row, ad::IndexList(static_cast<std::size_t>(n), 0));
}

void Mlp::init(ParamSet& params, Rng& rng) const {
  if (sizes.size() < 2) throw ConfigError("MLP '" + name + "' needs at least input and output sizes");
  for (std::size_t l = 0; l + 1 < sizes.size(); ++l)
    add_dense(params, name + ".l" + std::to_string(l), sizes[l], sizes[l + 1], rng);
}

ad::Var Mlp::forward(const Bindings& p, const ad::Var& x, const DropoutSpec& drop) const {
  ad::Var h = x;
  const std::size_t layers = sizes.size() - 1;
  for (std::size_t l = 0; l < layers; ++l) {
    h = dense(p, name + ".l" + std::to_string(l), h);
    if (l + 1 < layers) {
      h = activation == Activation::relu ? ad::relu(h) : ad::tanh(h);
      h = dropout(h, drop);
    }
  }
  return h;
}

void Lstm::init(ParamSet& params, Rng& rng) const {
  const double bound = 1.0 / std::sqrt(static_cast<double>(hidden));
  params.add(name + ".wx", uniform(input, 4 * hidden, bound, rng));
  params.add(name + ".wh", uniform(hidden, 4 * hidden, bound, rng));
  params.add(name + ".b", Matrix::Zero(1, 4 * hidden));
}

LstmState Lstm::step(const Bindings& p, const ad::Var& x, const LstmState& state) const {
  if (x.cols() != input) throw Error("LSTM '" + name + "': input has " + std::to_string(x.cols()) + " columns");
  const int n = static_cast<int>(x.rows());
  const ad::Var gates = ad::add(ad::add(ad::matmul(x, p[name + ".wx"]), ad::matmul(state.h, p[name + ".wh"])),
                                expand_rows(p[name + ".b"], n));
  const ad::Var i = ad::sigmoid(ad::slice_cols(gates, 0, hidden));
  const ad::Var f = ad::sigmoid(ad::slice_cols(gates, hidden, hidden));
  const ad::Var g = ad::tanh(ad::slice_cols(gates, 2 * hidden, hidden));
  const ad::Var o = ad::sigmoid(ad::slice_cols(gates, 3 * hidden, hidden));
  const ad::Var c = ad::add(ad::mul(f, state.c), ad::mul(i, g));
  return {ad::mul(o, ad::tanh(c)), c};
}

LstmState Lstm::zero_state(ad::Tape& tape, int rows) const {
  return {tape.constant(Matrix::Zero(rows, hidden)), tape.constant(Matrix::Zero(rows, hidden))};
}

GraphEdges GraphEdges::from_adjacency(const std::vector<std::vector<int>>& adjacency) {
  GraphEdges e;
  e.num_nodes = static_cast<int>(adjacency.size());
  for (int i = 0; i < e.num_nodes; ++i) {
    e.src.push_back(i);
    e.dst.push_back(i);
    for (const int j : adjacency[i]) {
      e.src.push_back(j);
      e.dst.push_back(i);
    }
  }
  return e;
}

void Gat::init(ParamSet& params, Rng& rng) const {
  if (sizes.size() < 2) throw ConfigError("GAT '" + name + "' needs at least input and output sizes");
  for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
    const std::string pre = name + ".l" + std::to_string(l);
    const int out = sizes[l + 1];
    add_dense(params, pre, sizes[l], out, rng);
    const double bound = 1.0 / std::sqrt(static_cast<double>(out));
    params.add(pre + ".a_src", uniform(out, 1, bound, rng));
    params.add(pre + ".a_dst", uniform(out, 1, bound, rng));
  }
}

ad::Var Gat::forward(const Bindings& p, const ad::Var& x, const GraphEdges& edges,
                     std::vector<ad::Var>* attention) const {
  if (x.rows() != edges.num_nodes) throw Error("GAT '" + name + "': feature rows do not match graph size");
  ad::Tape& tape = x.tape();
  const int n = edges.num_nodes;
  const std::size_t layers = sizes.size() - 1;
  ad::Var h = x;
  for (std::size_t l = 0; l < layers; ++l) {
    const std::string pre = name + ".l" + std::to_string(l);
    const int width = sizes[l + 1];
    const ad::Var wh = ad::matmul(h, p[pre + ".w"]);
    const ad::Var s_src = ad::matmul(wh, p[pre + ".a_src"]);
    const ad::Var s_dst = ad::matmul(wh, p[pre + ".a_dst"]);
    const ad::Var e =
        ad::leaky_relu(ad::add(ad::gather_rows(s_dst, edges.dst), ad::gather_rows(s_src, edges.src)), negative_slope);

    // Per-destination max shift for a stable softmax; it cancels analytically.
    Matrix node_max = Matrix::Constant(n, 1, -std::numeric_limits<double>::infinity());
    for (std::size_t k = 0; k < edges.dst.size(); ++k)
      node_max(edges.dst[k], 0) = std::max(node_max(edges.dst[k], 0), e.value()(static_cast<Eigen::Index>(k), 0));
    Matrix shift(static_cast<Eigen::Index>(edges.dst.size()), 1);
    for (std::size_t k = 0; k < edges.dst.size(); ++k) shift(static_cast<Eigen::Index>(k), 0) = node_max(edges.dst[k], 0);

    const ad::Var ex = ad::exp(ad::sub(e, tape.constant(std::move(shift))));
    const ad::Var denom = ad::scatter_add_rows(ex, edges.dst, n);
    const ad::Var alpha = ad::div(ex, ad::gather_rows(denom, edges.dst));
    if (attention != nullptr) attention->push_back(alpha);

    const ad::Var alpha_wide = ad::matmul(alpha, tape.constant(Matrix::Ones(1, width)));
    const ad::Var msg = ad::mul(alpha_wide, ad::gather_rows(wh, edges.src));
    h = ad::add(ad::scatter_add_rows(msg, edges.dst, n), expand_rows(p[pre + ".b"], n));
    if (l + 1 < layers) h = ad::relu(h);
  }
  return h;
}

nlohmann::ordered_json params_to_json(const ParamSet& params) {
  nlohmann::ordered_json out = nlohmann::ordered_json::object();
  for (const auto& [name, m] : params.all()) {
    nlohmann::ordered_json entry;
    entry["shape"] = {m.rows(), m.cols()};
    entry["data"] = std::vector<double>(m.data(), m.data() + m.size());
    out[name] = std::move(entry);
  }
  return out;
}

ParamSet params_from_json(const nlohmann::json& j) {
  ParamSet params;
  for (const auto& [name, entry] : j.items()) {
    const auto shape = entry.at("shape").get<std::vector<Eigen::Index>>();
    const auto data = entry.at("data").get<std::vector<double>>();
    if (shape.size() != 2 || static_cast<std::size_t>(shape[0] * shape[1]) != data.size())
      throw DataError("parameter '" + name + "' has inconsistent shape and data");
    Matrix m(shape[0], shape[1]);
    std::copy(data.begin(), data.end(), m.data());
    params.add(name, std::move(m));
  }
  return params;
}

}  // namespace birdflux::nets
