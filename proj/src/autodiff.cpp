#include "birdflux/autodiff.hpp"

#include <cmath>
#include <string>

#include "birdflux/errors.hpp"

namespace birdflux::ad {

namespace {

std::string shape(const Var& v) { return std::to_string(v.rows()) + "x" + std::to_string(v.cols()); }

void require_same_shape(std::string_view op, const Var& a, const Var& b) {
  if (&a.tape() != &b.tape()) throw Error(std::string(op) + ": operands live on different tapes");
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw Error(std::string(op) + ": shape mismatch " + shape(a) + " vs " + shape(b));
  }
}

template <typename F, typename D>
Var unary(std::string_view op, const Var& a, F f, D dfdx) {
  const int ia = a.id();
  Matrix v = a.value().unaryExpr(f);
  return a.tape().record(op, std::move(v), {a}, [ia, dfdx](Tape& t, const Matrix& g) {
    t.accumulate(ia, g.cwiseProduct(t.value(ia).unaryExpr(dfdx)));
  });
}

}  // namespace

const Matrix& Var::value() const { return tape_->value(id_); }
const Matrix& Var::grad() const { return tape_->grad(id_); }
bool Var::requires_grad() const { return tape_->requires_grad(id_); }

double Var::item() const {
  const Matrix& v = value();
  if (v.size() != 1) throw Error("item() on a non-scalar node of shape " + shape(*this));
  return v(0, 0);
}

Var Tape::leaf(Matrix value, bool requires_grad) {
  nodes_.push_back({std::move(value), Matrix(), requires_grad, "leaf", nullptr});
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::constant(double v) {
  Matrix m(1, 1);
  m(0, 0) = v;
  return leaf(std::move(m), false);
}

Var Tape::record(std::string_view op, Matrix value, std::initializer_list<Var> parents, BackwardFn fn) {
  bool rg = false;
  for (const Var& p : parents) rg = rg || p.requires_grad();
  nodes_.push_back({std::move(value), Matrix(), rg, op, rg ? std::move(fn) : nullptr});
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::record(std::string_view op, Matrix value, const std::vector<Var>& parents, BackwardFn fn) {
  bool rg = false;
  for (const Var& p : parents) rg = rg || p.requires_grad();
  nodes_.push_back({std::move(value), Matrix(), rg, op, rg ? std::move(fn) : nullptr});
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

const Matrix& Tape::grad(int id) {
  Node& n = nodes_[id];
  if (n.grad.size() == 0) n.grad = Matrix::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

void Tape::backward(const Var& loss) {
  if (done_) throw Error("backward() already ran on this tape");
  if (loss.value().size() != 1) throw Error("backward() needs a scalar loss, got " + shape(loss));
  done_ = true;
  if (!loss.requires_grad()) return;
  nodes_[loss.id()].grad = Matrix::Ones(1, 1);
  for (int id = loss.id(); id >= 0; --id) {
    Node& n = nodes_[id];
    if (!n.requires_grad || !n.backward || n.grad.size() == 0) continue;
    n.backward(*this, n.grad);
  }
}

Var add(const Var& a, const Var& b) {
  require_same_shape("add", a, b);
  const int ia = a.id(), ib = b.id();
  return a.tape().record("add", a.value() + b.value(), {a, b}, [ia, ib](Tape& t, const Matrix& g) {
    t.accumulate(ia, g);
    t.accumulate(ib, g);
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape("sub", a, b);
  const int ia = a.id(), ib = b.id();
  return a.tape().record("sub", a.value() - b.value(), {a, b}, [ia, ib](Tape& t, const Matrix& g) {
    t.accumulate(ia, g);
    t.accumulate(ib, -g);
  });
}

Var mul(const Var& a, const Var& b) {
  require_same_shape("mul", a, b);
  const int ia = a.id(), ib = b.id();
  return a.tape().record("mul", a.value().cwiseProduct(b.value()), {a, b}, [ia, ib](Tape& t, const Matrix& g) {
    t.accumulate(ia, g.cwiseProduct(t.value(ib)));
    t.accumulate(ib, g.cwiseProduct(t.value(ia)));
  });
}

Var div(const Var& a, const Var& b) {
  require_same_shape("div", a, b);
  const int ia = a.id(), ib = b.id();
  return a.tape().record("div", a.value().cwiseQuotient(b.value()), {a, b}, [ia, ib](Tape& t, const Matrix& g) {
    const Matrix& bv = t.value(ib);
    t.accumulate(ia, g.cwiseQuotient(bv));
    t.accumulate(ib, -g.cwiseProduct(t.value(ia)).cwiseQuotient(bv.cwiseProduct(bv)));
  });
}

Var matmul(const Var& a, const Var& b) {
  if (&a.tape() != &b.tape()) throw Error("matmul: operands live on different tapes");
  if (a.cols() != b.rows()) throw Error("matmul: shape mismatch " + shape(a) + " * " + shape(b));
  const int ia = a.id(), ib = b.id();
  Matrix v = a.value() * b.value();
  return a.tape().record("matmul", std::move(v), {a, b}, [ia, ib](Tape& t, const Matrix& g) {
    if (t.requires_grad(ia)) t.accumulate(ia, g * t.value(ib).transpose());
    if (t.requires_grad(ib)) t.accumulate(ib, t.value(ia).transpose() * g);
  });
}

Var spmm(std::shared_ptr<const SparseMatrix> a, const Var& x) {
  if (a->cols() != x.rows()) {
    throw Error("spmm: shape mismatch " + std::to_string(a->rows()) + "x" + std::to_string(a->cols()) + " * " +
                shape(x));
  }
  const int ix = x.id();
  Matrix v = (*a) * x.value();
  return x.tape().record("spmm", std::move(v), {x}, [ix, a](Tape& t, const Matrix& g) {
    t.accumulate(ix, Matrix(a->transpose() * g));
  });
}

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw Error("concat_cols: no inputs");
  const Eigen::Index rows = parts[0].rows();
  Eigen::Index cols = 0;
  for (const Var& p : parts) {
    if (p.rows() != rows) throw Error("concat_cols: row mismatch " + shape(parts[0]) + " vs " + shape(p));
    if (&p.tape() != &parts[0].tape()) throw Error("concat_cols: operands live on different tapes");
    cols += p.cols();
  }
  Matrix v(rows, cols);
  std::vector<int> ids;
  std::vector<Eigen::Index> offsets;
  Eigen::Index off = 0;
  for (const Var& p : parts) {
    v.middleCols(off, p.cols()) = p.value();
    ids.push_back(p.id());
    offsets.push_back(off);
    off += p.cols();
  }
  return parts[0].tape().record("concat_cols", std::move(v), parts, [ids, offsets](Tape& t, const Matrix& g) {
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (!t.requires_grad(ids[k])) continue;
      t.accumulate(ids[k], g.middleCols(offsets[k], t.value(ids[k]).cols()));
    }
  });
}

Var slice_cols(const Var& a, int start, int count) {
  if (start < 0 || count < 0 || start + count > a.cols()) {
    throw Error("slice_cols: range [" + std::to_string(start) + ", " + std::to_string(start + count) +
                ") outside " + shape(a));
  }
  const int ia = a.id();
  const Eigen::Index rows = a.rows(), cols = a.cols();
  Matrix v = a.value().middleCols(start, count);
  return a.tape().record("slice_cols", std::move(v), {a}, [ia, start, count, rows, cols](Tape& t, const Matrix& g) {
    Matrix full = Matrix::Zero(rows, cols);
    full.middleCols(start, count) = g;
    t.accumulate(ia, full);
  });
}

Var sum(const Var& a) {
  const int ia = a.id();
  const Eigen::Index rows = a.rows(), cols = a.cols();
  Matrix v(1, 1);
  v(0, 0) = a.value().sum();
  return a.tape().record("sum", std::move(v), {a}, [ia, rows, cols](Tape& t, const Matrix& g) {
    t.accumulate(ia, Matrix::Constant(rows, cols, g(0, 0)));
  });
}

Var mean(const Var& a) {
  if (a.value().size() == 0) throw Error("mean: empty input");
  return scale(sum(a), 1.0 / static_cast<double>(a.value().size()));
}

Var scale(const Var& a, double s) {
  const int ia = a.id();
  return a.tape().record("scale", a.value() * s, {a}, [ia, s](Tape& t, const Matrix& g) { t.accumulate(ia, g * s); });
}

Var tanh(const Var& a) {
  const int ia = a.id();
  Matrix v = a.value().array().tanh().matrix();
  const int self = static_cast<int>(a.tape().size());
  return a.tape().record("tanh", std::move(v), {a}, [ia, self](Tape& t, const Matrix& g) {
    const Matrix& y = t.value(self);
    t.accumulate(ia, g.cwiseProduct((1.0 - y.array().square()).matrix()));
  });
}

Var sigmoid(const Var& a) {
  const int ia = a.id();
  Matrix v = a.value().unaryExpr([](double x) { return 1.0 / (1.0 + std::exp(-x)); });
  const int self = static_cast<int>(a.tape().size());
  return a.tape().record("sigmoid", std::move(v), {a}, [ia, self](Tape& t, const Matrix& g) {
    const Matrix& y = t.value(self);
    t.accumulate(ia, g.cwiseProduct((y.array() * (1.0 - y.array())).matrix()));
  });
}

Var relu(const Var& a) {
  return unary("relu", a, [](double x) { return x > 0.0 ? x : 0.0; }, [](double x) { return x > 0.0 ? 1.0 : 0.0; });
}

Var leaky_relu(const Var& a, double slope) {
  return unary(
      "leaky_relu", a, [slope](double x) { return x > 0.0 ? x : slope * x; },
      [slope](double x) { return x > 0.0 ? 1.0 : slope; });
}

Var exp(const Var& a) {
  const int ia = a.id();
  Matrix v = a.value().array().exp().matrix();
  const int self = static_cast<int>(a.tape().size());
  return a.tape().record("exp", std::move(v), {a}, [ia, self](Tape& t, const Matrix& g) {
    t.accumulate(ia, g.cwiseProduct(t.value(self)));
  });
}

Var square(const Var& a) {
  return unary("square", a, [](double x) { return x * x; }, [](double x) { return 2.0 * x; });
}

Var sqrt(const Var& a) {
  return unary("sqrt", a, [](double x) { return std::sqrt(x); }, [](double x) { return 0.5 / std::sqrt(x); });
}

Var pos(const Var& a) {
  return unary("pos", a, [](double x) { return x > 0.0 ? x : 0.0; }, [](double x) { return x > 0.0 ? 1.0 : 0.0; });
}

Var neg(const Var& a) {
  return unary("neg", a, [](double x) { return x < 0.0 ? x : 0.0; }, [](double x) { return x < 0.0 ? 1.0 : 0.0; });
}

Var gather_rows(const Var& a, const IndexList& index) {
  const Eigen::Index n = a.rows();
  Matrix v(static_cast<Eigen::Index>(index.size()), a.cols());
  for (std::size_t r = 0; r < index.size(); ++r) {
    if (index[r] < 0 || index[r] >= n) throw Error("gather_rows: index " + std::to_string(index[r]) + " outside " + shape(a));
    v.row(static_cast<Eigen::Index>(r)) = a.value().row(index[r]);
  }
  const int ia = a.id();
  const Eigen::Index cols = a.cols();
  return a.tape().record("gather_rows", std::move(v), {a}, [ia, index, n, cols](Tape& t, const Matrix& g) {
    Matrix acc = Matrix::Zero(n, cols);
    for (std::size_t r = 0; r < index.size(); ++r) acc.row(index[r]) += g.row(static_cast<Eigen::Index>(r));
    t.accumulate(ia, acc);
  });
}

Var scatter_add_rows(const Var& a, const IndexList& index, int n_rows) {
  if (static_cast<Eigen::Index>(index.size()) != a.rows()) {
    throw Error("scatter_add_rows: " + std::to_string(index.size()) + " indices for " + shape(a));
  }
  Matrix v = Matrix::Zero(n_rows, a.cols());
  for (std::size_t r = 0; r < index.size(); ++r) {
    if (index[r] < 0 || index[r] >= n_rows) throw Error("scatter_add_rows: index " + std::to_string(index[r]) + " out of range");
    v.row(index[r]) += a.value().row(static_cast<Eigen::Index>(r));
  }
  const int ia = a.id();
  const Eigen::Index cols = a.cols();
  return a.tape().record("scatter_add_rows", std::move(v), {a}, [ia, index, cols](Tape& t, const Matrix& g) {
    Matrix out(static_cast<Eigen::Index>(index.size()), cols);
    for (std::size_t r = 0; r < index.size(); ++r) out.row(static_cast<Eigen::Index>(r)) = g.row(index[r]);
    t.accumulate(ia, out);
  });
}

}  // namespace birdflux::ad
