#pragma once

// Tape-based reverse-mode differentiation over dense row-major matrices.
//
// Nodes are recorded in creation order, which is a topological order, so the
// backward sweep is a single reverse pass. A tape supports exactly one
// backward() call. Broadcasting is limited to scalar scaling; expand with
// gather_rows (row replication) or matmul against a constant ones matrix.

#include <deque>
#include <functional>
#include <memory>
#include <string_view>
#include <vector>

#include <Eigen/Core>
#include <Eigen/SparseCore>

namespace birdflux::ad {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using SparseMatrix = Eigen::SparseMatrix<double, Eigen::RowMajor>;
using IndexList = std::vector<int>;

class Tape;

/// Handle to a node on a tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  const Matrix& value() const;
  /// Gradient of the loss with respect to this node (zeros if unreached).
  const Matrix& grad() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  double item() const;
  bool requires_grad() const;

  Tape& tape() const { return *tape_; }
  int id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape* tape_ = nullptr;
  int id_ = -1;
};

class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Matrix&)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Matrix value, bool requires_grad = true);
  Var constant(Matrix value) { return leaf(std::move(value), false); }
  Var constant(double v);

  /// Records an op node. `fn` receives the node's upstream gradient and must
  /// route it to the parents through accumulate().
  Var record(std::string_view op, Matrix value, std::initializer_list<Var> parents, BackwardFn fn);
  Var record(std::string_view op, Matrix value, const std::vector<Var>& parents, BackwardFn fn);

  /// Reverse sweep from a 1x1 loss. Throws on a non-scalar loss or a second call.
  void backward(const Var& loss);
  bool backward_done() const { return done_; }

  template <typename Expr>
  void accumulate(int id, const Expr& g) {
    Node& n = nodes_[id];
    if (!n.requires_grad) return;
    if (n.grad.size() == 0) {
      n.grad = g;
    } else {
      n.grad += g;
    }
  }

  const Matrix& value(int id) const { return nodes_[id].value; }
  const Matrix& grad(int id);
  bool requires_grad(int id) const { return nodes_[id].requires_grad; }
  std::string_view op(int id) const { return nodes_[id].op; }
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    std::string_view op;
    BackwardFn backward;
  };
  std::deque<Node> nodes_;
  bool done_ = false;
};

// Elementwise binary ops (shapes must match exactly).
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);

Var matmul(const Var& a, const Var& b);
/// Constant sparse linear map: returns A * x.
Var spmm(std::shared_ptr<const SparseMatrix> a, const Var& x);

Var concat_cols(const std::vector<Var>& parts);
Var slice_cols(const Var& a, int start, int count);

/// Sum / mean of all entries as a 1x1 node.
Var sum(const Var& a);
Var mean(const Var& a);

Var scale(const Var& a, double s);
Var tanh(const Var& a);
Var sigmoid(const Var& a);
Var relu(const Var& a);
Var leaky_relu(const Var& a, double slope);
Var exp(const Var& a);
Var square(const Var& a);
Var sqrt(const Var& a);
/// max(0, x); subgradient 0 at the kink.
Var pos(const Var& a);
/// min(0, x); subgradient 0 at the kink.
Var neg(const Var& a);

/// out[r] = a[index[r]]
Var gather_rows(const Var& a, const IndexList& index);
/// out[index[r]] += a[r], out has `n_rows` rows. Accumulation runs in row order.
Var scatter_add_rows(const Var& a, const IndexList& index, int n_rows);

}  // namespace birdflux::ad
