#pragma once

// Reverse-mode differentiation on a dense-matrix tape.
//
// Every primitive's adjoint is itself expressed with primitives, so a
// backward pass recorded with create_graph=true is differentiable again.
// That is all the second-order machinery needed for mixed Hessian-vector
// products: differentiate a gradient-dot-direction expression a second time.

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace metaxt::ad {

using Index = Eigen::Index;
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Raised when a forward or backward value is NaN or infinite.
class NumericalFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Op : std::uint8_t {
  Leaf,
  Constant,
  Add,
  Mul,
  Scale,
  MatMul,
  Transpose,
  Tanh,
  Relu,
  Softmax,
  Log,
  ClampMin,
  Reciprocal,
  Sum,
  Broadcast,
  Concat,
  Slice,
  IndexSelect,
  IndexAdd,
};

std::string_view op_name(Op op);

/// Reduction axis. `Rows` collapses the row dimension (result 1 x cols),
/// `Cols` collapses the column dimension (result rows x 1).
enum class Axis : std::uint8_t { All, Rows, Cols };

class Tape;

/// Handle to a node on a tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;

  [[nodiscard]] bool valid() const { return tape_ != nullptr; }
  [[nodiscard]] Tape* tape() const { return tape_; }
  [[nodiscard]] std::size_t id() const { return id_; }
  [[nodiscard]] const Matrix& value() const;
  [[nodiscard]] Index rows() const { return value().rows(); }
  [[nodiscard]] Index cols() const { return value().cols(); }
  [[nodiscard]] bool requires_grad() const;
  /// Value of a 1x1 node.
  [[nodiscard]] double scalar() const;

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Append-only record of primitive evaluations. Nodes are stored in
/// creation order, which is a topological order by construction.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Matrix value);
  Var constant(Matrix value);
  Var constant(Index rows, Index cols, double fill);

  [[nodiscard]] std::size_t size() const { return nodes_.size(); }
  [[nodiscard]] const Matrix& value(std::size_t id) const { return nodes_.at(id).value; }
  [[nodiscard]] Op op(std::size_t id) const { return nodes_.at(id).op; }

  /// d(output)/d(wrt[i]) for a 1x1 output. Inputs unreachable from the
  /// output get a zero matrix. With create_graph the backward pass is
  /// recorded on this tape so the returned adjoints can be differentiated.
  std::vector<Var> gradient(Var output, std::span<const Var> wrt, bool create_graph = false);

  // Primitive recording. Prefer the free functions below.
  Var record(Op op, std::vector<std::size_t> inputs, Matrix value, double param = 0.0,
             std::vector<Index> aux = {});

  [[nodiscard]] bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
  [[nodiscard]] Var var(std::size_t id) { return Var(this, id); }

 private:
  struct Node {
    Op op = Op::Constant;
    std::vector<std::size_t> inputs;
    Matrix value;
    double param = 0.0;
    std::vector<Index> aux;
    bool requires_grad = false;
  };

  void backprop_node(std::size_t id, Var adjoint, std::vector<Var>& adjoints,
                     const std::vector<char>& relevant);

  std::vector<Node> nodes_;
  bool grad_mode_ = true;
};

// Primitives. `b` may broadcast in add/mul: same shape, 1 x cols,
// rows x 1 or 1 x 1.
Var add(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double factor);
Var matmul(Var a, Var b);
Var transpose(Var a);
Var tanh(Var a);
Var relu(Var a);
/// Row-wise softmax.
Var softmax(Var a);
Var log(Var a);
/// Elementwise max(a, floor); the floor branch has zero derivative.
Var clamp_min(Var a, double floor);
Var reciprocal(Var a);
Var sum(Var a, Axis axis = Axis::All);
Var broadcast(Var a, Index rows, Index cols);
/// Column-wise concatenation.
Var concat(std::span<const Var> parts);
Var slice_cols(Var a, Index start, Index count);
/// out.row(i) = a.row(rows[i]).
Var index_select(Var a, std::vector<Index> rows);
/// out (num_rows x cols) with out.row(rows[i]) += a.row(i).
Var index_add(Var a, std::vector<Index> rows, Index num_rows);

// Composites.
Var sub(Var a, Var b);
/// Sum of elementwise products, a 1x1 node.
Var dot(Var a, Var b);
/// Reduce `g` to the given broadcastable shape.
Var reduce_to(Var g, Index rows, Index cols);

}  // namespace metaxt::ad
