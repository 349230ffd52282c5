#include "metaxt/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

namespace metaxt::ad {
namespace {

Tape& same_tape(Var a, Var b) {
  if (!a.valid() || !b.valid() || a.tape() != b.tape()) {
    throw std::invalid_argument("operands live on different tapes");
  }
  return *a.tape();
}

Tape& tape_of(Var a) {
  if (!a.valid()) throw std::invalid_argument("invalid Var");
  return *a.tape();
}

void check_broadcastable(const Matrix& a, const Matrix& b, std::string_view what) {
  const bool rows_ok = b.rows() == a.rows() || b.rows() == 1;
  const bool cols_ok = b.cols() == a.cols() || b.cols() == 1;
  if (!rows_ok || !cols_ok) {
    throw std::invalid_argument(std::string(what) + ": shape " + std::to_string(b.rows()) + "x" +
                                std::to_string(b.cols()) + " does not broadcast to " +
                                std::to_string(a.rows()) + "x" + std::to_string(a.cols()));
  }
}

Matrix expand(const Matrix& b, Index rows, Index cols) {
  if (b.rows() == rows && b.cols() == cols) return b;
  if (b.rows() == 1 && b.cols() == 1) return Matrix::Constant(rows, cols, b(0, 0));
  if (b.rows() == 1) return b.replicate(rows, 1);
  return b.replicate(1, cols);
}

class GradModeGuard {
 public:
  GradModeGuard(bool& flag, bool value) : flag_(flag), saved_(flag) { flag_ = value; }
  ~GradModeGuard() { flag_ = saved_; }
  GradModeGuard(const GradModeGuard&) = delete;
  GradModeGuard& operator=(const GradModeGuard&) = delete;

 private:
  bool& flag_;
  bool saved_;
};

}  // namespace

std::string_view op_name(Op op) {
  switch (op) {
    case Op::Leaf: return "leaf";
    case Op::Constant: return "constant";
    case Op::Add: return "add";
    case Op::Mul: return "mul";
    case Op::Scale: return "scale";
    case Op::MatMul: return "matmul";
    case Op::Transpose: return "transpose";
    case Op::Tanh: return "tanh";
    case Op::Relu: return "relu";
    case Op::Softmax: return "softmax";
    case Op::Log: return "log";
    case Op::ClampMin: return "clamp_min";
    case Op::Reciprocal: return "reciprocal";
    case Op::Sum: return "sum";
    case Op::Broadcast: return "broadcast";
    case Op::Concat: return "concat";
    case Op::Slice: return "slice";
    case Op::IndexSelect: return "index_select";
    case Op::IndexAdd: return "index_add";
  }
  return "unknown";
}

const Matrix& Var::value() const {
  if (!valid()) throw std::invalid_argument("invalid Var");
  return tape_->value(id_);
}

bool Var::requires_grad() const { return valid() && tape_->requires_grad(id_); }

double Var::scalar() const {
  const Matrix& v = value();
  if (v.rows() != 1 || v.cols() != 1) throw std::invalid_argument("scalar() on non-1x1 node");
  return v(0, 0);
}

Var Tape::leaf(Matrix value) {
  Var v = record(Op::Leaf, {}, std::move(value));
  nodes_.back().requires_grad = true;
  return v;
}

Var Tape::constant(Matrix value) { return record(Op::Constant, {}, std::move(value)); }

Var Tape::constant(Index rows, Index cols, double fill) {
  return constant(Matrix::Constant(rows, cols, fill));
}

Var Tape::record(Op op, std::vector<std::size_t> inputs, Matrix value, double param,
                 std::vector<Index> aux) {
  const std::size_t id = nodes_.size();
  if (!value.allFinite()) {
    throw NumericalFailure("non-finite value produced by " + std::string(op_name(op)) +
                           " at node #" + std::to_string(id));
  }
  bool needs = false;
  if (grad_mode_) {
    for (std::size_t in : inputs) needs = needs || nodes_[in].requires_grad;
  }
  nodes_.push_back(Node{op, std::move(inputs), std::move(value), param, std::move(aux), needs});
  return Var(this, id);
}

std::vector<Var> Tape::gradient(Var output, std::span<const Var> wrt, bool create_graph) {
  if (output.tape() != this) throw std::invalid_argument("gradient: output is not on this tape");
  if (output.rows() != 1 || output.cols() != 1) {
    throw std::invalid_argument("gradient: output must be 1x1");
  }
  const std::size_t n = output.id() + 1;
  std::vector<char> relevant(n, 0);
  for (const Var& w : wrt) {
    if (w.tape() != this) throw std::invalid_argument("gradient: wrt Var is not on this tape");
    if (w.id() < n) relevant[w.id()] = 1;
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (relevant[i] || !nodes_[i].requires_grad) continue;
    for (std::size_t in : nodes_[i].inputs) {
      if (relevant[in]) {
        relevant[i] = 1;
        break;
      }
    }
  }

  GradModeGuard guard(grad_mode_, create_graph);
  std::vector<Var> adjoints(n);
  if (relevant[output.id()]) adjoints[output.id()] = constant(1, 1, 1.0);
  for (std::size_t i = n; i-- > 0;) {
    if (!relevant[i] || !adjoints[i].valid() || nodes_[i].inputs.empty()) continue;
    backprop_node(i, adjoints[i], adjoints, relevant);
  }

  std::vector<Var> out;
  out.reserve(wrt.size());
  for (const Var& w : wrt) {
    if (w.id() < n && adjoints[w.id()].valid()) {
      out.push_back(adjoints[w.id()]);
    } else {
      out.push_back(constant(Matrix::Zero(w.rows(), w.cols())));
    }
  }
  return out;
}

void Tape::backprop_node(std::size_t id, Var g, std::vector<Var>& adjoints,
                         const std::vector<char>& relevant) {
  // Copy what we need: recording new nodes may reallocate nodes_.
  const Op op = nodes_[id].op;
  const std::vector<std::size_t> inputs = nodes_[id].inputs;
  const double param = nodes_[id].param;
  const std::vector<Index> aux = nodes_[id].aux;

  auto accumulate = [&](std::size_t target, Var contribution) {
    if (!relevant[target]) return;
    Var& slot = adjoints[target];
    slot = slot.valid() ? add(slot, contribution) : contribution;
  };
  auto wants = [&](std::size_t k) { return relevant[inputs[k]] != 0; };
  auto in = [&](std::size_t k) { return Var(this, inputs[k]); };
  Var y(this, id);

  switch (op) {
    case Op::Leaf:
    case Op::Constant:
      break;
    case Op::Add: {
      accumulate(inputs[0], g);
      if (wants(1)) accumulate(inputs[1], reduce_to(g, in(1).rows(), in(1).cols()));
      break;
    }
    case Op::Mul: {
      if (wants(0)) accumulate(inputs[0], mul(g, in(1)));
      if (wants(1)) accumulate(inputs[1], reduce_to(mul(g, in(0)), in(1).rows(), in(1).cols()));
      break;
    }
    case Op::Scale:
      accumulate(inputs[0], scale(g, param));
      break;
    case Op::MatMul: {
      if (wants(0)) accumulate(inputs[0], matmul(g, transpose(in(1))));
      if (wants(1)) accumulate(inputs[1], matmul(transpose(in(0)), g));
      break;
    }
    case Op::Transpose:
      accumulate(inputs[0], transpose(g));
      break;
    case Op::Tanh: {
      Var one_minus_sq = add(scale(mul(y, y), -1.0), constant(1, 1, 1.0));
      accumulate(inputs[0], mul(g, one_minus_sq));
      break;
    }
    case Op::Relu: {
      Matrix mask = (in(0).value().array() > 0.0).cast<double>().matrix();
      accumulate(inputs[0], mul(g, constant(std::move(mask))));
      break;
    }
    case Op::Softmax: {
      Var inner = sub(g, sum(mul(g, y), Axis::Cols));
      accumulate(inputs[0], mul(y, inner));
      break;
    }
    case Op::Log:
      accumulate(inputs[0], mul(g, reciprocal(in(0))));
      break;
    case Op::ClampMin: {
      Matrix mask = (in(0).value().array() > param).cast<double>().matrix();
      accumulate(inputs[0], mul(g, constant(std::move(mask))));
      break;
    }
    case Op::Reciprocal:
      accumulate(inputs[0], mul(g, scale(mul(y, y), -1.0)));
      break;
    case Op::Sum:
      accumulate(inputs[0], broadcast(g, in(0).rows(), in(0).cols()));
      break;
    case Op::Broadcast:
      accumulate(inputs[0], reduce_to(g, in(0).rows(), in(0).cols()));
      break;
    case Op::Concat: {
      Index offset = 0;
      for (std::size_t k = 0; k < inputs.size(); ++k) {
        const Index width = aux[k];
        if (wants(k)) accumulate(inputs[k], slice_cols(g, offset, width));
        offset += width;
      }
      break;
    }
    case Op::Slice: {
      const Index start = aux[0];
      const Index count = aux[1];
      const Index rows = in(0).rows();
      const Index rest = in(0).cols() - start - count;
      std::vector<Var> parts;
      if (start > 0) parts.push_back(constant(Matrix::Zero(rows, start)));
      parts.push_back(g);
      if (rest > 0) parts.push_back(constant(Matrix::Zero(rows, rest)));
      accumulate(inputs[0], parts.size() == 1 ? g : concat(parts));
      break;
    }
    case Op::IndexSelect:
      accumulate(inputs[0], index_add(g, aux, in(0).rows()));
      break;
    case Op::IndexAdd:
      accumulate(inputs[0], index_select(g, aux));
      break;
  }
}

Var add(Var a, Var b) {
  Tape& t = same_tape(a, b);
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  check_broadcastable(av, bv, "add");
  Matrix out = av + expand(bv, av.rows(), av.cols());
  return t.record(Op::Add, {a.id(), b.id()}, std::move(out));
}

Var mul(Var a, Var b) {
  Tape& t = same_tape(a, b);
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  check_broadcastable(av, bv, "mul");
  Matrix out = av.cwiseProduct(expand(bv, av.rows(), av.cols()));
  return t.record(Op::Mul, {a.id(), b.id()}, std::move(out));
}

Var scale(Var a, double factor) {
  Tape& t = tape_of(a);
  Matrix out = a.value() * factor;
  return t.record(Op::Scale, {a.id()}, std::move(out), factor);
}

Var matmul(Var a, Var b) {
  Tape& t = same_tape(a, b);
  if (a.cols() != b.rows()) {
    throw std::invalid_argument("matmul: inner dimensions " + std::to_string(a.cols()) + " vs " +
                                std::to_string(b.rows()));
  }
  Matrix out = a.value() * b.value();
  return t.record(Op::MatMul, {a.id(), b.id()}, std::move(out));
}

Var transpose(Var a) {
  Tape& t = tape_of(a);
  Matrix out = a.value().transpose();
  return t.record(Op::Transpose, {a.id()}, std::move(out));
}

Var tanh(Var a) {
  Tape& t = tape_of(a);
  Matrix out = a.value().array().tanh().matrix();
  return t.record(Op::Tanh, {a.id()}, std::move(out));
}

Var relu(Var a) {
  Tape& t = tape_of(a);
  Matrix out = a.value().cwiseMax(0.0);
  return t.record(Op::Relu, {a.id()}, std::move(out));
}

Var softmax(Var a) {
  Tape& t = tape_of(a);
  const Matrix& av = a.value();
  Matrix out(av.rows(), av.cols());
  for (Index r = 0; r < av.rows(); ++r) {
    const double m = av.row(r).maxCoeff();
    out.row(r) = (av.row(r).array() - m).exp().matrix();
    out.row(r) /= out.row(r).sum();
  }
  return t.record(Op::Softmax, {a.id()}, std::move(out));
}

Var log(Var a) {
  Tape& t = tape_of(a);
  Matrix out = a.value().array().log().matrix();
  return t.record(Op::Log, {a.id()}, std::move(out));
}

Var clamp_min(Var a, double floor) {
  Tape& t = tape_of(a);
  Matrix out = a.value().cwiseMax(floor);
  return t.record(Op::ClampMin, {a.id()}, std::move(out), floor);
}

Var reciprocal(Var a) {
  Tape& t = tape_of(a);
  Matrix out = a.value().cwiseInverse();
  return t.record(Op::Reciprocal, {a.id()}, std::move(out));
}

Var sum(Var a, Axis axis) {
  Tape& t = tape_of(a);
  const Matrix& av = a.value();
  Matrix out;
  switch (axis) {
    case Axis::All:
      out = Matrix::Constant(1, 1, av.sum());
      break;
    case Axis::Rows:
      out = av.colwise().sum();
      break;
    case Axis::Cols:
      out = av.rowwise().sum();
      break;
  }
  return t.record(Op::Sum, {a.id()}, std::move(out), 0.0, {static_cast<Index>(axis)});
}

Var broadcast(Var a, Index rows, Index cols) {
  Tape& t = tape_of(a);
  const Matrix& av = a.value();
  Matrix target(rows, cols);
  check_broadcastable(target, av, "broadcast");
  Matrix out = expand(av, rows, cols);
  return t.record(Op::Broadcast, {a.id()}, std::move(out));
}

Var concat(std::span<const Var> parts) {
  if (parts.empty()) throw std::invalid_argument("concat: no parts");
  Tape& t = tape_of(parts.front());
  const Index rows = parts.front().rows();
  Index cols = 0;
  std::vector<std::size_t> ids;
  std::vector<Index> widths;
  for (const Var& p : parts) {
    if (p.tape() != &t) throw std::invalid_argument("concat: operands on different tapes");
    if (p.rows() != rows) throw std::invalid_argument("concat: row counts differ");
    cols += p.cols();
    ids.push_back(p.id());
    widths.push_back(p.cols());
  }
  Matrix out(rows, cols);
  Index offset = 0;
  for (const Var& p : parts) {
    out.middleCols(offset, p.cols()) = p.value();
    offset += p.cols();
  }
  return t.record(Op::Concat, std::move(ids), std::move(out), 0.0, std::move(widths));
}

Var slice_cols(Var a, Index start, Index count) {
  Tape& t = tape_of(a);
  if (start < 0 || count <= 0 || start + count > a.cols()) {
    throw std::invalid_argument("slice_cols: range out of bounds");
  }
  Matrix out = a.value().middleCols(start, count);
  return t.record(Op::Slice, {a.id()}, std::move(out), 0.0, {start, count});
}

Var index_select(Var a, std::vector<Index> rows) {
  Tape& t = tape_of(a);
  const Matrix& av = a.value();
  Matrix out(static_cast<Index>(rows.size()), av.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= av.rows()) {
      throw std::invalid_argument("index_select: row index out of range");
    }
    out.row(static_cast<Index>(i)) = av.row(rows[i]);
  }
  return t.record(Op::IndexSelect, {a.id()}, std::move(out), 0.0, std::move(rows));
}

Var index_add(Var a, std::vector<Index> rows, Index num_rows) {
  Tape& t = tape_of(a);
  const Matrix& av = a.value();
  if (static_cast<Index>(rows.size()) != av.rows()) {
    throw std::invalid_argument("index_add: one index per input row required");
  }
  Matrix out = Matrix::Zero(num_rows, av.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= num_rows) {
      throw std::invalid_argument("index_add: row index out of range");
    }
    out.row(rows[i]) += av.row(static_cast<Index>(i));
  }
  return t.record(Op::IndexAdd, {a.id()}, std::move(out), 0.0, std::move(rows));
}

Var sub(Var a, Var b) { return add(a, scale(b, -1.0)); }

Var dot(Var a, Var b) { return sum(mul(a, b), Axis::All); }

Var reduce_to(Var g, Index rows, Index cols) {
  if (g.rows() == rows && g.cols() == cols) return g;
  if (rows == 1 && cols == 1) return sum(g, Axis::All);
  if (rows == 1 && cols == g.cols()) return sum(g, Axis::Rows);
  if (cols == 1 && rows == g.rows()) return sum(g, Axis::Cols);
  throw std::invalid_argument("reduce_to: incompatible target shape");
}

}  // namespace metaxt::ad
