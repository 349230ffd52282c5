#include "metaxt/diff.hpp"

#include <stdexcept>

namespace metaxt {
namespace {

Vector flatten_adjoints(const std::vector<ad::Var>& adjoints) {
  Index n = 0;
  for (const auto& a : adjoints) n += a.value().size();
  Vector out(n);
  Index off = 0;
  for (const auto& a : adjoints) {
    const Matrix& m = a.value();
    out.segment(off, m.size()) = Eigen::Map<const Vector>(m.data(), m.size());
    off += m.size();
  }
  return out;
}

void check_direction(const FlatParams& at, const GroupVectors& direction, Group out) {
  for (const auto& [g, d] : direction) {
    if (g == out) throw std::invalid_argument("direction must not include the output group");
    if (d.size() != at.size(g)) {
      throw std::invalid_argument("direction length mismatch for group '" +
                                  std::string(group_name(g)) + "'");
    }
  }
  if (!at.has_group(out)) {
    throw std::invalid_argument("output group '" + std::string(group_name(out)) + "' absent");
  }
}

}  // namespace

LossAndGrad value_and_grad(const LossFn& loss, const FlatParams& at, GroupSet wrt) {
  return value_and_grad(loss, at, wrt, at.groups());
}

LossAndGrad value_and_grad(const LossFn& loss, const FlatParams& at, GroupSet wrt,
                           GroupSet bound_groups) {
  ad::Tape tape;
  const BoundParams bound = bind(tape, at, bound_groups, wrt);
  const ad::Var value = loss(tape, bound);

  std::vector<ad::Var> leaves;
  std::vector<std::pair<Group, std::size_t>> spans;
  for (Group g : wrt.members()) {
    if (!bound.has(g)) continue;
    const auto& vars = bound.vars(g);
    spans.emplace_back(g, vars.size());
    leaves.insert(leaves.end(), vars.begin(), vars.end());
  }
  const std::vector<ad::Var> adjoints = tape.gradient(value, leaves, false);

  LossAndGrad result;
  result.loss = value.scalar();
  std::size_t cursor = 0;
  for (const auto& [g, count] : spans) {
    std::vector<ad::Var> part(adjoints.begin() + static_cast<std::ptrdiff_t>(cursor),
                              adjoints.begin() + static_cast<std::ptrdiff_t>(cursor + count));
    result.grad[g] = flatten_adjoints(part);
    cursor += count;
  }
  return result;
}

GroupVectors grad(const LossFn& loss, const FlatParams& at, GroupSet wrt) {
  return value_and_grad(loss, at, wrt).grad;
}

double evaluate(const LossFn& loss, const FlatParams& at) {
  ad::Tape tape;
  const BoundParams bound = bind(tape, at, at.groups(), GroupSet{});
  return loss(tape, bound).scalar();
}

Vector hvp_exact(const LossFn& loss, const FlatParams& at, const GroupVectors& direction,
                 Group out) {
  check_direction(at, direction, out);
  GroupSet differentiable{out};
  for (const auto& [g, d] : direction) differentiable.insert(g);

  ad::Tape tape;
  const BoundParams bound = bind(tape, at, at.groups(), differentiable);
  const ad::Var value = loss(tape, bound);

  std::vector<ad::Var> main_leaves;
  std::vector<Matrix> main_dirs;
  for (const auto& [g, d] : direction) {
    const auto& specs = at.tensors(g);
    const auto& vars = bound.vars(g);
    Index off = 0;
    for (std::size_t i = 0; i < vars.size(); ++i) {
      main_leaves.push_back(vars[i]);
      main_dirs.emplace_back(
          Eigen::Map<const Matrix>(d.data() + off, specs[i].rows, specs[i].cols));
      off += specs[i].size();
    }
  }
  const std::vector<ad::Var> first = tape.gradient(value, main_leaves, true);

  const auto& alpha_vars = bound.vars(out);
  ad::Var inner;
  for (std::size_t i = 0; i < first.size(); ++i) {
    ad::Var term = ad::dot(first[i], tape.constant(main_dirs[i]));
    inner = inner.valid() ? ad::add(inner, term) : term;
  }
  if (!inner.valid() || !inner.requires_grad()) return Vector::Zero(at.size(out));
  return flatten_adjoints(tape.gradient(inner, alpha_vars, false));
}

Vector hvp_fd(const LossFn& loss, const FlatParams& at, const GroupVectors& direction,
              EpsilonRule rule, Group out) {
  check_direction(at, direction, out);
  const double dnorm = norm(direction);
  if (dnorm == 0.0) throw std::invalid_argument("hvp_fd: zero direction vector");
  const double eps = rule.epsilon(dnorm);

  FlatParams plus = at;
  FlatParams minus = at;
  for (const auto& [g, d] : direction) {
    plus.group(g) += eps * d;
    minus.group(g) -= eps * d;
  }
  const Vector gp = value_and_grad(loss, plus, GroupSet{out}).grad.at(out);
  const Vector gm = value_and_grad(loss, minus, GroupSet{out}).grad.at(out);
  Vector result = (gp - gm) / (2.0 * eps);
  if (!result.allFinite()) throw ad::NumericalFailure("hvp_fd: non-finite perturbation result");
  return result;
}

}  // namespace metaxt
