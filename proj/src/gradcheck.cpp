#include "metaxt/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

#include "metaxt/diff.hpp"

namespace metaxt {
namespace {

enum class Domain { General, Positive, AwayFromZero };

struct PrimitiveCase {
  std::string name;
  std::vector<std::pair<Index, Index>> shapes;
  Domain domain = Domain::General;
  std::function<ad::Var(ad::Tape&, std::span<const ad::Var>)> fn;
};

Matrix random_matrix(Index rows, Index cols, Domain domain, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> general(-2.0, 2.0);
  std::uniform_real_distribution<double> positive(0.5, 2.0);
  std::uniform_real_distribution<double> magnitude(0.1, 2.0);
  std::bernoulli_distribution sign(0.5);
  Matrix m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) {
    switch (domain) {
      case Domain::General: m.data()[i] = general(rng); break;
      case Domain::Positive: m.data()[i] = positive(rng); break;
      case Domain::AwayFromZero: m.data()[i] = (sign(rng) ? 1.0 : -1.0) * magnitude(rng); break;
    }
  }
  return m;
}

std::vector<PrimitiveCase> primitive_cases() {
  using ad::Var;
  std::vector<PrimitiveCase> cases;
  auto add_case = [&](std::string name, std::vector<std::pair<Index, Index>> shapes, Domain d,
                      std::function<Var(ad::Tape&, std::span<const Var>)> fn) {
    cases.push_back({std::move(name), std::move(shapes), d, std::move(fn)});
  };
  add_case("add", {{3, 4}, {3, 4}}, Domain::General,
           [](ad::Tape&, std::span<const Var> v) { return ad::add(v[0], v[1]); });
  add_case("add_row_broadcast", {{3, 4}, {1, 4}}, Domain::General,
           [](ad::Tape&, std::span<const Var> v) { return ad::add(v[0], v[1]); });
  add_case("add_col_broadcast", {{3, 4}, {3, 1}}, Domain::General,
           [](ad::Tape&, std::span<const Var> v) { return ad::add(v[0], v[1]); });
  add_case("mul", {{3, 4}, {3, 4}}, Domain::General,
           [](ad::Tape&, std::span<const Var> v) { return ad::mul(v[0], v[1]); });
  add_case("mul_scalar_broadcast", {{3, 4}, {1, 1}}, Domain::General,
           [](ad::Tape&, std::span<const Var> v) { return ad::mul(v[0], v[1]); });
  add_case("mul_row_broadcast", {{3, 4}, {1, 4}}, Domain::General,
           [](ad::Tape&, std::span<const Var> v) { return ad::mul(v[0], v[1]); });
  add_case("scale", {{3, 4}}, Domain::General,
           [](ad::Tape&, std::span<const Var> v) { return ad::scale(v[0], -1.7); });
  add_case("matmul", {{3, 4}, {4, 2}}, Domain::General,
           [](ad::Tape&, std::span<const Var> v) { return ad::matmul(v[0], v[1]); });
  add_case("transpose", {{3, 4}}, Domain::General,
           [](ad::Tape&, std::span<const Var> v) { return ad::transpose(v[0]); });
  add_case("tanh", {{3, 4}}, Domain::General,
           [](ad::Tape&, std::span<const Var> v) { return ad::tanh(v[0]); });
  add_case("relu", {{3, 4}}, Domain::AwayFromZero,
           [](ad::Tape&, std::span<const Var> v) { return ad::relu(v[0]); });
  add_case("softmax", {{3, 5}}, Domain::General,
           [](ad::Tape&, std::span<const Var> v) { return ad::softmax(v[0]); });
  add_case("log", {{3, 4}}, Domain::Positive,
           [](ad::Tape&, std::span<const Var> v) { return ad::log(v[0]); });
  add_case("clamp_min", {{3, 4}}, Domain::AwayFromZero,
           [](ad::Tape&, std::span<const Var> v) { return ad::clamp_min(v[0], 0.0); });
  add_case("reciprocal", {{3, 4}}, Domain::Positive,
           [](ad::Tape&, std::span<const Var> v) { return ad::reciprocal(v[0]); });
  add_case("sum_all", {{3, 4}}, Domain::General,
           [](ad::Tape&, std::span<const Var> v) { return ad::sum(ad::mul(v[0], v[0])); });
  add_case("sum_rows", {{3, 4}}, Domain::General, [](ad::Tape&, std::span<const Var> v) {
    return ad::sum(ad::tanh(v[0]), ad::Axis::Rows);
  });
  add_case("sum_cols", {{3, 4}}, Domain::General, [](ad::Tape&, std::span<const Var> v) {
    return ad::sum(ad::tanh(v[0]), ad::Axis::Cols);
  });
  add_case("broadcast", {{1, 4}}, Domain::General, [](ad::Tape&, std::span<const Var> v) {
    return ad::tanh(ad::broadcast(v[0], 3, 4));
  });
  add_case("concat", {{3, 2}, {3, 3}}, Domain::General, [](ad::Tape&, std::span<const Var> v) {
    return ad::tanh(ad::concat(v));
  });
  add_case("slice_cols", {{3, 5}}, Domain::General, [](ad::Tape&, std::span<const Var> v) {
    return ad::mul(ad::slice_cols(v[0], 1, 3), ad::slice_cols(v[0], 2, 3));
  });
  add_case("index_select", {{4, 3}}, Domain::General, [](ad::Tape&, std::span<const Var> v) {
    return ad::tanh(ad::index_select(v[0], {2, 0, 2, 3, 1}));
  });
  add_case("index_add", {{5, 3}}, Domain::General, [](ad::Tape&, std::span<const Var> v) {
    return ad::tanh(ad::index_add(v[0], {1, 0, 1, 3, 1}, 4));
  });
  return cases;
}

std::vector<Matrix> unpack(const Vector& flat, const std::vector<std::pair<Index, Index>>& shapes) {
  std::vector<Matrix> out;
  Index off = 0;
  for (const auto& [r, c] : shapes) {
    out.emplace_back(Eigen::Map<const Matrix>(flat.data() + off, r, c));
    off += r * c;
  }
  return out;
}

Vector pack(const std::vector<Matrix>& parts) {
  Index n = 0;
  for (const auto& m : parts) n += m.size();
  Vector out(n);
  Index off = 0;
  for (const auto& m : parts) {
    out.segment(off, m.size()) = Eigen::Map<const Vector>(m.data(), m.size());
    off += m.size();
  }
  return out;
}

Vector pack_vars(const std::vector<ad::Var>& vars) {
  std::vector<Matrix> values;
  for (const auto& v : vars) values.push_back(v.value());
  return pack(values);
}

/// Weighted sum of the case output, so every output entry carries a distinct adjoint.
ad::Var case_loss(ad::Tape& tape, const PrimitiveCase& c, std::span<const ad::Var> inputs,
                  const Matrix& weights) {
  return ad::sum(ad::mul(c.fn(tape, inputs), tape.constant(weights)));
}

Vector first_order(const PrimitiveCase& c, const Vector& x, const Matrix& weights) {
  ad::Tape tape;
  std::vector<ad::Var> leaves;
  for (auto& m : unpack(x, c.shapes)) leaves.push_back(tape.leaf(std::move(m)));
  return pack_vars(tape.gradient(case_loss(tape, c, leaves, weights), leaves));
}

double directional(const PrimitiveCase& c, const Vector& x, const Matrix& weights, const Vector& v) {
  return first_order(c, x, weights).dot(v);
}

Vector second_order(const PrimitiveCase& c, const Vector& x, const Matrix& weights,
                    const Vector& v) {
  ad::Tape tape;
  std::vector<ad::Var> leaves;
  for (auto& m : unpack(x, c.shapes)) leaves.push_back(tape.leaf(std::move(m)));
  const std::vector<ad::Var> g = tape.gradient(case_loss(tape, c, leaves, weights), leaves, true);
  const std::vector<Matrix> vs = unpack(v, c.shapes);
  ad::Var inner;
  for (std::size_t i = 0; i < g.size(); ++i) {
    const ad::Var term = ad::dot(g[i], tape.constant(vs[i]));
    inner = inner.valid() ? ad::add(inner, term) : term;
  }
  if (!inner.requires_grad()) return Vector::Zero(x.size());
  return pack_vars(tape.gradient(inner, leaves));
}

CheckResult make_result(std::string name, double error, double tolerance) {
  return CheckResult{std::move(name), error, tolerance, error <= tolerance};
}

double norm_relative(const Vector& a, const Vector& b, double floor) {
  return (a - b).norm() / std::max({a.norm(), b.norm(), floor});
}

}  // namespace

bool close_relative(double a, double b, double rel, double abs_floor) {
  return std::abs(a - b) <= std::max(rel * std::max(std::abs(a), std::abs(b)), abs_floor);
}

double relative_gap(double a, double b, double rel, double abs_floor) {
  const double scale = std::max({std::abs(a), std::abs(b), abs_floor / rel});
  return std::abs(a - b) / scale;
}

double max_relative_gap(const Vector& a, const Vector& b, double rel, double abs_floor) {
  if (a.size() != b.size()) throw std::invalid_argument("max_relative_gap: length mismatch");
  double worst = 0.0;
  for (Index i = 0; i < a.size(); ++i) worst = std::max(worst, relative_gap(a(i), b(i), rel, abs_floor));
  return worst;
}

Vector central_difference(const std::function<double(const Vector&)>& f, const Vector& x,
                          double step) {
  Vector out(x.size());
  Vector probe = x;
  for (Index i = 0; i < x.size(); ++i) {
    probe(i) = x(i) + step;
    const double up = f(probe);
    probe(i) = x(i) - step;
    const double down = f(probe);
    probe(i) = x(i);
    out(i) = (up - down) / (2.0 * step);
  }
  return out;
}

std::vector<CheckResult> check_primitives(std::uint64_t seed, double step, double tolerance) {
  std::mt19937_64 rng(seed);
  std::vector<CheckResult> results;
  constexpr double kFloor = 1e-8;
  for (const PrimitiveCase& c : primitive_cases()) {
    std::vector<Matrix> inputs;
    for (const auto& [r, k] : c.shapes) inputs.push_back(random_matrix(r, k, c.domain, rng));
    Matrix weights;
    {
      ad::Tape probe;
      std::vector<ad::Var> vars;
      for (const auto& m : inputs) vars.push_back(probe.constant(m));
      const ad::Var out = c.fn(probe, vars);
      weights = random_matrix(out.rows(), out.cols(), Domain::General, rng);
    }
    const Vector x = pack(inputs);
    const Vector v = pack([&] {
      std::vector<Matrix> dirs;
      for (const auto& [r, k] : c.shapes) dirs.push_back(random_matrix(r, k, Domain::General, rng));
      return dirs;
    }());

    const auto loss_at = [&](const Vector& p) {
      ad::Tape tape;
      std::vector<ad::Var> vars;
      for (auto& m : unpack(p, c.shapes)) vars.push_back(tape.constant(std::move(m)));
      return case_loss(tape, c, vars, weights).scalar();
    };
    const Vector g = first_order(c, x, weights);
    const Vector g_fd = central_difference(loss_at, x, step);
    results.push_back(make_result(c.name, max_relative_gap(g, g_fd, tolerance, kFloor), tolerance));

    const Vector h = second_order(c, x, weights, v);
    const Vector h_fd =
        central_difference([&](const Vector& p) { return directional(c, p, weights, v); }, x, step);
    results.push_back(
        make_result(c.name + " (second order)", max_relative_gap(h, h_fd, tolerance, kFloor), tolerance));
  }
  return results;
}

std::vector<CheckResult> check_hvp(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  FlatParams params;
  params.add_tensor(Group::Theta, "W1", random_matrix(3, 4, Domain::General, rng) * 0.5);
  params.add_tensor(Group::Theta, "b", random_matrix(1, 3, Domain::General, rng) * 0.5);
  params.add_tensor(Group::Alpha, "A", random_matrix(4, 3, Domain::General, rng) * 0.5);
  params.add_tensor(Group::Alpha, "c", random_matrix(1, 3, Domain::General, rng) * 0.5);
  const Matrix x = random_matrix(5, 3, Domain::General, rng);
  Matrix y = random_matrix(5, 3, Domain::Positive, rng);
  for (Index r = 0; r < y.rows(); ++r) y.row(r) /= y.row(r).sum();

  const LossFn loss = [&x, &y](ad::Tape& tape, const BoundParams& p) {
    const ad::Var h = ad::tanh(ad::matmul(tape.constant(x), p.at(Group::Theta, "W1")));
    const ad::Var logits = ad::add(ad::add(ad::matmul(h, p.at(Group::Alpha, "A")), p.at(Group::Theta, "b")),
                                   p.at(Group::Alpha, "c"));
    const ad::Var logp = ad::log(ad::softmax(logits));
    return ad::scale(ad::sum(ad::mul(logp, tape.constant(y))), -1.0 / static_cast<double>(x.rows()));
  };

  GroupVectors direction;
  direction[Group::Theta] = pack({random_matrix(1, params.size(Group::Theta), Domain::General, rng)});
  const Vector exact = hvp_exact(loss, params, direction);
  const EpsilonRule rule;
  const Vector fd = hvp_fd(loss, params, direction, rule);

  std::vector<CheckResult> results;
  results.push_back(make_result("hvp_fd vs hvp_exact (norm-wise relative)", norm_relative(fd, exact, 1e-12), 1e-3));
  const double eps = rule.epsilon(norm(direction));
  results.push_back(make_result("hvp_fd vs hvp_exact (max abs, units of epsilon)",
                                (fd - exact).cwiseAbs().maxCoeff() / eps, 10.0));

  const auto directional_grad = [&](const Vector& alpha) {
    FlatParams at = params;
    at.set_group(Group::Alpha, alpha);
    return grad(loss, at, GroupSet{Group::Theta}).at(Group::Theta).dot(direction.at(Group::Theta));
  };
  const Vector coord = central_difference(directional_grad, params.group(Group::Alpha), 1e-5);
  results.push_back(make_result("hvp_exact vs coordinate difference",
                                max_relative_gap(exact, coord, 1e-5, 1e-9), 1e-5));

  FlatParams bilinear;
  bilinear.add_tensor(Group::Theta, "t", random_matrix(1, 4, Domain::General, rng));
  bilinear.add_tensor(Group::Alpha, "a", random_matrix(1, 4, Domain::General, rng));
  const LossFn dot_loss = [](ad::Tape&, const BoundParams& p) {
    return ad::dot(p.at(Group::Alpha, 0), p.at(Group::Theta, 0));
  };
  GroupVectors d;
  d[Group::Theta] = pack({random_matrix(1, 4, Domain::General, rng)});
  const Vector bl_exact = hvp_exact(dot_loss, bilinear, d);
  const Vector bl_fd = hvp_fd(dot_loss, bilinear, d);
  results.push_back(make_result("bilinear hvp_exact", (bl_exact - d.at(Group::Theta)).cwiseAbs().maxCoeff(), 1e-12));
  results.push_back(make_result("bilinear hvp_fd", (bl_fd - d.at(Group::Theta)).cwiseAbs().maxCoeff(), 1e-9));
  return results;
}

TinyInstance make_tiny_instance(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  TinyInstance inst;
  const bool tagging = seed % 2 == 1;
  inst.use_rtn = seed % 4 == 3;

  ModelDims dims;
  dims.hidden_dims = {4};
  dims.h_dim = 3;
  dims.z_dim = 2;
  dims.ltn_hidden = 3;
  dims.use_rtn = inst.use_rtn;
  const Index input_dim = 3;
  const Index cs = 2;
  const Index ct = 3;
  inst.spec = make_model_spec(input_dim, cs, ct, tagging, dims);
  if (inst.spec.parameter_count() > 200) throw std::logic_error("tiny instance exceeds 200 parameters");
  inst.params = init_params(inst.spec, rng);
  std::uniform_real_distribution<double> jitter(-0.3, 0.3);
  for (Group g : inst.params.groups().members()) {
    for (Index i = 0; i < inst.params.group(g).size(); ++i) inst.params.group(g)(i) += jitter(rng);
  }

  std::uniform_int_distribution<int> length(2, 3);
  std::normal_distribution<double> feature(0.0, 1.0);
  auto make_examples = [&](std::size_t n, Index classes) {
    std::vector<Example> out(n);
    std::uniform_int_distribution<int> label(0, static_cast<int>(classes) - 1);
    for (std::size_t i = 0; i < n; ++i) {
      const int units = tagging ? length(rng) : 1;
      out[i].features.resize(units, input_dim);
      for (Index j = 0; j < out[i].features.size(); ++j) out[i].features.data()[j] = feature(rng);
      for (int u = 0; u < units; ++u) out[i].labels.push_back(label(rng));
      out[i].id = i;
    }
    return out;
  };
  const std::vector<Example> source = make_examples(4, cs);
  const std::vector<Example> target = make_examples(4, ct);
  std::vector<const Example*> sp;
  std::vector<const Example*> tp;
  for (const auto& e : source) sp.push_back(&e);
  for (const auto& e : target) tp.push_back(&e);
  inst.batch = make_batch_triple(sp, tp, cs, ct);

  std::uniform_real_distribution<double> gamma(0.5, 1.5);
  inst.gammas.gamma1 = gamma(rng);
  inst.gammas.gamma2 = gamma(rng);
  return inst;
}

std::vector<CheckResult> check_meta_gradients(const MetaGradCheckOptions& opts) {
  std::vector<CheckResult> results;
  for (std::size_t i = 0; i < opts.instances; ++i) {
    const TinyInstance inst = make_tiny_instance(opts.seed + i);
    const Vector exact = meta_gradient(inst.params, inst.spec, inst.batch, inst.eta, inst.gammas,
                                       MetaGradMode::Exact, {}, inst.use_rtn)
                             .alpha;
    const auto proxy = [&](const Vector& alpha) {
      FlatParams at = inst.params;
      at.set_group(Group::Alpha, alpha);
      return proxy_meta_objective(at, inst.spec, inst.batch, inst.eta, inst.gammas, inst.use_rtn);
    };
    const Vector oracle = central_difference(proxy, inst.params.group(Group::Alpha), opts.step);
    const std::string label = "instance " + std::to_string(i) + " (" +
                              std::to_string(inst.spec.parameter_count()) + " params)";
    results.push_back(make_result(label + " exact vs proxy difference",
                                  max_relative_gap(exact, oracle, opts.rel_tol, opts.abs_floor),
                                  opts.rel_tol));

    const Vector fd = meta_gradient(inst.params, inst.spec, inst.batch, inst.eta, inst.gammas,
                                    MetaGradMode::FiniteDifference, {}, inst.use_rtn)
                          .alpha;
    results.push_back(make_result(label + " fd mode vs exact mode",
                                  norm_relative(fd, exact, opts.abs_floor), opts.fd_mode_tol));
  }
  return results;
}

}  // namespace metaxt
