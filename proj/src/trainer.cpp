#include "metaxt/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace metaxt {
namespace {

GroupSet present_main_groups(const FlatParams& params) {
  GroupSet out;
  for (Group g : kMainGroups.members()) {
    if (params.has_group(g)) out.insert(g);
  }
  return out;
}

void check_finite(const GroupVectors& grads, std::string_view what) {
  for (const auto& [g, v] : grads) {
    if (!v.allFinite()) {
      throw ad::NumericalFailure(std::string(what) + ": non-finite gradient in group '" +
                                 std::string(group_name(g)) + "'");
    }
  }
}

/// Scale factor bringing the global norm of `grads` to at most `clip`.
double clip_factor(double grad_norm, double clip) {
  if (clip <= 0.0 || grad_norm <= clip) return 1.0;
  return clip / grad_norm;
}

void apply_update(FlatParams& params, const GroupVectors& grads, double lr, double factor) {
  for (const auto& [g, v] : grads) params.group(g) -= (lr * factor) * v;
}

LossFn train_loss_fn(const ModelSpec& spec, const Batch& target, const Batch& source, Gammas gammas,
                     const TrainLossOptions& opts, LossBundle* terms = nullptr) {
  return [&spec, &target, &source, gammas, opts, terms](ad::Tape& tape, const BoundParams& p) {
    const TrainLossVars vars = l_train(tape, p, spec, target, source, gammas, opts);
    if (terms) *terms = vars.bundle();
    return vars.total;
  };
}

std::vector<int> argmax_rows(const Matrix& probs) {
  std::vector<int> out(static_cast<std::size_t>(probs.rows()));
  for (Index r = 0; r < probs.rows(); ++r) {
    Index best = 0;
    for (Index c = 1; c < probs.cols(); ++c) {
      if (probs(r, c) > probs(r, best)) best = c;
    }
    out[static_cast<std::size_t>(r)] = static_cast<int>(best);
  }
  return out;
}

}  // namespace

std::string_view method_name(Method m) {
  switch (m) {
    case Method::MetaXT: return "metaxt";
    case Method::XT: return "xt";
    case Method::MultiTask: return "multitask";
    case Method::TargetOnly: return "target_only";
  }
  return "unknown";
}

Method parse_method(std::string_view name) {
  for (Method m : {Method::MetaXT, Method::XT, Method::MultiTask, Method::TargetOnly}) {
    if (method_name(m) == name) return m;
  }
  throw std::invalid_argument("unknown method '" + std::string(name) +
                              "' (expected metaxt, xt, multitask or target_only)");
}

std::string_view meta_grad_mode_name(MetaGradMode m) {
  return m == MetaGradMode::Exact ? "exact" : "fd";
}

MetaGradMode parse_meta_grad_mode(std::string_view name) {
  if (name == "exact") return MetaGradMode::Exact;
  if (name == "fd" || name == "finite_difference") return MetaGradMode::FiniteDifference;
  throw std::invalid_argument("unknown meta_grad_mode '" + std::string(name) + "'");
}

BatchTriple make_batch_triple(std::span<const Example* const> source,
                              std::span<const Example* const> target, Index num_source_classes,
                              Index num_target_classes) {
  BatchTriple b;
  b.source = make_batch(source, num_source_classes);
  const std::size_t half = (target.size() + 1) / 2;
  b.target_train = make_batch(target.subspan(0, half), num_target_classes);
  b.target_meta = make_batch(target.subspan(half), num_target_classes);
  b.target_full = make_batch(target, num_target_classes);
  return b;
}

void TrainerConfig::validate() const {
  if (!(eta > 0.0)) throw std::invalid_argument("eta must be > 0");
  if (!(meta_lr > 0.0)) throw std::invalid_argument("meta_lr must be > 0");
  if (gammas.gamma1 < 0.0 || gammas.gamma2 < 0.0) throw std::invalid_argument("gammas must be >= 0");
  if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  if (method == Method::MetaXT && batch_size < 2) {
    throw std::invalid_argument("MetaXT needs batch_size >= 2 to split the target batch");
  }
}

TrainState TrainState::create(FlatParams params, const TrainerConfig& config, std::uint64_t seed) {
  config.validate();
  TrainState s;
  s.params = std::move(params);
  s.config = config;
  std::seed_seq target_seed{seed, std::uint64_t{0x7A4E}};
  std::seed_seq source_seed{seed, std::uint64_t{0x50C3}};
  s.target_rng.seed(target_seed);
  s.source_rng.seed(source_seed);
  return s;
}

FlatParams inner_step(const FlatParams& params, const ModelSpec& spec, const BatchTriple& batch,
                      double eta, Gammas gammas, bool use_rtn) {
  TrainLossOptions opts;
  opts.use_rtn = use_rtn;
  const LossFn loss = train_loss_fn(spec, batch.target_train, batch.source, gammas, opts);
  const GroupVectors g = grad(loss, params, present_main_groups(params));
  check_finite(g, "inner_step");
  FlatParams out = params;
  apply_update(out, g, eta, 1.0);
  return out;
}

double proxy_meta_objective(const FlatParams& params, const ModelSpec& spec,
                            const BatchTriple& batch, double eta, Gammas gammas, bool use_rtn) {
  return l_meta(inner_step(params, spec, batch, eta, gammas, use_rtn), spec, batch.target_meta);
}

MetaGradient meta_gradient(const FlatParams& params, const ModelSpec& spec,
                           const BatchTriple& batch, double eta, Gammas gammas, MetaGradMode mode,
                           EpsilonRule rule, bool use_rtn) {
  const FlatParams updated = inner_step(params, spec, batch, eta, gammas, use_rtn);
  const LossFn meta_loss = [&spec, &batch](ad::Tape& tape, const BoundParams& p) {
    return l_meta(tape, p, spec, batch.target_meta);
  };
  const LossAndGrad meta =
      value_and_grad(meta_loss, updated, GroupSet{Group::Theta, Group::W},
                     GroupSet{Group::Theta, Group::W});
  check_finite(meta.grad, "meta_gradient");

  MetaGradient out;
  out.meta_loss = meta.loss;
  out.direction_norm = norm(meta.grad);
  if (out.direction_norm == 0.0 || gammas.gamma2 == 0.0) {
    out.alpha = Vector::Zero(params.size(Group::Alpha));
    return out;
  }

  // LTN input held at the unperturbed parameters.
  const Matrix frozen = ltn_input(params, spec, batch.source);
  TrainLossOptions opts;
  opts.use_rtn = use_rtn;
  opts.frozen_ltn_input = &frozen;
  const LossFn loss = train_loss_fn(spec, batch.target_train, batch.source, gammas, opts);
  const Vector mixed = mode == MetaGradMode::Exact ? hvp_exact(loss, params, meta.grad, Group::Alpha)
                                                   : hvp_fd(loss, params, meta.grad, rule, Group::Alpha);
  out.alpha = -eta * mixed;
  if (!out.alpha.allFinite()) throw ad::NumericalFailure("meta_gradient: non-finite result");
  return out;
}

StepRecord train_step(TrainState& state, const ModelSpec& spec, const BatchTriple& batch) {
  const TrainerConfig& cfg = state.config;
  StepRecord rec;
  rec.step = state.step;
  FlatParams& params = state.params;
  TrainLossOptions opts;
  opts.use_rtn = cfg.use_rtn;
  opts.counters = &state.counters.loss;

  switch (cfg.method) {
    case Method::MetaXT: {
      const MetaGradient mg = meta_gradient(params, spec, batch, cfg.eta, cfg.gammas,
                                            cfg.meta_grad_mode, cfg.fd_rule, cfg.use_rtn);
      ++state.counters.meta_gradient_calls;
      rec.meta_loss = mg.meta_loss;
      rec.meta_grad_norm = mg.alpha.norm();
      if (cfg.gammas.gamma2 != 0.0) {
        params.group(Group::Alpha) -=
            (cfg.meta_lr * clip_factor(rec.meta_grad_norm, cfg.clip_norm)) * mg.alpha;
      }
      const LossFn loss =
          train_loss_fn(spec, batch.target_full, batch.source, cfg.gammas, opts, &rec.train);
      const LossAndGrad lg = value_and_grad(loss, params, present_main_groups(params));
      check_finite(lg.grad, "train_step");
      apply_update(params, lg.grad, cfg.eta, clip_factor(norm(lg.grad), cfg.clip_norm));
      break;
    }
    case Method::XT: {
      GroupSet wrt = present_main_groups(params);
      wrt.insert(Group::Alpha);
      const LossFn loss =
          train_loss_fn(spec, batch.target_full, batch.source, cfg.gammas, opts, &rec.train);
      const LossAndGrad lg = value_and_grad(loss, params, wrt);
      check_finite(lg.grad, "train_step");
      apply_update(params, lg.grad, cfg.eta, clip_factor(norm(lg.grad), cfg.clip_norm));
      break;
    }
    case Method::MultiTask: {
      Gammas g = cfg.gammas;
      g.gamma2 = 0.0;
      const LossFn loss = train_loss_fn(spec, batch.target_full, batch.source, g, opts, &rec.train);
      const GroupSet wrt{Group::Theta, Group::V, Group::W};
      const LossAndGrad lg = value_and_grad(loss, params, wrt, wrt);
      check_finite(lg.grad, "train_step");
      apply_update(params, lg.grad, cfg.eta, clip_factor(norm(lg.grad), cfg.clip_norm));
      break;
    }
    case Method::TargetOnly: {
      LossCounters* counters = &state.counters.loss;
      const Batch& target = batch.target_full;
      const LossFn loss = [&spec, &target, counters](ad::Tape& tape, const BoundParams& p) {
        return l_meta(tape, p, spec, target, counters);
      };
      const GroupSet wrt{Group::Theta, Group::W};
      const LossAndGrad lg = value_and_grad(loss, params, wrt, wrt);
      check_finite(lg.grad, "train_step");
      apply_update(params, lg.grad, cfg.eta, clip_factor(norm(lg.grad), cfg.clip_norm));
      rec.train.target_term = lg.loss;
      rec.train.gamma1 = rec.train.gamma2 = 0.0;
      rec.train.total = lg.loss;
      break;
    }
  }
  ++state.step;
  return rec;
}

BatchTriple sample_batch(TrainState& state, const SplitSet& splits, Index num_source_classes,
                         Index num_target_classes) {
  const std::size_t n_target = std::min(state.config.batch_size, splits.train_k.size());
  if (n_target == 0) throw std::invalid_argument("sample_batch: empty target training set");
  std::vector<std::size_t> order(splits.train_k.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), state.target_rng);
  std::vector<const Example*> target;
  for (std::size_t i = 0; i < n_target; ++i) target.push_back(&splits.train_k[order[i]]);

  std::vector<const Example*> source;
  if (state.config.method != Method::TargetOnly) {
    if (splits.source_train.empty()) throw std::invalid_argument("sample_batch: empty source set");
    std::uniform_int_distribution<std::size_t> pick(0, splits.source_train.size() - 1);
    for (std::size_t i = 0; i < state.config.batch_size; ++i) {
      source.push_back(&splits.source_train[pick(state.source_rng)]);
    }
    state.counters.source_examples_sampled += source.size();
  }
  BatchTriple b = make_batch_triple(source, target, num_source_classes, num_target_classes);
  return b;
}

std::vector<int> predict(const FlatParams& params, const ModelSpec& spec, const Example& x) {
  ad::Tape tape;
  const BoundParams p = bind(tape, params, GroupSet{Group::Theta, Group::W}, GroupSet{});
  const ad::Var h = encode(tape, p, spec, tape.constant(x.features), false);
  return argmax_rows(head_forward(p, h, Head::Target).value());
}

std::vector<int> predict_source(const FlatParams& params, const ModelSpec& spec, const Example& x) {
  ad::Tape tape;
  const BoundParams p = bind(tape, params, GroupSet{Group::Theta, Group::V}, GroupSet{});
  const ad::Var h = encode(tape, p, spec, tape.constant(x.features), false);
  return argmax_rows(head_forward(p, h, Head::Source).value());
}

std::vector<int> predict_all(const FlatParams& params, const ModelSpec& spec,
                             std::span<const Example> examples, Head head) {
  if (examples.empty()) return {};
  Index rows = 0;
  for (const Example& ex : examples) rows += ex.units();
  Matrix x(rows, spec.encoder.input_dim);
  Index r = 0;
  for (const Example& ex : examples) {
    if (ex.features.cols() != x.cols()) throw std::invalid_argument("predict_all: feature width mismatch");
    x.middleRows(r, ex.units()) = ex.features;
    r += ex.units();
  }
  const Group head_group = head == Head::Target ? Group::W : Group::V;
  ad::Tape tape;
  const BoundParams p = bind(tape, params, GroupSet{Group::Theta, head_group}, GroupSet{});
  const ad::Var h = encode(tape, p, spec, tape.constant(x), false);
  return argmax_rows(head_forward(p, h, head).value());
}

FitResult fit(TrainState& state, const ModelSpec& spec, const SplitSet& splits,
              const FitOptions& opts, const Evaluator& validation_metric) {
  const auto num_source = static_cast<Index>(spec.source_head.num_classes);
  const auto num_target = static_cast<Index>(spec.target_head.num_classes);
  FitResult result;
  auto checkpoint = [&] {
    const double score = validation_metric(state.params);
    result.validation_curve.emplace_back(state.step, score);
    if (score > result.best_validation) {
      result.best_validation = score;
      result.best_params = state.params;
      result.steps_to_best = state.step;
    }
  };
  checkpoint();
  const std::size_t every = std::max<std::size_t>(opts.eval_every, 1);
  for (std::size_t i = 0; i < opts.step_budget; ++i) {
    const BatchTriple batch = sample_batch(state, splits, num_source, num_target);
    result.curve.push_back(train_step(state, spec, batch));
    if (state.step % every == 0 || i + 1 == opts.step_budget) checkpoint();
  }
  return result;
}

}  // namespace metaxt
