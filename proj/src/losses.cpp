#include "metaxt/losses.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace metaxt {

SoftLabel SoftLabel::one_hot(Index num_classes, Index label) {
  if (label < 0 || label >= num_classes) throw std::invalid_argument("one_hot: label out of range");
  SoftLabel y{Vector::Zero(num_classes)};
  y.probs(label) = 1.0;
  return y;
}

void SoftLabel::validate() const {
  if (probs.size() == 0) throw std::invalid_argument("soft label is empty");
  if ((probs.array() < 0.0).any()) throw std::invalid_argument("soft label has negative entries");
  if (std::abs(probs.sum() - 1.0) > 1e-9) throw std::invalid_argument("soft label does not sum to 1");
}

double soft_ce(const SoftLabel& y, const Vector& p) {
  if (y.probs.size() != p.size()) {
    throw std::invalid_argument("soft_ce: length mismatch (" + std::to_string(y.probs.size()) +
                                " vs " + std::to_string(p.size()) + ")");
  }
  double total = 0.0;
  for (Index i = 0; i < p.size(); ++i) total -= y.probs(i) * std::log(std::max(p(i), kLogClamp));
  return total;
}

double entropy(const SoftLabel& y) {
  double h = 0.0;
  for (Index i = 0; i < y.probs.size(); ++i) {
    if (y.probs(i) > 0.0) h -= y.probs(i) * std::log(y.probs(i));
  }
  return h;
}

LossBundle TrainLossVars::bundle() const {
  LossBundle b;
  b.target_term = target.scalar();
  b.source_term = source.scalar();
  b.transfer_term = transfer.valid() ? transfer.scalar() : 0.0;
  b.gamma1 = gammas.gamma1;
  b.gamma2 = gammas.gamma2;
  b.total = total.scalar();
  return b;
}

Batch make_batch(std::span<const Example* const> examples, Index num_classes) {
  Batch batch;
  batch.num_examples = examples.size();
  if (examples.empty()) return batch;
  Index rows = 0;
  const Index width = examples.front()->features.cols();
  for (const Example* ex : examples) {
    if (ex->units() == 0) throw std::invalid_argument("make_batch: example without units");
    if (ex->features.cols() != width) throw std::invalid_argument("make_batch: feature widths differ");
    rows += ex->units();
  }
  batch.x.resize(rows, width);
  batch.y = Matrix::Zero(rows, num_classes);
  batch.weights.resize(rows, 1);
  batch.labels.reserve(static_cast<std::size_t>(rows));
  const double per_example = 1.0 / static_cast<double>(examples.size());
  Index r = 0;
  for (const Example* ex : examples) {
    const Index n = ex->units();
    batch.x.middleRows(r, n) = ex->features;
    if (ex->soft_labels) {
      if (ex->soft_labels->rows() != n || ex->soft_labels->cols() != num_classes) {
        throw std::invalid_argument("make_batch: soft label shape mismatch");
      }
      batch.y.middleRows(r, n) = *ex->soft_labels;
    }
    for (Index u = 0; u < n; ++u) {
      const int label = ex->soft_labels ? -1 : ex->labels.at(static_cast<std::size_t>(u));
      if (!ex->soft_labels) {
        if (label < 0 || label >= num_classes) throw std::invalid_argument("make_batch: label out of range");
        batch.y(r + u, label) = 1.0;
      }
      batch.labels.push_back(ex->soft_labels ? -1 : label);
      batch.weights(r + u, 0) = per_example / static_cast<double>(n);
    }
    r += n;
  }
  return batch;
}

Batch make_batch(std::span<const Example> examples, Index num_classes) {
  std::vector<const Example*> ptrs;
  ptrs.reserve(examples.size());
  for (const Example& ex : examples) ptrs.push_back(&ex);
  return make_batch(std::span<const Example* const>(ptrs), num_classes);
}

ad::Var soft_ce(ad::Tape& tape, ad::Var y, ad::Var p, const Matrix& weights) {
  const ad::Var weighted = ad::mul(y, tape.constant(weights));
  const ad::Var logp = ad::log(ad::clamp_min(p, kLogClamp));
  return ad::scale(ad::sum(ad::mul(logp, weighted)), -1.0);
}

TrainLossVars l_train(ad::Tape& tape, const BoundParams& params, const ModelSpec& spec,
                      const Batch& target, const Batch& source, Gammas gammas,
                      const TrainLossOptions& opts) {
  if (target.empty() || source.empty()) throw std::invalid_argument("l_train: empty batch");
  if (gammas.gamma1 < 0.0 || gammas.gamma2 < 0.0) {
    throw std::invalid_argument("l_train: loss weights must be non-negative");
  }
  if (opts.counters) {
    opts.counters->target_examples_read += target.num_examples;
    opts.counters->source_examples_read += source.num_examples;
  }
  TrainLossVars out;
  out.gammas = gammas;

  const ad::Var h_t = encode(tape, params, spec, tape.constant(target.x), false);
  out.target = soft_ce(tape, tape.constant(target.y), head_forward(params, h_t, Head::Target),
                       target.weights);

  const ad::Var h_s = encode(tape, params, spec, tape.constant(source.x), false);
  out.source = soft_ce(tape, tape.constant(source.y), head_forward(params, h_s, Head::Source),
                       source.weights);
  out.total = ad::add(out.target, ad::scale(out.source, gammas.gamma1));

  if (gammas.gamma2 != 0.0) {
    const ad::Var h_path = opts.use_rtn ? encode(tape, params, spec, tape.constant(source.x), true) : h_s;
    const Matrix& repr = opts.frozen_ltn_input ? *opts.frozen_ltn_input : h_s.value();
    const ad::Var pseudo = ltn_forward(tape, params, spec, repr, source.labels);
    if (opts.counters) ++opts.counters->ltn_evaluations;
    out.transfer = soft_ce(tape, pseudo, head_forward(params, h_path, Head::Target), source.weights);
    out.total = ad::add(out.total, ad::scale(out.transfer, gammas.gamma2));
  }
  return out;
}

LossBundle l_train(const FlatParams& params, const ModelSpec& spec, const Batch& target,
                   const Batch& source, Gammas gammas, const TrainLossOptions& opts) {
  ad::Tape tape;
  const BoundParams bound = bind(tape, params, params.groups(), GroupSet{});
  return l_train(tape, bound, spec, target, source, gammas, opts).bundle();
}

ad::Var l_meta(ad::Tape& tape, const BoundParams& params, const ModelSpec& spec,
               const Batch& batch, LossCounters* counters) {
  if (batch.empty()) throw std::invalid_argument("l_meta: empty batch");
  if (counters) counters->target_examples_read += batch.num_examples;
  const ad::Var h = encode(tape, params, spec, tape.constant(batch.x), false);
  return soft_ce(tape, tape.constant(batch.y), head_forward(params, h, Head::Target), batch.weights);
}

double l_meta(const FlatParams& params, const ModelSpec& spec, const Batch& batch) {
  ad::Tape tape;
  const BoundParams bound = bind(tape, params, GroupSet{Group::Theta, Group::W}, GroupSet{});
  return l_meta(tape, bound, spec, batch).scalar();
}

Matrix ltn_input(const FlatParams& params, const ModelSpec& spec, const Batch& source) {
  return encode(spec, params, source.x, false);
}

}  // namespace metaxt
