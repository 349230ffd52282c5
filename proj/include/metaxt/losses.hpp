#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "metaxt/autodiff.hpp"
#include "metaxt/data.hpp"
#include "metaxt/model.hpp"
#include "metaxt/params.hpp"

namespace metaxt {

inline constexpr double kLogClamp = 1e-12;

/// Probability vector over a label space; one-hot vectors are valid members.
struct SoftLabel {
  Vector probs;

  static SoftLabel one_hot(Index num_classes, Index label);
  /// Throws std::invalid_argument unless entries are >= 0 and sum to 1 within 1e-9.
  void validate() const;
};

/// -sum_i y_i log(max(p_i, 1e-12)).
double soft_ce(const SoftLabel& y, const Vector& p);
double entropy(const SoftLabel& y);

/// Loss weights for the source and transfer terms.
struct Gammas {
  double gamma1 = 1.0;
  double gamma2 = 1.0;
};

struct LossBundle {
  double target_term = 0.0;
  double source_term = 0.0;
  /// Zero and unevaluated when gamma2 == 0.
  double transfer_term = 0.0;
  double gamma1 = 0.0;
  double gamma2 = 0.0;
  double total = 0.0;
};

/// Examples stacked into one matrix, one row per prediction unit. Row
/// weights average over units within an example, then over examples.
struct Batch {
  Matrix x;
  /// One row per unit: the soft label, or the one-hot of the hard label.
  Matrix y;
  std::vector<int> labels;
  /// rows x 1.
  Matrix weights;
  std::size_t num_examples = 0;

  [[nodiscard]] bool empty() const { return num_examples == 0; }
};

Batch make_batch(std::span<const Example* const> examples, Index num_classes);
Batch make_batch(std::span<const Example> examples, Index num_classes);

/// Instrumentation for mode-isolation checks.
struct LossCounters {
  std::size_t source_examples_read = 0;
  std::size_t target_examples_read = 0;
  std::size_t ltn_evaluations = 0;
};

struct TrainLossOptions {
  bool use_rtn = false;
  /// LTN input representation to use instead of the current encoder output.
  const Matrix* frozen_ltn_input = nullptr;
  LossCounters* counters = nullptr;
};

struct TrainLossVars {
  ad::Var target;
  ad::Var source;
  /// Invalid when gamma2 == 0.
  ad::Var transfer;
  ad::Var total;
  Gammas gammas;

  [[nodiscard]] LossBundle bundle() const;
};

/// Weighted soft cross-entropy of probabilities `p` against targets `y`.
ad::Var soft_ce(ad::Tape& tape, ad::Var y, ad::Var p, const Matrix& weights);

TrainLossVars l_train(ad::Tape& tape, const BoundParams& params, const ModelSpec& spec,
                      const Batch& target, const Batch& source, Gammas gammas,
                      const TrainLossOptions& opts = {});
LossBundle l_train(const FlatParams& params, const ModelSpec& spec, const Batch& target,
                   const Batch& source, Gammas gammas, const TrainLossOptions& opts = {});

/// Mean soft cross-entropy of the target model on `batch`; reads theta and w only.
ad::Var l_meta(ad::Tape& tape, const BoundParams& params, const ModelSpec& spec,
               const Batch& batch, LossCounters* counters = nullptr);
double l_meta(const FlatParams& params, const ModelSpec& spec, const Batch& batch);

/// Encoder output (no RTN) on a source batch: the LTN's input.
Matrix ltn_input(const FlatParams& params, const ModelSpec& spec, const Batch& source);

}  // namespace metaxt
