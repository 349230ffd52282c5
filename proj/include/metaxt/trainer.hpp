#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <random>
#include <string_view>
#include <vector>

#include "metaxt/data.hpp"
#include "metaxt/diff.hpp"
#include "metaxt/losses.hpp"
#include "metaxt/model.hpp"

namespace metaxt {

enum class Method { MetaXT, XT, MultiTask, TargetOnly };
enum class MetaGradMode { Exact, FiniteDifference };

std::string_view method_name(Method m);
Method parse_method(std::string_view name);
std::string_view meta_grad_mode_name(MetaGradMode m);
MetaGradMode parse_meta_grad_mode(std::string_view name);

/// One iteration's data. target_train and target_meta are disjoint halves of
/// the sampled target batch; target_full is their union.
struct BatchTriple {
  Batch source;
  Batch target_train;
  Batch target_meta;
  Batch target_full;
};

BatchTriple make_batch_triple(std::span<const Example* const> source,
                              std::span<const Example* const> target, Index num_source_classes,
                              Index num_target_classes);

struct TrainerConfig {
  Method method = Method::MetaXT;
  MetaGradMode meta_grad_mode = MetaGradMode::Exact;
  double eta = 0.1;
  double meta_lr = 0.1;
  Gammas gammas;
  EpsilonRule fd_rule;
  /// Global-norm clip applied to every update; <= 0 disables.
  double clip_norm = 5.0;
  bool use_rtn = false;
  std::size_t batch_size = 10;

  void validate() const;
};

struct TrainCounters {
  LossCounters loss;
  std::size_t source_examples_sampled = 0;
  std::size_t meta_gradient_calls = 0;
};

struct TrainState {
  FlatParams params;
  std::size_t step = 0;
  TrainerConfig config;
  std::mt19937_64 target_rng;
  std::mt19937_64 source_rng;
  TrainCounters counters;

  static TrainState create(FlatParams params, const TrainerConfig& config, std::uint64_t seed);
};

struct StepRecord {
  std::size_t step = 0;
  LossBundle train;
  double meta_loss = std::numeric_limits<double>::quiet_NaN();
  double meta_grad_norm = 0.0;
};

/// Theta' = Theta - eta * grad_Theta L_train on (source, target_train); alpha untouched.
FlatParams inner_step(const FlatParams& params, const ModelSpec& spec, const BatchTriple& batch,
                      double eta, Gammas gammas, bool use_rtn = false);

struct MetaGradient {
  Vector alpha;
  double meta_loss = 0.0;
  double direction_norm = 0.0;
};

/// Gradient of alpha -> L_meta(Theta - eta grad_Theta L_train(Theta, alpha)).
MetaGradient meta_gradient(const FlatParams& params, const ModelSpec& spec,
                           const BatchTriple& batch, double eta, Gammas gammas, MetaGradMode mode,
                           EpsilonRule rule = {}, bool use_rtn = false);

/// The proxy objective itself, for finite-difference checks.
double proxy_meta_objective(const FlatParams& params, const ModelSpec& spec,
                            const BatchTriple& batch, double eta, Gammas gammas,
                            bool use_rtn = false);

StepRecord train_step(TrainState& state, const ModelSpec& spec, const BatchTriple& batch);

/// Draws the next BatchTriple. Source examples are not drawn for TargetOnly.
BatchTriple sample_batch(TrainState& state, const SplitSet& splits, Index num_source_classes,
                         Index num_target_classes);

/// Argmax of the target model per unit; ties go to the lowest class index.
std::vector<int> predict(const FlatParams& params, const ModelSpec& spec, const Example& x);
/// Same for the source head.
std::vector<int> predict_source(const FlatParams& params, const ModelSpec& spec, const Example& x);
/// predict() over many examples in one pass, units concatenated in order.
std::vector<int> predict_all(const FlatParams& params, const ModelSpec& spec,
                             std::span<const Example> examples, Head head = Head::Target);

struct FitOptions {
  std::size_t step_budget = 2000;
  std::size_t eval_every = 50;
};

struct FitResult {
  FlatParams best_params;
  std::size_t steps_to_best = 0;
  double best_validation = -std::numeric_limits<double>::infinity();
  std::vector<StepRecord> curve;
  std::vector<std::pair<std::size_t, double>> validation_curve;
};

using Evaluator = std::function<double(const FlatParams&)>;

/// Runs the step budget, evaluating at step 0 and every eval_every steps;
/// keeps the earliest checkpoint with the highest validation score.
FitResult fit(TrainState& state, const ModelSpec& spec, const SplitSet& splits,
              const FitOptions& opts, const Evaluator& validation_metric);

}  // namespace metaxt
