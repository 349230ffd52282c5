#pragma once

#include <cstdint>
#include <filesystem>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "metaxt/config.hpp"
#include "metaxt/data.hpp"
#include "metaxt/model.hpp"
#include "metaxt/trainer.hpp"

namespace metaxt {

struct SeedResult {
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  double test_metric = std::numeric_limits<double>::quiet_NaN();
  double best_validation = std::numeric_limits<double>::quiet_NaN();
  std::size_t steps_to_best = 0;
  std::int64_t wall_ms = 0;
  std::vector<StepRecord> curve;
  std::vector<std::pair<std::size_t, double>> validation_curve;
  /// Mean LTN output per source label (MetaXT and XT only).
  std::optional<Matrix> ltn_map;
  /// Best checkpoint.
  FlatParams params;
};

struct Aggregate {
  double mean = std::numeric_limits<double>::quiet_NaN();
  /// Sample standard deviation; 0 for a single value.
  double stddev = 0.0;
  std::size_t count = 0;
};

Aggregate aggregate(std::span<const double> values);

struct RunResult {
  Method method = Method::MetaXT;
  std::size_t k = 0;
  std::string metric_name;
  std::vector<SeedResult> seeds;
  Aggregate summary;
  /// At least one seed failed.
  bool partial = false;
  ModelSpec spec;
  std::vector<std::string> source_labels;
  std::vector<std::string> target_labels;
};

/// "accuracy" for sequence tasks, "micro_f1" for tagging.
std::string metric_name(TaskKind kind);

/// Label id treated as untagged by the F1 metric: the tag named "O", if any.
std::optional<int> outside_label(const LabelSpace& labels);

/// Accuracy or micro token F1 of the target model on `examples`.
double evaluate_metric(const FlatParams& params, const ModelSpec& spec,
                       std::span<const Example> examples, TaskKind kind, std::optional<int> outside);

ModelSpec model_spec_for(const RunConfig& config, const TaskPair& pair);

/// Trains with config.method at config.k for one seed. Errors are caught and
/// recorded in the result rather than thrown.
SeedResult run_seed(const RunConfig& config, const TaskPair& pair, std::uint64_t seed);
RunResult run(const RunConfig& config, const TaskPair& pair);
RunResult run(const RunConfig& config);

/// config.methods x config.ks x config.seeds on up to `workers` threads.
std::vector<RunResult> sweep(const RunConfig& config, const TaskPair& pair, std::size_t workers);
std::vector<RunResult> sweep(const RunConfig& config, std::size_t workers);

/// METAXT_WORKERS, default 1.
std::size_t workers_from_env();

/// Mean LTN output per source label over at least min(`samples`, available)
/// source units. A label absent from the sample averages the LTN over every
/// sampled representation paired with that label.
Matrix ltn_map_report(const FlatParams& params, const ModelSpec& spec,
                      std::span<const Example> source, std::size_t samples, std::mt19937_64& rng);

/// `method,k,seed,metric_name,metric_value,steps_to_best,wall_ms`, one row per
/// seed then one aggregate row (seed `mean`) per run.
std::string results_csv(std::span<const RunResult> results);

}  // namespace metaxt
