#include "metaxt/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <numeric>
#include <thread>

#include "metaxt/metrics.hpp"

namespace metaxt {
namespace {

std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  (void)ec;
  return std::string(buf, ptr);
}

std::vector<int> gold_units(std::span<const Example> examples) {
  std::vector<int> out;
  for (const Example& ex : examples) out.insert(out.end(), ex.labels.begin(), ex.labels.end());
  return out;
}

RunResult collect(const RunConfig& config, const TaskPair& pair, std::vector<SeedResult> seeds) {
  RunResult r;
  r.method = config.method;
  r.k = config.k;
  r.metric_name = metric_name(pair.kind);
  r.spec = model_spec_for(config, pair);
  r.source_labels = pair.source.labels->names();
  r.target_labels = pair.target.labels->names();
  std::vector<double> values;
  for (const SeedResult& s : seeds) {
    if (s.ok) {
      values.push_back(s.test_metric);
    } else {
      r.partial = true;
    }
  }
  r.summary = aggregate(values);
  r.seeds = std::move(seeds);
  return r;
}

}  // namespace

Aggregate aggregate(std::span<const double> values) {
  Aggregate a;
  a.count = values.size();
  if (values.empty()) return a;
  double sum = 0.0;
  for (double v : values) sum += v;
  a.mean = sum / static_cast<double>(values.size());
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - a.mean) * (v - a.mean);
    a.stddev = std::sqrt(ss / static_cast<double>(values.size() - 1));
  }
  return a;
}

std::string metric_name(TaskKind kind) {
  return kind == TaskKind::TokenTagging ? "micro_f1" : "accuracy";
}

std::optional<int> outside_label(const LabelSpace& labels) { return labels.find("O"); }

double evaluate_metric(const FlatParams& params, const ModelSpec& spec,
                       std::span<const Example> examples, TaskKind kind, std::optional<int> outside) {
  const std::vector<int> predicted = predict_all(params, spec, examples);
  const std::vector<int> gold = gold_units(examples);
  if (kind == TaskKind::TokenTagging) return token_f1(predicted, gold, outside);
  return accuracy(predicted, gold);
}

ModelSpec model_spec_for(const RunConfig& config, const TaskPair& pair) {
  return make_model_spec(pair.target.input_dim, static_cast<Index>(pair.source.num_classes()),
                         static_cast<Index>(pair.target.num_classes()),
                         pair.kind == TaskKind::TokenTagging, config.dims);
}

SeedResult run_seed(const RunConfig& config, const TaskPair& pair, std::uint64_t seed) {
  SeedResult result;
  result.seed = seed;
  const auto start = std::chrono::steady_clock::now();
  try {
    const ModelSpec spec = model_spec_for(config, pair);
    SplitOptions split_opts;
    split_opts.k = config.k;
    split_opts.seed = seed;
    split_opts.validation_size = config.validation_size;
    const SplitSet splits = sample_splits(pair, split_opts);

    std::seed_seq init_seed{seed, std::uint64_t{0x1417}};
    std::mt19937_64 init_rng(init_seed);
    TrainState state = TrainState::create(init_params(spec, init_rng), config.trainer_config(), seed);

    const std::optional<int> outside = outside_label(*pair.target.labels);
    const Evaluator validation = [&](const FlatParams& p) {
      return evaluate_metric(p, spec, splits.validation, pair.kind, outside);
    };
    FitResult fit_result = fit(state, spec, splits, FitOptions{config.step_budget, config.eval_every}, validation);

    result.test_metric = evaluate_metric(fit_result.best_params, spec, splits.test, pair.kind, outside);
    result.best_validation = fit_result.best_validation;
    result.steps_to_best = fit_result.steps_to_best;
    result.curve = std::move(fit_result.curve);
    result.validation_curve = std::move(fit_result.validation_curve);
    if (config.method == Method::MetaXT || config.method == Method::XT) {
      std::seed_seq map_seed{seed, std::uint64_t{0x3A9}};
      std::mt19937_64 map_rng(map_seed);
      result.ltn_map = ltn_map_report(fit_result.best_params, spec, splits.source_train,
                                      config.ltn_map_samples, map_rng);
    }
    result.params = std::move(fit_result.best_params);
    result.ok = true;
  } catch (const std::exception& e) {
    result.ok = false;
    result.error = e.what();
  }
  if (config.record_timing) {
    result.wall_ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                         std::chrono::steady_clock::now() - start)
                         .count();
  }
  return result;
}

RunResult run(const RunConfig& config, const TaskPair& pair) {
  config.validate();
  std::vector<SeedResult> seeds;
  for (std::uint64_t seed : config.seeds) seeds.push_back(run_seed(config, pair, seed));
  return collect(config, pair, std::move(seeds));
}

RunResult run(const RunConfig& config) {
  config.validate();
  return run(config, build_task_pair(config));
}

std::vector<RunResult> sweep(const RunConfig& config, const TaskPair& pair, std::size_t workers) {
  config.validate();
  struct Job {
    RunConfig config;
    std::uint64_t seed;
  };
  std::vector<RunConfig> cells;
  for (Method m : config.methods) {
    for (std::size_t k : config.ks) {
      RunConfig c = config;
      c.method = m;
      c.k = k;
      c.validate();
      cells.push_back(c);
    }
  }
  std::vector<Job> jobs;
  for (const RunConfig& c : cells) {
    for (std::uint64_t seed : c.seeds) jobs.push_back({c, seed});
  }
  std::vector<SeedResult> slots(jobs.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < jobs.size(); i = next++) {
      slots[i] = run_seed(jobs[i].config, pair, jobs[i].seed);
    }
  };
  const std::size_t n = std::clamp<std::size_t>(workers, 1, std::max<std::size_t>(jobs.size(), 1));
  std::vector<std::thread> threads;
  for (std::size_t t = 1; t < n; ++t) threads.emplace_back(worker);
  worker();
  for (auto& t : threads) t.join();

  std::vector<RunResult> out;
  std::size_t cursor = 0;
  for (const RunConfig& c : cells) {
    std::vector<SeedResult> seeds(std::make_move_iterator(slots.begin() + static_cast<std::ptrdiff_t>(cursor)),
                                  std::make_move_iterator(slots.begin() + static_cast<std::ptrdiff_t>(cursor + c.seeds.size())));
    cursor += c.seeds.size();
    out.push_back(collect(c, pair, std::move(seeds)));
  }
  return out;
}

std::vector<RunResult> sweep(const RunConfig& config, std::size_t workers) {
  config.validate();
  return sweep(config, build_task_pair(config), workers);
}

std::size_t workers_from_env() {
  const char* raw = std::getenv("METAXT_WORKERS");
  if (raw == nullptr || *raw == '\0') return 1;
  std::size_t n = 0;
  const std::string_view s(raw);
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), n);
  if (ec != std::errc() || ptr != s.data() + s.size() || n == 0) {
    throw std::invalid_argument("METAXT_WORKERS must be a positive integer, got '" + std::string(s) + "'");
  }
  return n;
}

Matrix ltn_map_report(const FlatParams& params, const ModelSpec& spec,
                      std::span<const Example> source, std::size_t samples, std::mt19937_64& rng) {
  const Index cs = spec.ltn.num_source_classes;
  const Index ct = spec.ltn.num_target_classes;
  if (source.empty()) throw std::invalid_argument("ltn_map_report: no source examples");
  std::vector<std::size_t> order(source.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);

  std::vector<const Example*> picked;
  std::size_t units = 0;
  for (std::size_t i : order) {
    if (units >= samples) break;
    picked.push_back(&source[i]);
    units += static_cast<std::size_t>(source[i].units());
  }
  Matrix x(static_cast<Index>(units), spec.encoder.input_dim);
  std::vector<int> labels;
  Index r = 0;
  for (const Example* ex : picked) {
    x.middleRows(r, ex->units()) = ex->features;
    labels.insert(labels.end(), ex->labels.begin(), ex->labels.end());
    r += ex->units();
  }

  Matrix map = Matrix::Zero(cs, ct);
  const Matrix out = ltn_forward(spec, params, x, labels);
  std::vector<double> counts(static_cast<std::size_t>(cs), 0.0);
  for (Index i = 0; i < out.rows(); ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    map.row(y) += out.row(i);
    counts[static_cast<std::size_t>(y)] += 1.0;
  }
  for (Index s = 0; s < cs; ++s) {
    if (counts[static_cast<std::size_t>(s)] > 0.0) {
      map.row(s) /= counts[static_cast<std::size_t>(s)];
      continue;
    }
    const std::vector<int> forced(static_cast<std::size_t>(x.rows()), static_cast<int>(s));
    map.row(s) = ltn_forward(spec, params, x, forced).colwise().mean();
  }
  return map;
}

std::string results_csv(std::span<const RunResult> results) {
  std::string out = "method,k,seed,metric_name,metric_value,steps_to_best,wall_ms\n";
  for (const RunResult& r : results) {
    const std::string prefix = std::string(method_name(r.method)) + "," + std::to_string(r.k) + ",";
    double steps = 0.0;
    std::int64_t wall = 0;
    std::size_t ok = 0;
    for (const SeedResult& s : r.seeds) {
      out += prefix + std::to_string(s.seed) + "," + r.metric_name + "," +
             fmt(s.ok ? s.test_metric : std::numeric_limits<double>::quiet_NaN()) + "," +
             std::to_string(s.steps_to_best) + "," + std::to_string(s.wall_ms) + "\n";
      wall += s.wall_ms;
      if (s.ok) {
        steps += static_cast<double>(s.steps_to_best);
        ++ok;
      }
    }
    const double mean_steps = ok > 0 ? steps / static_cast<double>(ok) : std::numeric_limits<double>::quiet_NaN();
    out += prefix + "mean," + r.metric_name + "," + fmt(r.summary.mean) + "," + fmt(mean_steps) + "," +
           std::to_string(wall) + "\n";
  }
  return out;
}

}  // namespace metaxt
