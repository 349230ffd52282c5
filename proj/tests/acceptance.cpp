// Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any failure.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "metaxt/config.hpp"
#include "metaxt/experiment.hpp"
#include "metaxt/gradcheck.hpp"
#include "metaxt/losses.hpp"
#include "metaxt/report.hpp"

using namespace metaxt;

namespace {

struct Outcome {
  bool passed = false;
  std::string detail;
};

struct Criterion {
  int id;
  std::string name;
  /// 0 means no time limit.
  double budget_seconds;
  std::function<Outcome()> body;
};

std::string fmt(const char* pattern, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, pattern, args...);
  return buf;
}

// Synthetic granularity pair with Target-Only at k=20 inside 0.30-0.55.
RunConfig granularity_config() {
  RunConfig c;
  c.task = TaskSource::Granularity;
  c.noise_sigma = 0.8;
  c.input_dim = 16;
  c.eta = 0.1;
  c.meta_lr = 1.0;
  c.gamma1 = 1.0;
  c.gamma2 = 2.0;
  c.step_budget = 2000;
  c.eval_every = 50;
  c.seeds = {0, 1, 2, 3, 4};
  c.record_timing = false;
  return c;
}

RunConfig tagset_config() {
  RunConfig c;
  c.task = TaskSource::Tagset;
  c.noise_sigma = 2.5;
  c.input_dim = 16;
  c.eta = 0.1;
  c.meta_lr = 0.3;
  c.gamma2 = 0.5;
  c.step_budget = 1000;
  c.eval_every = 50;
  c.seeds = {0, 1, 2, 3, 4};
  c.record_timing = false;
  return c;
}

const RunResult& find(const std::vector<RunResult>& results, Method m, std::size_t k) {
  for (const RunResult& r : results) {
    if (r.method == m && r.k == k) return r;
  }
  throw std::logic_error("missing run");
}

// Shared between criteria 4, 5 and 8.
struct GranularitySweep {
  TaskPair pair;
  std::vector<RunResult> results;
};

GranularitySweep& k20_sweep() {
  static GranularitySweep sweep_result = [] {
    RunConfig c = granularity_config();
    c.methods = {Method::MetaXT, Method::XT, Method::TargetOnly};
    c.ks = {20};
    GranularitySweep s{build_task_pair(c), {}};
    s.results = sweep(c, s.pair, workers_from_env());
    return s;
  }();
  return sweep_result;
}

Outcome meta_gradient_check() {
  MetaGradCheckOptions opts;
  opts.instances = 20;
  const auto results = check_meta_gradients(opts);
  double worst_exact = 0.0, worst_fd = 0.0;
  bool ok = !results.empty();
  for (const CheckResult& r : results) {
    ok = ok && r.passed;
    const bool fd = r.name.find("fd") != std::string::npos;
    (fd ? worst_fd : worst_exact) = std::max(fd ? worst_fd : worst_exact, r.max_error);
  }
  const auto params_max = static_cast<std::size_t>(
      std::max(make_tiny_instance(0).params.size(), make_tiny_instance(3).params.size()));
  ok = ok && params_max <= 200;
  return {ok, fmt("%zu checks, max params %zu, worst exact-vs-proxy %.2e, worst fd-vs-exact %.2e",
                  results.size(), params_max, worst_exact, worst_fd)};
}

Outcome degenerate_modes() {
  bool zero = true;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const TinyInstance t = make_tiny_instance(seed);
    Gammas g = t.gammas;
    g.gamma2 = 0.0;
    for (MetaGradMode mode : {MetaGradMode::Exact, MetaGradMode::FiniteDifference}) {
      const MetaGradient mg = meta_gradient(t.params, t.spec, t.batch, t.eta, g, mode);
      zero = zero && mg.alpha.size() > 0 && (mg.alpha.array() == 0.0).all();
    }
  }

  RunConfig c = granularity_config();
  c.step_budget = 150;
  c.seeds = {0, 1};
  c.gamma2 = 0.0;
  const TaskPair pair = build_task_pair(c);
  bool identical = true;
  for (std::uint64_t seed : c.seeds) {
    c.method = Method::MetaXT;
    const SeedResult a = run_seed(c, pair, seed);
    c.method = Method::MultiTask;
    const SeedResult b = run_seed(c, pair, seed);
    identical = identical && a.ok && b.ok;
    for (Group g : {Group::Theta, Group::V, Group::W, Group::Alpha}) {
      identical = identical && bit_identical(a.params.group(g), b.params.group(g));
    }
    identical = identical && a.test_metric == b.test_metric && a.steps_to_best == b.steps_to_best;
    identical = identical && a.curve.size() == b.curve.size();
    for (std::size_t i = 0; identical && i < a.curve.size(); ++i) {
      identical = a.curve[i].train.total == b.curve[i].train.total;
    }
  }
  return {zero && identical, fmt("alpha-gradient zero: %s, MetaXT(gamma2=0) == MultiTask bitwise: %s",
                                 zero ? "yes" : "no", identical ? "yes" : "no")};
}

Outcome soft_ce_contract() {
  std::mt19937_64 rng(20240);
  std::exponential_distribution<double> e(1.0);
  std::bernoulli_distribution sparse(0.25);
  auto simplex = [&](Index n, bool zeros) {
    Vector v(n);
    for (Index i = 0; i < n; ++i) v(i) = zeros && sparse(rng) ? 0.0 : e(rng);
    if (v.sum() == 0.0) v(0) = 1.0;
    return Vector(v / v.sum());
  };
  double worst_hard = 0.0;
  for (int i = 0; i < 10000; ++i) {
    const Index n = 2 + i % 9;
    const Vector p = simplex(n, false);
    const Index label = i % n;
    worst_hard = std::max(worst_hard, std::abs(soft_ce(SoftLabel::one_hot(n, label), p) + std::log(p(label))));
  }
  int violations = 0;
  double tightest = std::numeric_limits<double>::infinity();
  for (int i = 0; i < 10000; ++i) {
    const Index n = 2 + i % 9;
    const SoftLabel y{simplex(n, true)};
    const Vector p = simplex(n, false);
    const double gap = soft_ce(y, p) - entropy(y);
    tightest = std::min(tightest, gap);
    if (gap < -1e-12) ++violations;
  }
  return {worst_hard <= 1e-12 && violations == 0,
          fmt("one-hot max |soft - hard| %.1e, Gibbs violations %d/10000 (min gap %.2e)", worst_hard,
              violations, tightest)};
}

Outcome ablation_ordering() {
  const auto& r = k20_sweep().results;
  const double meta = find(r, Method::MetaXT, 20).summary.mean;
  const double xt = find(r, Method::XT, 20).summary.mean;
  const double target = find(r, Method::TargetOnly, 20).summary.mean;
  const bool ok = target >= 0.30 && target <= 0.55 && meta >= xt + 0.05 && meta >= target + 0.05;
  return {ok, fmt("MetaXT %.4f, XT %.4f, Target-Only %.4f (need Target-Only in [0.30,0.55], margins >= 0.05)",
                  meta, xt, target)};
}

Outcome gap_shrinkage() {
  const auto& s = k20_sweep();
  RunConfig c = granularity_config();
  c.methods = {Method::MetaXT, Method::TargetOnly};
  c.ks = {500};
  const auto large = sweep(c, s.pair, workers_from_env());
  const double gap20 = find(s.results, Method::MetaXT, 20).summary.mean -
                       find(s.results, Method::TargetOnly, 20).summary.mean;
  const double gap500 = find(large, Method::MetaXT, 500).summary.mean -
                        find(large, Method::TargetOnly, 500).summary.mean;
  return {gap20 > gap500, fmt("gap at k=20 %.4f, gap at k=500 %.4f", gap20, gap500)};
}

Outcome ltn_mapping() {
  RunConfig c = granularity_config();
  c.method = Method::MetaXT;
  c.k = 100;
  const RunResult r = run(c);
  int good = 0;
  std::string rows;
  for (const SeedResult& s : r.seeds) {
    if (!s.ok || !s.ltn_map) continue;
    const Matrix& m = *s.ltn_map;
    auto top2 = [&](Index row) {
      std::vector<Index> order{0, 1, 2, 3, 4};
      std::sort(order.begin(), order.end(), [&](Index a, Index b) { return m(row, a) > m(row, b); });
      return std::set<Index>{order[0], order[1]};
    };
    auto smallest = [&](Index row) {
      Index j = 0;
      m.row(row).minCoeff(&j);
      return j;
    };
    const bool ok = top2(0) == std::set<Index>{0, 1} && top2(1) == std::set<Index>{3, 4} &&
                    smallest(0) == 2 && smallest(1) == 2;
    good += ok ? 1 : 0;
    rows += fmt(" [seed %llu neg(%.2f %.2f %.2f %.2f %.2f) pos(%.2f %.2f %.2f %.2f %.2f)%s]",
                static_cast<unsigned long long>(s.seed), m(0, 0), m(0, 1), m(0, 2), m(0, 3), m(0, 4),
                m(1, 0), m(1, 1), m(1, 2), m(1, 3), m(1, 4), ok ? "" : " x");
  }
  return {good >= 4, fmt("%d/5 seeds recover the mapping;", good) + rows};
}

Outcome tagset_transfer() {
  RunConfig c = tagset_config();
  c.methods = {Method::MetaXT, Method::MultiTask, Method::TargetOnly};
  c.ks = {20};
  const TaskPair pair = build_task_pair(c);
  const auto results = sweep(c, pair, workers_from_env());
  const RunResult& meta = find(results, Method::MetaXT, 20);
  const double f_meta = meta.summary.mean;
  const double f_multi = find(results, Method::MultiTask, 20).summary.mean;
  const double f_target = find(results, Method::TargetOnly, 20).summary.mean;

  // Fine tags coarsened through the refinement vs the source head, pooled over seeds.
  SplitOptions split;
  split.k = c.k;
  std::size_t agree = 0, total = 0;
  for (const SeedResult& s : meta.seeds) {
    if (!s.ok) continue;
    split.seed = s.seed;
    const SplitSet splits = sample_splits(pair, split);
    const std::vector<int> fine = predict_all(s.params, meta.spec, splits.test, Head::Target);
    const std::vector<int> coarse = predict_all(s.params, meta.spec, splits.test, Head::Source);
    for (std::size_t i = 0; i < fine.size(); ++i) {
      agree += pair.coarsening[static_cast<std::size_t>(fine[i])] == coarse[i] ? 1 : 0;
    }
    total += fine.size();
  }
  const double agreement = total > 0 ? static_cast<double>(agree) / static_cast<double>(total) : 0.0;
  const bool ok = f_meta >= f_target + 0.03 && f_multi >= f_target + 0.03 && agreement >= 0.70;
  return {ok, fmt("micro-F1 MetaXT %.4f, Multi-Task %.4f, Target-Only %.4f; coarsening agreement %.3f",
                  f_meta, f_multi, f_target, agreement)};
}

Outcome ltn_excluded_at_inference() {
  const auto& s = k20_sweep();
  const RunResult& meta = find(s.results, Method::MetaXT, 20);
  SplitOptions split;
  split.k = 20;
  split.seed = meta.seeds.front().seed;
  const SplitSet splits = sample_splits(s.pair, split);
  const std::vector<Example> test(splits.test.begin(), splits.test.begin() + 1000);

  FlatParams params = meta.seeds.front().params;
  const std::vector<int> before = predict_all(params, meta.spec, test);
  std::mt19937_64 rng(77);
  std::normal_distribution<double> noise(0.0, 5.0);
  for (Group g : {Group::Alpha, Group::V}) {
    for (Index i = 0; i < params.size(g); ++i) params.group(g)(i) = noise(rng);
  }
  const std::vector<int> after = predict_all(params, meta.spec, test);
  std::size_t changed = 0;
  for (std::size_t i = 0; i < before.size(); ++i) changed += before[i] != after[i] ? 1 : 0;
  return {changed == 0 && before.size() == 1000,
          fmt("%zu of %zu predictions changed after randomizing alpha and v", changed, before.size())};
}

Outcome determinism() {
  RunConfig c = granularity_config();
  c.methods = {Method::MetaXT, Method::XT, Method::MultiTask, Method::TargetOnly};
  c.ks = {20};
  c.seeds = {0, 1};
  c.step_budget = 200;
  RunConfig tag = tagset_config();
  tag.methods = {Method::MetaXT};
  tag.ks = {20};
  tag.seeds = {0};
  tag.step_budget = 100;
  bool same = true;
  std::size_t bytes = 0;
  for (const RunConfig& cfg : {c, tag}) {
    const std::string first = results_csv(sweep(cfg, 1));
    const std::string second = results_csv(sweep(cfg, 1));
    same = same && first == second;
    bytes += first.size();
  }
  return {same, fmt("two executions per config produce identical results CSV (%zu bytes)", bytes)};
}

}  // namespace

int main() {
  const std::vector<Criterion> criteria{
      {1, "meta-gradient correctness", 60, meta_gradient_check},
      {2, "degenerate-mode equivalences", 10, degenerate_modes},
      {3, "soft cross-entropy contract", 0, soft_ce_contract},
      {4, "ablation ordering", 600, ablation_ordering},
      {5, "few-shot gap shrinkage", 900, gap_shrinkage},
      {6, "LTN mapping recovery", 300, ltn_mapping},
      {7, "tag-set transfer", 600, tagset_transfer},
      {8, "LTN excluded at inference", 0, ltn_excluded_at_inference},
      {9, "full determinism", 0, determinism},
  };
  int failures = 0;
  for (const Criterion& c : criteria) {
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.body();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const bool in_budget = c.budget_seconds <= 0.0 || seconds <= c.budget_seconds;
    const bool passed = o.passed && in_budget;
    failures += passed ? 0 : 1;
    const std::string timing = c.budget_seconds > 0.0 ? fmt("%.1fs of %.0fs", seconds, c.budget_seconds)
                                                      : fmt("%.1fs", seconds);
    std::printf("%s  %d. %s (%s)%s: %s\n", passed ? "PASS" : "FAIL", c.id, c.name.c_str(), timing.c_str(),
                in_budget ? "" : " OVER TIME BUDGET", o.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%d of %zu criteria failed\n", failures, criteria.size());
  return failures == 0 ? 0 : 1;
}
