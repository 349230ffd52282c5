#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "metaxt/config.hpp"
#include "metaxt/experiment.hpp"
#include "metaxt/gradcheck.hpp"
#include "metaxt/report.hpp"

namespace {

using namespace metaxt;

constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;
constexpr int kExitPartial = 3;

RunConfig resolve_config(const std::string& path, const std::vector<std::string>& overrides) {
  RunConfig config = path.empty() ? RunConfig{} : load_config(path);
  apply_overrides(config, overrides);
  config.validate();
  return config;
}

void print_summary(const std::vector<RunResult>& results) {
  for (const RunResult& r : results) {
    std::printf("%-12s k=%-4zu %s mean=%.4f std=%.4f seeds=%zu/%zu%s\n",
                std::string(method_name(r.method)).c_str(), r.k, r.metric_name.c_str(), r.summary.mean,
                r.summary.stddev, r.summary.count, r.seeds.size(), r.partial ? " PARTIAL" : "");
    for (const SeedResult& s : r.seeds) {
      if (!s.ok) std::printf("  seed %llu failed: %s\n", static_cast<unsigned long long>(s.seed), s.error.c_str());
    }
  }
}

int finish(const std::vector<RunResult>& results) {
  print_summary(results);
  for (const RunResult& r : results) {
    if (r.partial) return kExitPartial;
  }
  return 0;
}

void print_map(const RunResult& r, const TaskPair& pair) {
  const auto m = mean_ltn_map(r);
  if (!m) {
    std::printf("no LTN map (all seeds failed)\n");
    return;
  }
  std::printf("%-12s", "source\\target");
  for (const auto& t : r.target_labels) std::printf(" %8s", t.c_str());
  std::printf("\n");
  for (Index i = 0; i < m->rows(); ++i) {
    std::printf("%-12s", r.source_labels[static_cast<std::size_t>(i)].c_str());
    for (Index j = 0; j < m->cols(); ++j) std::printf(" %8.4f", (*m)(i, j));
    std::printf("\n");
  }
  if (pair.oracle_map) {
    std::printf("generator correspondence:\n");
    for (Index i = 0; i < pair.oracle_map->rows(); ++i) {
      std::printf("%-12s", r.source_labels[static_cast<std::size_t>(i)].c_str());
      for (Index j = 0; j < pair.oracle_map->cols(); ++j) std::printf(" %8.4f", (*pair.oracle_map)(i, j));
      std::printf("\n");
    }
  }
}

int print_checks(const std::string& heading, const std::vector<CheckResult>& results) {
  int failures = 0;
  std::printf("== %s\n", heading.c_str());
  for (const CheckResult& r : results) {
    std::printf("%s  %-58s error=%.3e tol=%.1e\n", r.passed ? "PASS" : "FAIL", r.name.c_str(),
                r.max_error, r.tolerance);
    failures += r.passed ? 0 : 1;
  }
  return failures;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Label-transfer meta-learning experiments"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir = "metaxt_out";
  std::size_t workers = 0;

  auto* run_cmd = app.add_subcommand("run", "Train one configuration over its seeds");
  run_cmd->add_option("-c,--config", config_path, "key = value config file");
  run_cmd->add_option("-o,--out", out_dir, "output directory");
  run_cmd->allow_extras();

  auto* sweep_cmd = app.add_subcommand("sweep", "Cross product of methods x ks x seeds");
  sweep_cmd->add_option("-c,--config", config_path, "key = value config file");
  sweep_cmd->add_option("-o,--out", out_dir, "output directory");
  sweep_cmd->add_option("-j,--workers", workers, "parallel runs (default: METAXT_WORKERS or 1)");
  sweep_cmd->allow_extras();

  std::uint64_t check_seed = 0;
  std::size_t instances = 20;
  auto* check_cmd = app.add_subcommand("check-grads", "Gradient verification suite");
  check_cmd->add_option("--seed", check_seed, "random seed");
  check_cmd->add_option("--instances", instances, "meta-gradient instances");

  auto* map_cmd = app.add_subcommand("ltn-map", "Train and report the mean LTN output per source label");
  map_cmd->add_option("-c,--config", config_path, "key = value config file");
  map_cmd->add_option("-o,--out", out_dir, "output directory");
  map_cmd->allow_extras();

  CLI11_PARSE(app, argc, argv);

  try {
    if (check_cmd->parsed()) {
      int failures = print_checks("primitive adjoints", check_primitives(check_seed));
      failures += print_checks("mixed Hessian-vector products", check_hvp(check_seed));
      MetaGradCheckOptions opts;
      opts.seed = check_seed;
      opts.instances = instances;
      failures += print_checks("meta-gradient", check_meta_gradients(opts));
      std::printf("%d failure(s)\n", failures);
      return failures == 0 ? 0 : kExitFailure;
    }

    CLI::App* active = run_cmd->parsed() ? run_cmd : sweep_cmd->parsed() ? sweep_cmd : map_cmd;
    RunConfig config;
    try {
      config = resolve_config(config_path, active->remaining());
    } catch (const std::exception& e) {
      std::cerr << "config error: " << e.what() << "\n";
      return kExitUsage;
    }
    const TaskPair pair = build_task_pair(config);

    std::vector<RunResult> results;
    if (sweep_cmd->parsed()) {
      results = sweep(config, pair, workers > 0 ? workers : workers_from_env());
    } else {
      if (map_cmd->parsed() && config.method != Method::MetaXT && config.method != Method::XT) {
        std::cerr << "ltn-map needs method metaxt or xt\n";
        return kExitUsage;
      }
      results.push_back(run(config, pair));
    }
    write_outputs(out_dir, config, results);
    if (map_cmd->parsed()) print_map(results.front(), pair);
    std::printf("outputs written to %s\n", out_dir.c_str());
    return finish(results);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFailure;
  }
}
