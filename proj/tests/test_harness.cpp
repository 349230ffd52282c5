#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "metaxt/config.hpp"
#include "metaxt/experiment.hpp"
#include "metaxt/metrics.hpp"
#include "metaxt/report.hpp"

using namespace metaxt;

namespace {

RunConfig small_config() {
  RunConfig c;
  c.n_source = 1000;
  c.n_target_pool = 400;
  c.input_dim = 6;
  c.noise_sigma = 0.8;
  c.dims.hidden_dims = {16};
  c.dims.h_dim = 8;
  c.dims.z_dim = 4;
  c.step_budget = 60;
  c.eval_every = 20;
  c.seeds = {0, 1};
  c.ltn_map_samples = 200;
  c.record_timing = false;
  return c;
}

std::vector<std::string> lines(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

std::vector<std::string> fields(const std::string& line) {
  std::vector<std::string> out;
  std::istringstream in(line);
  for (std::string f; std::getline(in, f, ',');) out.push_back(f);
  return out;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST(Metrics, Accuracy) {
  const std::vector<int> p{0, 1, 2, 2}, g{0, 1, 1, 2};
  EXPECT_DOUBLE_EQ(accuracy(p, g), 0.75);
  EXPECT_THROW(accuracy(p, std::vector<int>{0}), std::invalid_argument);
  EXPECT_THROW(accuracy(std::vector<int>{}, std::vector<int>{}), std::invalid_argument);
}

TEST(Metrics, TokenF1Fixture) {
  // 3 TP, 1 FP (O tagged as 2), 2 FN (2 predicted as O).
  const std::vector<int> gold{1, 1, 1, 2, 2, 0};
  const std::vector<int> pred{1, 1, 1, 0, 0, 2};
  const TagCounts c = tag_counts(pred, gold, 0);
  EXPECT_EQ(c.true_positive, 3U);
  EXPECT_EQ(c.false_positive, 1U);
  EXPECT_EQ(c.false_negative, 2U);
  EXPECT_NEAR(token_f1(pred, gold, 0), 0.6667, 5e-5);
  EXPECT_NEAR(token_f1(pred, gold, 0), 6.0 / 9.0, 1e-15);
}

TEST(Metrics, WrongTagCountsBothSides) {
  const std::vector<int> gold{1, 2}, pred{2, 2};
  const TagCounts c = tag_counts(pred, gold, 0);
  EXPECT_EQ(c.true_positive, 1U);
  EXPECT_EQ(c.false_positive, 1U);
  EXPECT_EQ(c.false_negative, 1U);
}

TEST(Metrics, AllOutsideIsPerfect) {
  const std::vector<int> o{0, 0, 0};
  EXPECT_EQ(token_f1(o, o, 0), 1.0);
  EXPECT_EQ(token_f1(std::vector<int>{1, 0, 0}, o, 0), 0.0);
}

TEST(Metrics, NoOutsideLabelCountsEveryToken) {
  const std::vector<int> gold{0, 1}, pred{0, 0};
  const TagCounts c = tag_counts(pred, gold, std::nullopt);
  EXPECT_EQ(c.true_positive, 1U);
  EXPECT_EQ(c.false_positive, 1U);
  EXPECT_EQ(c.false_negative, 1U);
}

TEST(Config, ParseAndRoundTrip) {
  const RunConfig c = parse_config(
      "# experiment\n"
      "task = tagset\n"
      "methods = metaxt, xt,multitask\n"
      "ks = 20,100\n"
      "seeds = 3,4\n"
      "eta = 0.05   # inline comment\n"
      "hidden_dims = 32,16\n"
      "use_rtn = true\n"
      "meta_grad_mode = fd\n");
  EXPECT_EQ(c.task, TaskSource::Tagset);
  EXPECT_EQ(c.methods, (std::vector<Method>{Method::MetaXT, Method::XT, Method::MultiTask}));
  EXPECT_EQ(c.ks, (std::vector<std::size_t>{20, 100}));
  EXPECT_EQ(c.seeds, (std::vector<std::uint64_t>{3, 4}));
  EXPECT_DOUBLE_EQ(c.eta, 0.05);
  EXPECT_EQ(c.dims.hidden_dims, (std::vector<Index>{32, 16}));
  EXPECT_TRUE(c.dims.use_rtn);
  EXPECT_EQ(c.meta_grad_mode, MetaGradMode::FiniteDifference);
  EXPECT_DOUBLE_EQ(c.effective_meta_lr(), 0.05);

  const std::string text = to_config_text(c);
  EXPECT_EQ(to_config_text(parse_config(text)), text);
  EXPECT_EQ(lines(text).size(), config_keys().size());
}

TEST(Config, ErrorsCarryLineNumbers) {
  try {
    parse_config("eta = 0.1\n\nbogus = 3\n");
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 3U);
    EXPECT_NE(std::string(e.what()).find("bogus"), std::string::npos);
  }
  try {
    parse_config("k = twenty\n");
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 1U);
  }
  EXPECT_THROW(parse_config("eta 0.1\n"), ParseError);
  EXPECT_THROW(parse_config("method = sgd\n"), ParseError);
}

TEST(Config, OverridesAndValidation) {
  RunConfig c;
  apply_overrides(c, {"--k=100", "--gamma2=0", "--meta_lr=0.5"});
  EXPECT_EQ(c.k, 100U);
  EXPECT_EQ(c.gamma2, 0.0);
  EXPECT_EQ(c.trainer_config().meta_lr, 0.5);
  EXPECT_THROW(apply_overrides(c, {"k=3"}), std::invalid_argument);
  EXPECT_THROW(apply_overrides(c, {"--nope=1"}), std::invalid_argument);
  c.eta = 0.0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  RunConfig files;
  files.task = TaskSource::CsvFiles;
  EXPECT_THROW(files.validate(), std::invalid_argument);
}

TEST(Results, CsvSchemaAndAggregate) {
  RunConfig c = small_config();
  c.method = Method::TargetOnly;
  const RunResult r = run(c);
  const std::vector<RunResult> all{r};
  const auto rows = lines(results_csv(all));
  ASSERT_EQ(rows.size(), 4U);
  EXPECT_EQ(rows[0], "method,k,seed,metric_name,metric_value,steps_to_best,wall_ms");
  double sum = 0.0;
  for (std::size_t i = 1; i <= 2; ++i) {
    const auto f = fields(rows[i]);
    ASSERT_EQ(f.size(), 7U);
    EXPECT_EQ(f[0], "target_only");
    EXPECT_EQ(f[1], "20");
    EXPECT_EQ(f[3], "accuracy");
    EXPECT_EQ(f[6], "0");
    sum += std::stod(f[4]);
  }
  const auto mean = fields(rows[3]);
  EXPECT_EQ(mean[2], "mean");
  EXPECT_NEAR(std::stod(mean[4]), sum / 2.0, 1e-12);
  EXPECT_NEAR(r.summary.mean, sum / 2.0, 1e-12);
  const double spread = std::abs(r.seeds[0].test_metric - r.seeds[1].test_metric);
  EXPECT_NEAR(r.summary.stddev, spread / std::sqrt(2.0), 1e-12);
}

TEST(Results, AggregateStatistics) {
  const std::vector<double> v{1.0, 2.0, 4.0};
  const Aggregate a = aggregate(v);
  EXPECT_DOUBLE_EQ(a.mean, 7.0 / 3.0);
  EXPECT_NEAR(a.stddev, std::sqrt(((1 - 7.0 / 3) * (1 - 7.0 / 3) + (2 - 7.0 / 3) * (2 - 7.0 / 3) +
                                   (4 - 7.0 / 3) * (4 - 7.0 / 3)) / 2.0), 1e-15);
  EXPECT_EQ(aggregate(std::vector<double>{5.0}).stddev, 0.0);
  EXPECT_TRUE(std::isnan(aggregate(std::vector<double>{}).mean));
}

TEST(Runs, UntrainedTargetOnlyIsNearChance) {
  RunConfig c = small_config();
  c.method = Method::TargetOnly;
  c.step_budget = 0;
  c.seeds = {0, 1, 2, 3, 4, 5, 6, 7};
  const RunResult r = run(c);
  EXPECT_GT(r.summary.mean, 0.1);
  EXPECT_LT(r.summary.mean, 0.3);
  for (const SeedResult& s : r.seeds) EXPECT_EQ(s.steps_to_best, 0U);
}

TEST(Runs, DeterministicAcrossRepeatsAndWorkers) {
  RunConfig c = small_config();
  c.methods = {Method::MetaXT, Method::TargetOnly};
  c.step_budget = 20;
  const TaskPair pair = build_task_pair(c);
  const auto a = sweep(c, pair, 1);
  const auto b = sweep(c, pair, 2);
  EXPECT_EQ(results_csv(a), results_csv(b));
  EXPECT_EQ(curves_csv(a), curves_csv(b));
  EXPECT_TRUE(a[0].seeds[1].params == b[0].seeds[1].params);
}

TEST(Runs, FailuresAreRecordedNotThrown) {
  RunConfig c = small_config();
  c.method = Method::TargetOnly;
  c.k = 300;
  c.n_target_pool = 50;
  const RunResult r = run(c);
  EXPECT_TRUE(r.partial);
  for (const SeedResult& s : r.seeds) {
    EXPECT_FALSE(s.ok);
    EXPECT_FALSE(s.error.empty());
  }
  const std::vector<RunResult> all{r};
  EXPECT_NE(results_csv(all).find("nan"), std::string::npos);
}

TEST(Runs, MetaXtSolvesNoiselessPair) {
  RunConfig c = small_config();
  c.noise_sigma = 0.0;
  c.step_budget = 300;
  c.eval_every = 50;
  c.seeds = {0};
  const RunResult r = run(c);
  ASSERT_TRUE(r.seeds[0].ok) << r.seeds[0].error;
  EXPECT_GE(r.seeds[0].test_metric, 0.95);

  const Matrix& m = *r.seeds[0].ltn_map;
  ASSERT_EQ(m.rows(), 2);
  ASSERT_EQ(m.cols(), 5);
  for (Index i = 0; i < 2; ++i) EXPECT_NEAR(m.row(i).sum(), 1.0, 1e-12);
  std::vector<Index> order{0, 1, 2, 3, 4};
  std::sort(order.begin(), order.end(), [&](Index a, Index b) { return m(0, a) > m(0, b); });
  const std::set<Index> top2{order[0], order[1]};
  EXPECT_EQ(top2, (std::set<Index>{0, 1}));
}

TEST(LtnMap, UntrainedMapIsNearUniform) {
  RunConfig c = small_config();
  const TaskPair pair = build_task_pair(c);
  const ModelSpec spec = model_spec_for(c, pair);
  std::mt19937_64 rng(3);
  const FlatParams p = init_params(spec, rng);
  const Matrix m = ltn_map_report(p, spec, pair.source.examples, 300, rng);
  for (Index i = 0; i < m.rows(); ++i) {
    EXPECT_NEAR(m.row(i).sum(), 1.0, 1e-12);
    for (Index j = 0; j < m.cols(); ++j) EXPECT_NEAR(m(i, j), 0.2, 0.05);
  }
}

TEST(LtnMap, MissingLabelFallsBackToForcedLabels) {
  RunConfig c = small_config();
  const TaskPair pair = build_task_pair(c);
  const ModelSpec spec = model_spec_for(c, pair);
  std::mt19937_64 rng(4);
  const FlatParams p = init_params(spec, rng);
  std::vector<Example> negatives;
  for (const Example& ex : pair.source.examples) {
    if (ex.labels[0] == 0) negatives.push_back(ex);
  }
  const Matrix m = ltn_map_report(p, spec, negatives, 50, rng);
  EXPECT_NEAR(m.row(1).sum(), 1.0, 1e-12);
  EXPECT_THROW(ltn_map_report(p, spec, std::vector<Example>{}, 10, rng), std::invalid_argument);
}

TEST(Outputs, FilesAndFormats) {
  RunConfig c = small_config();
  c.methods = {Method::MetaXT, Method::TargetOnly};
  c.ks = {20, 40};
  c.step_budget = 20;
  c.seeds = {0};
  const auto results = sweep(c, 1);
  const auto dir = std::filesystem::temp_directory_path() / "metaxt_test_outputs";
  std::filesystem::remove_all(dir);
  write_outputs(dir, c, results);
  for (const char* name : {"results.csv", "summary.json", "curves.csv", "config.txt", "labels_source.txt",
                           "labels_target.txt", "ltn_map.csv", "test_metric_by_k.svg",
                           "validation_metaxt_k20.svg", "validation_target_only_k40.svg"}) {
    EXPECT_TRUE(std::filesystem::exists(dir / name)) << name;
  }
  const auto doc = nlohmann::json::parse(slurp(dir / "summary.json"));
  ASSERT_EQ(doc["runs"].size(), 4U);
  EXPECT_EQ(doc["runs"][0]["method"], "metaxt");
  EXPECT_TRUE(doc["runs"][0].contains("ltn_map_mean"));
  EXPECT_FALSE(doc["runs"][2].contains("ltn_map_mean"));
  EXPECT_DOUBLE_EQ(doc["runs"][1]["mean"].get<double>(), results[1].summary.mean);

  const std::string svg = slurp(dir / "test_metric_by_k.svg");
  EXPECT_EQ(svg.rfind("<svg", 0), 0U);
  EXPECT_NE(svg.find("data-table"), std::string::npos);
  EXPECT_NE(svg.find("</svg>"), std::string::npos);
  EXPECT_EQ(parse_config(slurp(dir / "config.txt")).ks, c.ks);
  EXPECT_EQ(slurp(dir / "results.csv"), results_csv(results));
}

TEST(Outputs, HeatmapPrintsValues) {
  Matrix m(2, 2);
  m << 0.25, 0.75, 1.0, 0.0;
  const std::string svg = heatmap_svg("map", {"a", "b"}, {"x", "y"}, m);
  EXPECT_NE(svg.find("0.75"), std::string::npos);
  EXPECT_NE(svg.find(">a<"), std::string::npos);
}

TEST(Workers, EnvironmentParsing) {
  ::setenv("METAXT_WORKERS", "3", 1);
  EXPECT_EQ(workers_from_env(), 3U);
  ::setenv("METAXT_WORKERS", "zero", 1);
  EXPECT_THROW(workers_from_env(), std::invalid_argument);
  ::unsetenv("METAXT_WORKERS");
  EXPECT_EQ(workers_from_env(), 1U);
}
