#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "metaxt/data.hpp"
#include "metaxt/model.hpp"
#include "metaxt/trainer.hpp"

namespace metaxt {

enum class TaskSource { Granularity, Tagset, CsvFiles, ConllFiles };

std::string_view task_source_name(TaskSource t);
TaskSource parse_task_source(std::string_view name);

/// One experiment. Every field maps to a `key = value` line; see config_keys().
struct RunConfig {
  TaskSource task = TaskSource::Granularity;
  std::uint64_t data_seed = 0;
  // Synthetic generators.
  std::size_t n_source = 4000;
  std::size_t n_target_pool = 3000;
  double noise_sigma = 1.0;
  Index input_dim = 16;
  double spacing = 1.0;
  std::size_t n_sentences = 1500;
  // File-backed pairs.
  std::filesystem::path source_path;
  std::filesystem::path target_path;
  std::uint64_t hashing_seed = 0;

  Method method = Method::MetaXT;
  std::vector<Method> methods{Method::MetaXT};
  std::size_t k = 20;
  std::vector<std::size_t> ks{20};
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  std::size_t validation_size = 0;

  double eta = 0.1;
  /// Negative means "same as eta".
  double meta_lr = -1.0;
  double gamma1 = 1.0;
  double gamma2 = 1.0;
  MetaGradMode meta_grad_mode = MetaGradMode::Exact;
  double fd_scale = 0.01;
  double clip_norm = 5.0;
  std::size_t step_budget = 2000;
  std::size_t eval_every = 50;
  std::size_t batch_size = 10;

  ModelDims dims;
  /// Number of source examples averaged per LTN map row.
  std::size_t ltn_map_samples = 500;
  /// Record wall_ms; disabled runs write 0 so result files compare byte-for-byte.
  bool record_timing = true;

  /// Throws std::invalid_argument naming the offending key.
  void validate() const;
  [[nodiscard]] TrainerConfig trainer_config() const;
  [[nodiscard]] double effective_meta_lr() const { return meta_lr < 0.0 ? eta : meta_lr; }
};

/// Sets one key from its text form; unknown keys and bad values throw.
void apply_setting(RunConfig& config, const std::string& key, const std::string& value);

/// `key = value` lines, `#` comments, blank lines ignored.
RunConfig parse_config(const std::string& text, const std::string& origin = "<string>");
RunConfig load_config(const std::filesystem::path& path);

/// `--key=value` arguments applied in order; anything else throws.
void apply_overrides(RunConfig& config, const std::vector<std::string>& args);

/// Canonical text form; parse_config(to_config_text(c)) reproduces c.
std::string to_config_text(const RunConfig& config);

std::vector<std::string> config_keys();

/// The task pair named by the config.
TaskPair build_task_pair(const RunConfig& config);

}  // namespace metaxt
