#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "metaxt/params.hpp"

namespace metaxt {

enum class TaskKind { SequenceClassification, TokenTagging };

/// Malformed input file; carries the 1-based line number.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& path, std::size_t line, const std::string& what);
  [[nodiscard]] std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

/// Ordered label vocabulary. Source and target spaces are always distinct objects.
class LabelSpace {
 public:
  LabelSpace() = default;
  explicit LabelSpace(std::vector<std::string> names);

  [[nodiscard]] std::size_t size() const { return names_.size(); }
  [[nodiscard]] const std::string& name(int id) const { return names_.at(static_cast<std::size_t>(id)); }
  [[nodiscard]] const std::vector<std::string>& names() const { return names_; }
  [[nodiscard]] std::optional<int> find(std::string_view name) const;
  /// Existing id, or a new one appended in first-appearance order.
  int intern(const std::string& name);

  friend bool operator==(const LabelSpace&, const LabelSpace&) = default;

 private:
  std::vector<std::string> names_;
};

using LabelSpacePtr = std::shared_ptr<const LabelSpace>;

/// One labeled instance: one feature row per prediction unit.
struct Example {
  Matrix features;
  std::vector<int> labels;
  /// Optional soft labels, one row per unit; overrides `labels` in losses.
  std::optional<Matrix> soft_labels;
  /// Surface tokens for tagging data loaded from text.
  std::vector<std::string> tokens;
  /// Stable id within the originating pool.
  std::size_t id = 0;

  [[nodiscard]] Index units() const { return features.rows(); }
};

struct Dataset {
  std::vector<Example> examples;
  LabelSpacePtr labels;
  TaskKind kind = TaskKind::SequenceClassification;
  Index input_dim = 0;

  [[nodiscard]] std::size_t size() const { return examples.size(); }
  [[nodiscard]] std::size_t num_classes() const { return labels ? labels->size() : 0; }
};

struct TaskPair {
  Dataset source;
  Dataset target;
  TaskKind kind = TaskKind::SequenceClassification;
  /// Ground-truth P(y_t | y_s) for synthetic pairs (source rows, target columns).
  std::optional<Matrix> oracle_map;
  /// Target tag -> source tag, for refinement pairs.
  std::vector<int> coarsening;

  /// Label spaces distinct objects with distinct name sets.
  void validate() const;
};

struct SplitSet {
  std::vector<Example> train_k;
  std::vector<Example> validation;
  std::vector<Example> test;
  std::vector<Example> source_train;
};

// Synthetic pairs --------------------------------------------------------

struct GranularityOptions {
  std::uint64_t seed = 0;
  std::size_t n_source = 4000;
  std::size_t n_target_pool = 3000;
  double noise_sigma = 1.0;
  Index input_dim = 16;
  /// Distance between adjacent cluster centres along the sentiment axis.
  double spacing = 1.0;
};

/// Five clusters along a random axis, target labels "1".."5"; source examples
/// come from clusters {1,2} ("negative") and {4,5} ("positive").
TaskPair gen_granularity_pair(const GranularityOptions& opts);

struct TagsetOptions {
  std::uint64_t seed = 0;
  std::size_t n_sentences = 1500;
  /// 0 means "same as n_sentences".
  std::size_t n_target_pool = 0;
  /// refinement[s] lists the fine tags refining coarse tag s.
  std::vector<std::vector<int>> refinement;
  std::vector<std::string> coarse_names;
  std::vector<std::string> fine_names;
  double noise_sigma = 1.0;
  Index input_dim = 16;
  /// Spread of fine-tag centres around their coarse centre.
  double fine_spread = 0.6;
  /// Spread of coarse-tag centres.
  double coarse_spread = 2.0;
  std::size_t min_len = 5;
  std::size_t max_len = 15;
  /// Probability mass of coarse tag 0 (typically "O"); the rest is uniform.
  double outside_prob = 0.4;
};

/// Default 3-coarse -> 7-fine refinement: O -> {O}, PER -> {B-PER, I-PER, PERderiv},
/// LOC -> {B-LOC, I-LOC, LOCpart}.
TagsetOptions default_tagset_options();

TaskPair gen_tagset_pair(const TagsetOptions& opts);

// File loaders -----------------------------------------------------------

/// `label,f1,...,fD` with a header row.
Dataset load_csv_classification(const std::filesystem::path& path);
/// Same, but labels must already exist in `frozen`.
Dataset load_csv_classification(const std::filesystem::path& path, const LabelSpace& frozen);
void write_csv_classification(const Dataset& data, const std::filesystem::path& path);

struct HashingOptions {
  Index input_dim = 64;
  std::uint64_t seed = 0;
};

/// `token<TAB>tag` lines, blank-line sentence separator, `#` comments.
Dataset load_conll_tagging(const std::filesystem::path& path, const HashingOptions& hashing = {});
Dataset load_conll_tagging(const std::filesystem::path& path, const HashingOptions& hashing,
                           const LabelSpace& frozen);

/// Seeded feature hashing of a surface token, l2-normalised.
Vector hash_token(std::string_view token, const HashingOptions& hashing);

// Splits -------------------------------------------------------------------

struct SplitOptions {
  std::size_t k = 20;
  std::uint64_t seed = 0;
  /// 0 means validation size equals k.
  std::size_t validation_size = 0;
  std::size_t max_tokens_classification = 128;
  std::size_t max_tokens_tagging = 64;
};

SplitSet sample_splits(const TaskPair& pair, const SplitOptions& opts);

/// Per-class quotas for a balanced draw of n over c classes; remainder to lowest ids.
std::vector<std::size_t> balanced_quota(std::size_t n, std::size_t num_classes);

/// Stable 64-bit FNV-1a hash.
std::uint64_t fnv1a(std::string_view s, std::uint64_t seed = 0);

}  // namespace metaxt
