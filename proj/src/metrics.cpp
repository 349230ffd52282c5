#include "metaxt/metrics.hpp"

#include <stdexcept>
#include <string>

namespace metaxt {
namespace {

void check_lengths(std::span<const int> predictions, std::span<const int> gold) {
  if (predictions.size() != gold.size()) {
    throw std::invalid_argument("metric: length mismatch (" + std::to_string(predictions.size()) +
                                " predictions, " + std::to_string(gold.size()) + " gold)");
  }
}

}  // namespace

double accuracy(std::span<const int> predictions, std::span<const int> gold) {
  check_lengths(predictions, gold);
  if (gold.empty()) throw std::invalid_argument("accuracy: empty input");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < gold.size(); ++i) hits += predictions[i] == gold[i] ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(gold.size());
}

TagCounts tag_counts(std::span<const int> predictions, std::span<const int> gold,
                     std::optional<int> outside) {
  check_lengths(predictions, gold);
  auto tagged = [&](int t) { return !outside || t != *outside; };
  TagCounts c;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    const int p = predictions[i];
    const int g = gold[i];
    if (p == g) {
      if (tagged(g)) ++c.true_positive;
      continue;
    }
    if (tagged(p)) ++c.false_positive;
    if (tagged(g)) ++c.false_negative;
  }
  return c;
}

double f1_from_counts(const TagCounts& c) {
  const std::size_t denom = 2 * c.true_positive + c.false_positive + c.false_negative;
  if (denom == 0) return 1.0;
  return 2.0 * static_cast<double>(c.true_positive) / static_cast<double>(denom);
}

double token_f1(std::span<const int> predictions, std::span<const int> gold,
                std::optional<int> outside) {
  return f1_from_counts(tag_counts(predictions, gold, outside));
}

}  // namespace metaxt
