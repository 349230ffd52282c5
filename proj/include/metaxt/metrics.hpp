#pragma once

#include <optional>
#include <span>

namespace metaxt {

/// Fraction of positions where prediction equals gold.
double accuracy(std::span<const int> predictions, std::span<const int> gold);

struct TagCounts {
  std::size_t true_positive = 0;
  std::size_t false_positive = 0;
  std::size_t false_negative = 0;
};

/// Confusion counts over tags other than `outside`. A wrong non-outside
/// prediction of a non-outside gold tag counts once on each side.
TagCounts tag_counts(std::span<const int> predictions, std::span<const int> gold,
                     std::optional<int> outside);

/// Micro-averaged token F1 over non-outside tags. 1.0 when neither side has any tag.
double token_f1(std::span<const int> predictions, std::span<const int> gold,
                std::optional<int> outside);
double f1_from_counts(const TagCounts& c);

}  // namespace metaxt
