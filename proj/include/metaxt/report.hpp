#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "metaxt/config.hpp"
#include "metaxt/experiment.hpp"

namespace metaxt {

struct Series {
  std::string name;
  std::vector<std::pair<double, double>> points;
};

/// Standalone SVG line chart; the plotted values are repeated as a text table.
std::string line_plot_svg(const std::string& title, const std::string& x_label,
                          const std::string& y_label, std::span<const Series> series);

/// Standalone SVG heat map of a row-stochastic matrix, values printed in cells.
std::string heatmap_svg(const std::string& title, const std::vector<std::string>& row_labels,
                        const std::vector<std::string>& col_labels, const Matrix& values);

std::string summary_json(const RunConfig& config, std::span<const RunResult> results);
/// `method,k,seed,step,total,target_term,source_term,transfer_term,meta_loss,meta_grad_norm`.
std::string curves_csv(std::span<const RunResult> results);
/// Per-seed and mean LTN maps, one row per (method, k, seed, source label).
std::string ltn_map_csv(std::span<const RunResult> results);

/// Writes results.csv, summary.json, curves.csv, config.txt, the label
/// vocabularies, ltn_map.csv and SVG plots into `dir`.
void write_outputs(const std::filesystem::path& dir, const RunConfig& config,
                   std::span<const RunResult> results);

/// Row-wise mean of the per-seed LTN maps of successful seeds.
std::optional<Matrix> mean_ltn_map(const RunResult& result);

}  // namespace metaxt
