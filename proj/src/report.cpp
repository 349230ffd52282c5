#include "metaxt/report.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

namespace metaxt {
namespace {

std::string num(double v) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  (void)ec;
  return std::string(buf, ptr);
}

std::string short_num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e",
                          "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  out << text;
}

std::string run_tag(const RunResult& r) {
  return std::string(method_name(r.method)) + "_k" + std::to_string(r.k);
}

}  // namespace

std::string line_plot_svg(const std::string& title, const std::string& x_label,
                          const std::string& y_label, std::span<const Series> series) {
  constexpr double kW = 640, kH = 360, kLeft = 70, kRight = 170, kTop = 40, kBottom = 50;
  double x0 = INFINITY, x1 = -INFINITY, y0 = INFINITY, y1 = -INFINITY;
  std::size_t rows = 0;
  for (const Series& s : series) {
    for (const auto& [x, y] : s.points) {
      if (!std::isfinite(x) || !std::isfinite(y)) continue;
      x0 = std::min(x0, x);
      x1 = std::max(x1, x);
      y0 = std::min(y0, y);
      y1 = std::max(y1, y);
      ++rows;
    }
  }
  if (rows == 0) x0 = y0 = 0.0, x1 = y1 = 1.0;
  if (x1 == x0) x1 = x0 + 1.0;
  if (y1 == y0) y1 = y0 + 1.0;
  const double pw = kW - kLeft - kRight;
  const double ph = kH - kTop - kBottom;
  auto px = [&](double x) { return kLeft + (x - x0) / (x1 - x0) * pw; };
  auto py = [&](double y) { return kTop + (1.0 - (y - y0) / (y1 - y0)) * ph; };

  const double table_h = 20.0 + 14.0 * static_cast<double>(rows);
  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW << "\" height=\""
      << kH + table_h << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  svg << "<title>" << escape(title) << "</title>\n";
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg << "<text x=\"" << kW / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">"
      << escape(title) << "</text>\n";
  svg << "<rect x=\"" << kLeft << "\" y=\"" << kTop << "\" width=\"" << pw << "\" height=\"" << ph
      << "\" fill=\"none\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double fx = x0 + (x1 - x0) * i / 4.0;
    const double fy = y0 + (y1 - y0) * i / 4.0;
    svg << "<text x=\"" << px(fx) << "\" y=\"" << kTop + ph + 15 << "\" text-anchor=\"middle\">"
        << short_num(fx) << "</text>\n";
    svg << "<text x=\"" << kLeft - 6 << "\" y=\"" << py(fy) + 4 << "\" text-anchor=\"end\">"
        << short_num(fy) << "</text>\n";
  }
  svg << "<text x=\"" << kLeft + pw / 2 << "\" y=\"" << kH - 12 << "\" text-anchor=\"middle\">"
      << escape(x_label) << "</text>\n";
  svg << "<text transform=\"translate(16," << kTop + ph / 2 << ") rotate(-90)\" text-anchor=\"middle\">"
      << escape(y_label) << "</text>\n";
  for (std::size_t i = 0; i < series.size(); ++i) {
    const char* colour = kPalette[i % std::size(kPalette)];
    svg << "<polyline fill=\"none\" stroke=\"" << colour << "\" stroke-width=\"1.5\" points=\"";
    for (const auto& [x, y] : series[i].points) {
      if (std::isfinite(x) && std::isfinite(y)) svg << px(x) << ',' << py(y) << ' ';
    }
    svg << "\"/>\n";
    const double ly = kTop + 14.0 * static_cast<double>(i) + 8;
    svg << "<line x1=\"" << kW - kRight + 10 << "\" y1=\"" << ly << "\" x2=\"" << kW - kRight + 26
        << "\" y2=\"" << ly << "\" stroke=\"" << colour << "\" stroke-width=\"2\"/>\n";
    svg << "<text x=\"" << kW - kRight + 30 << "\" y=\"" << ly + 4 << "\">" << escape(series[i].name)
        << "</text>\n";
  }
  svg << "<g class=\"data-table\">\n";
  double ty = kH + 14;
  svg << "<text x=\"" << kLeft << "\" y=\"" << ty << "\" font-weight=\"bold\">series, "
      << escape(x_label) << ", " << escape(y_label) << "</text>\n";
  for (const Series& s : series) {
    for (const auto& [x, y] : s.points) {
      if (!std::isfinite(x) || !std::isfinite(y)) continue;
      ty += 14;
      svg << "<text x=\"" << kLeft << "\" y=\"" << ty << "\">" << escape(s.name) << ", " << num(x)
          << ", " << num(y) << "</text>\n";
    }
  }
  svg << "</g>\n</svg>\n";
  return svg.str();
}

std::string heatmap_svg(const std::string& title, const std::vector<std::string>& row_labels,
                        const std::vector<std::string>& col_labels, const Matrix& values) {
  constexpr double kCell = 56, kLeft = 110, kTop = 60;
  const double w = kLeft + kCell * static_cast<double>(values.cols()) + 20;
  const double h = kTop + kCell * static_cast<double>(values.rows()) + 20;
  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h
      << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  svg << "<title>" << escape(title) << "</title>\n";
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg << "<text x=\"10\" y=\"20\" font-size=\"14\">" << escape(title) << "</text>\n";
  for (Index c = 0; c < values.cols(); ++c) {
    const std::string label = static_cast<std::size_t>(c) < col_labels.size()
                                  ? col_labels[static_cast<std::size_t>(c)]
                                  : std::to_string(c);
    svg << "<text x=\"" << kLeft + kCell * (static_cast<double>(c) + 0.5) << "\" y=\"" << kTop - 8
        << "\" text-anchor=\"middle\">" << escape(label) << "</text>\n";
  }
  for (Index r = 0; r < values.rows(); ++r) {
    const std::string label = static_cast<std::size_t>(r) < row_labels.size()
                                  ? row_labels[static_cast<std::size_t>(r)]
                                  : std::to_string(r);
    const double y = kTop + kCell * static_cast<double>(r);
    svg << "<text x=\"" << kLeft - 8 << "\" y=\"" << y + kCell / 2 + 4 << "\" text-anchor=\"end\">"
        << escape(label) << "</text>\n";
    for (Index c = 0; c < values.cols(); ++c) {
      const double v = std::clamp(values(r, c), 0.0, 1.0);
      const int shade = static_cast<int>(std::lround(255.0 * (1.0 - v)));
      const double x = kLeft + kCell * static_cast<double>(c);
      svg << "<rect x=\"" << x << "\" y=\"" << y << "\" width=\"" << kCell << "\" height=\"" << kCell
          << "\" fill=\"rgb(" << shade << ',' << shade << ",255)\" stroke=\"white\"/>\n";
      svg << "<text x=\"" << x + kCell / 2 << "\" y=\"" << y + kCell / 2 + 4
          << "\" text-anchor=\"middle\" fill=\"" << (v > 0.5 ? "white" : "black") << "\">"
          << num(values(r, c)) << "</text>\n";
    }
  }
  svg << "</svg>\n";
  return svg.str();
}

std::optional<Matrix> mean_ltn_map(const RunResult& result) {
  std::optional<Matrix> sum;
  std::size_t n = 0;
  for (const SeedResult& s : result.seeds) {
    if (!s.ok || !s.ltn_map) continue;
    if (sum) {
      *sum += *s.ltn_map;
    } else {
      sum = *s.ltn_map;
    }
    ++n;
  }
  if (sum) *sum /= static_cast<double>(n);
  return sum;
}

std::string summary_json(const RunConfig& config, std::span<const RunResult> results) {
  using nlohmann::json;
  auto matrix_json = [](const Matrix& m) {
    json rows = json::array();
    for (Index r = 0; r < m.rows(); ++r) {
      json row = json::array();
      for (Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
      rows.push_back(row);
    }
    return rows;
  };
  json doc;
  doc["config"] = to_config_text(config);
  doc["runs"] = json::array();
  for (const RunResult& r : results) {
    json run;
    run["method"] = method_name(r.method);
    run["k"] = r.k;
    run["metric_name"] = r.metric_name;
    run["mean"] = r.summary.mean;
    run["std"] = r.summary.stddev;
    run["successful_seeds"] = r.summary.count;
    run["partial"] = r.partial;
    run["source_labels"] = r.source_labels;
    run["target_labels"] = r.target_labels;
    run["seeds"] = json::array();
    for (const SeedResult& s : r.seeds) {
      json seed;
      seed["seed"] = s.seed;
      seed["ok"] = s.ok;
      if (!s.ok) seed["error"] = s.error;
      seed["metric_value"] = s.test_metric;
      seed["best_validation"] = s.best_validation;
      seed["steps_to_best"] = s.steps_to_best;
      seed["wall_ms"] = s.wall_ms;
      if (s.ltn_map) seed["ltn_map"] = matrix_json(*s.ltn_map);
      run["seeds"].push_back(seed);
    }
    if (const auto m = mean_ltn_map(r)) run["ltn_map_mean"] = matrix_json(*m);
    doc["runs"].push_back(run);
  }
  return doc.dump(2) + "\n";
}

std::string curves_csv(std::span<const RunResult> results) {
  std::string out =
      "method,k,seed,step,total,target_term,source_term,transfer_term,meta_loss,meta_grad_norm\n";
  for (const RunResult& r : results) {
    for (const SeedResult& s : r.seeds) {
      for (const StepRecord& rec : s.curve) {
        out += std::string(method_name(r.method)) + "," + std::to_string(r.k) + "," +
               std::to_string(s.seed) + "," + std::to_string(rec.step) + "," + num(rec.train.total) +
               "," + num(rec.train.target_term) + "," + num(rec.train.source_term) + "," +
               num(rec.train.transfer_term) + "," + num(rec.meta_loss) + "," +
               num(rec.meta_grad_norm) + "\n";
      }
    }
  }
  return out;
}

std::string ltn_map_csv(std::span<const RunResult> results) {
  std::string out = "method,k,seed,source_label";
  if (!results.empty()) {
    for (const auto& t : results.front().target_labels) out += "," + t;
  }
  out += "\n";
  auto rows = [&](const RunResult& r, const std::string& seed, const Matrix& m) {
    for (Index i = 0; i < m.rows(); ++i) {
      out += std::string(method_name(r.method)) + "," + std::to_string(r.k) + "," + seed + "," +
             r.source_labels.at(static_cast<std::size_t>(i));
      for (Index j = 0; j < m.cols(); ++j) out += "," + num(m(i, j));
      out += "\n";
    }
  };
  for (const RunResult& r : results) {
    for (const SeedResult& s : r.seeds) {
      if (s.ok && s.ltn_map) rows(r, std::to_string(s.seed), *s.ltn_map);
    }
    if (const auto m = mean_ltn_map(r)) rows(r, "mean", *m);
  }
  return out;
}

void write_outputs(const std::filesystem::path& dir, const RunConfig& config,
                   std::span<const RunResult> results) {
  std::filesystem::create_directories(dir);
  write_file(dir / "results.csv", results_csv(results));
  write_file(dir / "summary.json", summary_json(config, results));
  write_file(dir / "curves.csv", curves_csv(results));
  write_file(dir / "config.txt", to_config_text(config));
  if (!results.empty()) {
    std::string src;
    for (const auto& l : results.front().source_labels) src += l + "\n";
    std::string tgt;
    for (const auto& l : results.front().target_labels) tgt += l + "\n";
    write_file(dir / "labels_source.txt", src);
    write_file(dir / "labels_target.txt", tgt);
  }
  bool any_map = false;
  for (const RunResult& r : results) {
    std::vector<Series> curves;
    for (const SeedResult& s : r.seeds) {
      Series series{"seed " + std::to_string(s.seed), {}};
      for (const auto& [step, value] : s.validation_curve) {
        series.points.emplace_back(static_cast<double>(step), value);
      }
      curves.push_back(std::move(series));
    }
    write_file(dir / ("validation_" + run_tag(r) + ".svg"),
               line_plot_svg(std::string(method_name(r.method)) + " k=" + std::to_string(r.k) +
                                 " validation " + r.metric_name,
                             "step", r.metric_name, curves));
    if (const auto m = mean_ltn_map(r)) {
      any_map = true;
      write_file(dir / ("ltn_map_" + run_tag(r) + ".svg"),
                 heatmap_svg("Mean LTN output given source label, " + std::string(method_name(r.method)) +
                                 " k=" + std::to_string(r.k),
                             r.source_labels, r.target_labels, *m));
    }
  }
  if (any_map) write_file(dir / "ltn_map.csv", ltn_map_csv(results));

  std::vector<Series> by_method;
  for (const RunResult& r : results) {
    auto it = std::find_if(by_method.begin(), by_method.end(),
                           [&](const Series& s) { return s.name == method_name(r.method); });
    if (it == by_method.end()) {
      by_method.push_back({std::string(method_name(r.method)), {}});
      it = by_method.end() - 1;
    }
    it->points.emplace_back(static_cast<double>(r.k), r.summary.mean);
  }
  for (Series& s : by_method) std::sort(s.points.begin(), s.points.end());
  const std::string metric = results.empty() ? "metric" : results.front().metric_name;
  write_file(dir / "test_metric_by_k.svg",
             line_plot_svg("Mean test " + metric + " by k", "k", metric, by_method));
}

}  // namespace metaxt
