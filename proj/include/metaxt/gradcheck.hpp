#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "metaxt/losses.hpp"
#include "metaxt/model.hpp"
#include "metaxt/params.hpp"
#include "metaxt/trainer.hpp"

namespace metaxt {

struct CheckResult {
  std::string name;
  /// Worst observed error in units of the tolerance's scale (pass iff <= tolerance).
  double max_error = 0.0;
  double tolerance = 0.0;
  bool passed = false;
};

/// |a - b| <= max(rel * max(|a|, |b|), abs_floor).
bool close_relative(double a, double b, double rel, double abs_floor);
/// |a - b| / max(|a|, |b|, abs_floor / rel); at most rel iff close_relative holds.
double relative_gap(double a, double b, double rel, double abs_floor);
/// Worst coordinate of relative_gap.
double max_relative_gap(const Vector& a, const Vector& b, double rel, double abs_floor);

/// Central difference of f at x with a fixed step.
Vector central_difference(const std::function<double(const Vector&)>& f, const Vector& x,
                          double step);

/// First- and second-order adjoint checks for every primitive on random
/// inputs in [-2, 2] (shifted away from kinks and poles where needed).
std::vector<CheckResult> check_primitives(std::uint64_t seed, double step = 1e-5,
                                          double tolerance = 1e-6);

/// hvp_exact against hvp_fd and against a coordinate difference of the
/// directional gradient, on a random two-layer network.
std::vector<CheckResult> check_hvp(std::uint64_t seed);

/// A model of at most 200 parameters with one random batch.
struct TinyInstance {
  ModelSpec spec;
  FlatParams params;
  BatchTriple batch;
  Gammas gammas;
  double eta = 0.5;
  bool use_rtn = false;
};

TinyInstance make_tiny_instance(std::uint64_t seed);

struct MetaGradCheckOptions {
  std::size_t instances = 20;
  std::uint64_t seed = 0;
  double step = 1e-5;
  double rel_tol = 1e-3;
  double abs_floor = 1e-8;
  double fd_mode_tol = 1e-2;
};

/// Two results per instance: exact mode against a coordinate difference of
/// the one-step proxy objective, and fd mode against exact mode (norm-wise).
std::vector<CheckResult> check_meta_gradients(const MetaGradCheckOptions& opts);

}  // namespace metaxt
