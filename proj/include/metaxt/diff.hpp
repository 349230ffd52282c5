#pragma once

#include <functional>

#include "metaxt/autodiff.hpp"
#include "metaxt/params.hpp"

namespace metaxt {

/// A scalar loss built on a tape from bound parameters.
using LossFn = std::function<ad::Var(ad::Tape&, const BoundParams&)>;

struct LossAndGrad {
  double loss = 0.0;
  GroupVectors grad;
};

/// Loss value and gradient for each requested group present in `at`.
LossAndGrad value_and_grad(const LossFn& loss, const FlatParams& at, GroupSet wrt);
/// Binds only `bound`; the loss must not read other groups.
LossAndGrad value_and_grad(const LossFn& loss, const FlatParams& at, GroupSet wrt, GroupSet bound);
GroupVectors grad(const LossFn& loss, const FlatParams& at, GroupSet wrt);
double evaluate(const LossFn& loss, const FlatParams& at);

/// Perturbation size for the central-difference mixed product:
/// epsilon = scale / ||direction||.
struct EpsilonRule {
  double scale = 0.01;
  [[nodiscard]] double epsilon(double direction_norm) const { return scale / direction_norm; }
};

/// Mixed second derivative d/d(out) [grad_{direction groups} L . direction],
/// by recording the first backward pass and differentiating it.
Vector hvp_exact(const LossFn& loss, const FlatParams& at, const GroupVectors& direction,
                 Group out = Group::Alpha);

/// Same quantity by central difference of grad_out L at at +/- epsilon * direction.
/// Throws std::invalid_argument on a zero direction.
Vector hvp_fd(const LossFn& loss, const FlatParams& at, const GroupVectors& direction,
              EpsilonRule rule = {}, Group out = Group::Alpha);

}  // namespace metaxt
