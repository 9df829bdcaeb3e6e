#pragma once

#include "latfim/types.hpp"

#include <functional>
#include <vector>

namespace latfim {

struct OptimOptions {
  // Stop when ||grad f(theta)|| < gradient_tol * (1 + |f(theta)|), natural coordinates.
  double gradient_tol = 1e-6;
  int max_iterations = 500;
};

struct OptimResult {
  Vec theta;
  double value = 0.0;
  double gradient_norm = 0.0;
  int iterations = 0;
  bool converged = false;
};

// Maximizes `value` over the box implied by `kinds` with BFGS in unconstrained
// coordinates (log for positive/variance, logit for proportion). `value` may
// return -inf or NaN outside the feasible set; such trial points are rejected
// by the line search. `gradient` is with respect to the natural parameters.
OptimResult maximize_bounded(const std::function<double(const Vec&)>& value,
                             const std::function<Vec(const Vec&)>& gradient, const Vec& theta0,
                             const std::vector<ParamKind>& kinds, const OptimOptions& options = {});

}  // namespace latfim
