#pragma once

#include <functional>

#include "hfpdot/core.hpp"

namespace hfpdot {

/// Unnormalized log-density over m x n transport plans.
///
/// `evaluate` receives the row-major flattened plan (strictly interior) and
/// writes the coordinate gradient w.r.t. all m * n entries, treating them as
/// independent; the sampler composes it with the chart. Implementations
/// must be safe to call concurrently.
struct PlanLogDensity {
  Index rows = 0;
  Index cols = 0;
  std::function<double(const Eigen::Ref<const Vector>& flat_plan, Eigen::Ref<Vector> gradient)> evaluate;
};

}  // namespace hfpdot
