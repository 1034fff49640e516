#include "hfpdot/quadrature.hpp"

#include <gsl/gsl_integration.h>

#include <memory>

#include "hfpdot/errors.hpp"

namespace hfpdot {

GaussLegendre::GaussLegendre(std::size_t order) {
  if (order < 1) throw ParameterError("GaussLegendre: order must be positive");
  std::unique_ptr<gsl_integration_glfixed_table, decltype(&gsl_integration_glfixed_table_free)> table(
      gsl_integration_glfixed_table_alloc(order), &gsl_integration_glfixed_table_free);
  if (!table) throw ParameterError("GaussLegendre: could not build the node table");
  reference_x_.resize(order);
  reference_w_.resize(order);
  for (std::size_t i = 0; i < order; ++i) {
    gsl_integration_glfixed_point(-1.0, 1.0, i, &reference_x_[i], &reference_w_[i], table.get());
  }
}

std::vector<GaussLegendre::Node> GaussLegendre::nodes(double a, double b) const {
  const double half = 0.5 * (b - a);
  const double mid = 0.5 * (a + b);
  std::vector<Node> out(reference_x_.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = {mid + half * reference_x_[i], half * reference_w_[i]};
  return out;
}

}  // namespace hfpdot
