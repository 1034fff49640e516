#pragma once

#include <cstddef>
#include <vector>

namespace hfpdot {

/// Fixed-order Gauss-Legendre rule (GSL tables, any order).
class GaussLegendre {
 public:
  explicit GaussLegendre(std::size_t order);

  std::size_t order() const noexcept { return reference_x_.size(); }

  struct Node {
    double x;
    double w;
  };
  /// Nodes and weights mapped onto [a, b].
  std::vector<Node> nodes(double a, double b) const;

  template <typename F>
  double integrate(F&& f, double a, double b) const {
    const double half = 0.5 * (b - a);
    const double mid = 0.5 * (a + b);
    double acc = 0.0;
    for (std::size_t i = 0; i < reference_x_.size(); ++i) acc += reference_w_[i] * f(mid + half * reference_x_[i]);
    return half * acc;
  }

 private:
  std::vector<double> reference_x_;
  std::vector<double> reference_w_;
};

}  // namespace hfpdot
