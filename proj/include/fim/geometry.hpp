// SPDX-License-Identifier: Apache-2.0
//
// Part of fimkit, a flexible-metasurface link simulation and estimation toolkit.

#ifndef FIM_GEOMETRY_HPP
#define FIM_GEOMETRY_HPP

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "fim/errors.hpp"
#include "fim/math_util.hpp"

namespace fim {

// Element layout of a flexible metasurface: N element coordinates inside the
// square region [-R, R]^2, with a minimum pairwise spacing d_min.
struct FimGeometry {
  std::vector<double> element_x;  // meters
  std::vector<double> element_z;  // meters
  double region_bound = 0.0;      // R, meters
  double d_min = 0.0;             // meters; 0 disables the spacing constraint
  double wavelength = 0.03;       // meters

  std::size_t size() const { return element_x.size(); }
};

// Phase shifts v_n in radians; paired with a FimGeometry of equal length.
using PhaseVector = std::vector<double>;

inline PhaseVector wrap_phases(PhaseVector v) {
  for (double& p : v) p = wrap_two_pi(p);
  return v;
}

// Spacing check with a small relative slack so exact half-wavelength lattices
// do not fail on floating-point representation error.
inline bool spacing_satisfied(const std::vector<double>& x,
                              const std::vector<double>& z, double d_min) {
  if (d_min <= 0.0) return true;
  const double limit = d_min * d_min * (1.0 - 1e-9);
  for (std::size_t i = 0; i < x.size(); ++i) {
    for (std::size_t j = i + 1; j < x.size(); ++j) {
      const double dx = x[i] - x[j];
      const double dz = z[i] - z[j];
      if (dx * dx + dz * dz < limit) return false;
    }
  }
  return true;
}

inline void validate_geometry(const FimGeometry& g) {
  check(g.element_x.size() == g.element_z.size(),
        "geometry coordinate lists must have equal length");
  check(!g.element_x.empty(), "geometry must contain at least one element");
  check_positive(g.region_bound, "region_bound");
  check_positive(g.wavelength, "wavelength");
  check_non_negative(g.d_min, "d_min");
  const double bound = g.region_bound * (1.0 + 1e-12);
  for (std::size_t n = 0; n < g.size(); ++n) {
    check_finite(g.element_x[n], "element_x");
    check_finite(g.element_z[n], "element_z");
    check(std::abs(g.element_x[n]) <= bound && std::abs(g.element_z[n]) <= bound,
          "element position outside the region [-R, R]^2");
  }
  if (g.size() >= 2 && !spacing_satisfied(g.element_x, g.element_z, g.d_min))
    throw InvalidInputError("element pair closer than d_min");
}

inline FimGeometry make_geometry(std::vector<double> x, std::vector<double> z,
                                 double region_bound, double d_min,
                                 double wavelength) {
  FimGeometry g{std::move(x), std::move(z), region_bound, d_min, wavelength};
  validate_geometry(g);
  return g;
}

// Region, spacing, and carrier parameters shared by solver entry points that
// construct their own element placements.
struct GeometryTemplate {
  double region_bound = 0.06;  // 2 * default wavelength
  double d_min = 0.015;        // lambda / 2
  double wavelength = 0.03;
};

// Centered half-wavelength array: ceil(sqrt(N)) x ceil(sqrt(N)) lattice
// truncated row-major to N positions.
inline FimGeometry make_half_wavelength_array(std::size_t n,
                                              const GeometryTemplate& t) {
  check(n >= 1, "element count must be at least 1");
  const std::size_t side = std::size_t(std::ceil(std::sqrt(double(n))));
  const double step = 0.5 * t.wavelength;
  const std::size_t rows = (n + side - 1) / side;
  const double cx = 0.5 * double(side - 1);
  const double cz = 0.5 * double(rows - 1);
  std::vector<double> xs(n), zs(n);
  for (std::size_t i = 0; i < n; ++i) {
    xs[i] = (double(i % side) - cx) * step;
    zs[i] = (double(i / side) - cz) * step;
  }
  return make_geometry(std::move(xs), std::move(zs), t.region_bound, t.d_min,
                       t.wavelength);
}

}  // namespace fim

#endif  // FIM_GEOMETRY_HPP
