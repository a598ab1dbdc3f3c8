// SPDX-License-Identifier: Apache-2.0
//
// Part of fimkit, a flexible-metasurface link simulation and estimation toolkit.
//
// Closed-form received-power maximization for the three metasurface modes.
// Every element contributes the phase v_n + (2pi/lambda)(theta z_n + phi x_n);
// constructive interference with the direct channel requires that total to
// equal arg(gamma) - arg(gain) modulo 2pi, which each solver arranges either
// through phases (PBF), through positions on alignment lines (EM), or both.

#ifndef FIM_INTERFERENCE_HPP
#define FIM_INTERFERENCE_HPP

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "fim/channel.hpp"
#include "fim/errors.hpp"
#include "fim/geometry.hpp"
#include "fim/math_util.hpp"
#include "fim/serialize.hpp"

namespace fim {

enum class OptimizationMode { PbfOnly, EmOnly, EmPbf };
enum class SolverKind { ClosedForm, SquareSystem, BayesOpt, Exhaustive };

inline const char* mode_name(OptimizationMode m) {
  switch (m) {
    case OptimizationMode::PbfOnly: return "pbf_only";
    case OptimizationMode::EmOnly: return "em_only";
    default: return "em_pbf";
  }
}

struct ModeSolution {
  OptimizationMode mode = OptimizationMode::PbfOnly;
  SolverKind solver = SolverKind::ClosedForm;
  FimGeometry geometry;
  PhaseVector phases;
  double objective_value = 0.0;
  bool degenerate = false;  // set when the phase target was undefined
};

struct ExpectedBounds {
  double e_f_pbf = 0.0;
  double e_f_ub = 0.0;
};

struct BoundReport {
  double pbf_optimum_f_pbf = 0.0;
  double upper_bound_f_ub = 0.0;
  std::optional<ExpectedBounds> expectations;
};

// (|gamma| + N sum |gain|)^2; no configuration can exceed it.
inline double upper_bound(const ChannelRealization& c, std::size_t n) {
  check(n >= 1, "element count must be at least 1");
  const double s = std::abs(c.direct_gamma) + double(n) * cascaded_gain_abs_sum(c);
  return s * s;
}

// Best received power reachable with phases alone: all elements share
// v = arg(gamma) - arg(sum of gains), giving (|gamma| + N |sum of gains|)^2.
inline double pbf_optimum_value(const ChannelRealization& c, std::size_t n) {
  check(n >= 1, "element count must be at least 1");
  const double s =
      std::abs(c.direct_gamma) + double(n) * std::abs(cascaded_gain_sum(c));
  return s * s;
}

// Phase-only optimum. The multi-path phase analysis treats all elements as
// co-located (position phases identical across paths), so the returned
// geometry stacks the N elements at the origin with d_min = 0. Re-evaluating
// received_power on that geometry reproduces objective_value exactly.
inline ModeSolution pbf_only_optimum(const ChannelRealization& c, std::size_t n,
                                     const GeometryTemplate& t = {}) {
  check(n >= 1, "element count must be at least 1");
  ModeSolution sol;
  sol.mode = OptimizationMode::PbfOnly;
  sol.solver = SolverKind::ClosedForm;
  sol.geometry = FimGeometry{std::vector<double>(n, 0.0),
                             std::vector<double>(n, 0.0), t.region_bound, 0.0,
                             t.wavelength};
  const cplx s = cascaded_gain_sum(c);
  double v = 0.0;
  if (std::abs(s) == 0.0) {
    sol.degenerate = true;  // phase target undefined, objective unaffected
  } else {
    v = wrap_two_pi(std::arg(c.direct_gamma) - std::arg(s));
  }
  sol.phases.assign(n, v);
  sol.objective_value = received_power(sol.geometry, sol.phases, c);
  return sol;
}

// E{f_PBF} and E{f_UB} for i.i.d. complex Gaussian gains with the given
// standard deviations. Both follow from Rayleigh moments of the gain sums.
inline ExpectedBounds expected_bounds(int L, int P, std::size_t n,
                                      double sigma_alpha, double sigma_beta,
                                      double sigma_gamma) {
  check(L >= 1 && P >= 1, "L and P must be at least 1");
  check(n >= 1, "element count must be at least 1");
  check_non_negative(sigma_alpha, "sigma_alpha");
  check_non_negative(sigma_beta, "sigma_beta");
  check_non_negative(sigma_gamma, "sigma_gamma");
  const double pi_sqrt_pi = kPi * std::sqrt(kPi);
  const double nn = double(n);
  const double sab = sigma_alpha * sigma_beta;
  ExpectedBounds out;
  out.e_f_pbf = sigma_gamma * sigma_gamma +
                (pi_sqrt_pi * nn / 4.0) * sigma_gamma * sab +
                nn * nn * sab * sab;
  out.e_f_ub = sigma_gamma * sigma_gamma +
               (pi_sqrt_pi * std::sqrt(double(L) * double(P)) * nn / 4.0) *
                   sigma_gamma * sab +
               nn * nn * (1.0 + kPi * double(L - 1) / 4.0) *
                   (1.0 + kPi * double(P - 1) / 4.0) * sab * sab;
  return out;
}

inline BoundReport report_bounds(const ChannelRealization& c, std::size_t n,
                                 std::optional<ExpectedBounds> expectations =
                                     std::nullopt) {
  BoundReport r;
  r.pbf_optimum_f_pbf = pbf_optimum_value(c, n);
  r.upper_bound_f_ub = upper_bound(c, n);
  r.expectations = expectations;
  return r;
}

namespace detail {

// Places count points on the family of alignment lines
// ux*x + uz*z = delta + 2*pi*k inside [-R, R]^2 with pairwise spacing d_min.
// Lines are visited in the order k = 0, +1, -1, +2, ...; points advance along
// each clipped segment at spacing max(d_min, segment/count). Deterministic.
inline void place_on_alignment_lines(double ux, double uz, double delta,
                                     std::size_t count,
                                     const GeometryTemplate& t,
                                     std::vector<double>& out_x,
                                     std::vector<double>& out_z) {
  const double r = t.region_bound;
  const double g2 = ux * ux + uz * uz;
  const double gnorm = std::sqrt(g2);

  if (gnorm * r < 1e-14) {
    // Position-independent phase: feasible only if no correction is needed.
    const double residual = std::abs(std::remainder(delta, kTwoPi));
    if (residual < 1e-12) {
      const auto grid = make_half_wavelength_array(
          count, GeometryTemplate{r, t.d_min, t.wavelength});
      out_x = grid.element_x;
      out_z = grid.element_z;
      return;
    }
    throw FeasibilityError(
        "element movement cannot realize the phase target: both virtual "
        "angles are zero, so position does not affect the phase");
  }

  const double reach = gnorm * std::sqrt(2.0) * r;  // max |ux*x + uz*z| in box
  const long k_lo = long(std::ceil((-reach - delta) / kTwoPi - 1e-12));
  const long k_hi = long(std::floor((reach - delta) / kTwoPi + 1e-12));
  const double tx = -uz / gnorm, tz = ux / gnorm;  // unit direction of lines

  std::vector<long> k_order;
  for (long k = k_lo; k <= k_hi; ++k) k_order.push_back(k);
  std::sort(k_order.begin(), k_order.end(), [](long a, long b) {
    const long aa = std::abs(a), ab = std::abs(b);
    return aa != ab ? aa < ab : a > b;
  });

  out_x.clear();
  out_z.clear();
  auto admissible = [&](double x, double z) {
    if (std::abs(x) > r * (1.0 + 1e-12) || std::abs(z) > r * (1.0 + 1e-12))
      return false;
    const double limit = t.d_min * t.d_min * (1.0 - 1e-9);
    for (std::size_t i = 0; i < out_x.size(); ++i) {
      const double dx = x - out_x[i], dz = z - out_z[i];
      if (dx * dx + dz * dz < limit) return false;
    }
    return true;
  };

  for (long k : k_order) {
    const double c = delta + kTwoPi * double(k);
    const double px = ux * c / g2, pz = uz * c / g2;  // foot of the line
    // Clip {(px, pz) + s (tx, tz)} to the box.
    double s_lo = -std::numeric_limits<double>::infinity();
    double s_hi = std::numeric_limits<double>::infinity();
    bool empty = false;
    auto clip_axis = [&](double p0, double dir) {
      if (std::abs(dir) < 1e-300) {
        if (std::abs(p0) > r) empty = true;
        return;
      }
      double a = (-r - p0) / dir, b = (r - p0) / dir;
      if (a > b) std::swap(a, b);
      s_lo = std::max(s_lo, a);
      s_hi = std::min(s_hi, b);
    };
    clip_axis(px, tx);
    clip_axis(pz, tz);
    if (empty || s_hi < s_lo) continue;

    if (count == 1) {
      // Single element: the in-segment point closest to the origin.
      const double s = std::clamp(0.0, s_lo, s_hi);
      const double x = px + s * tx, z = pz + s * tz;
      if (admissible(x, z)) {
        out_x.push_back(x);
        out_z.push_back(z);
        return;
      }
      continue;
    }
    const double seg = s_hi - s_lo;
    const double spacing = std::max(t.d_min, seg / double(count));
    const std::size_t slots =
        spacing > 0.0 ? std::size_t(std::floor(seg / spacing + 1e-9)) + 1 : 1;
    for (std::size_t i = 0; i < slots; ++i) {
      const double s = s_lo + double(i) * spacing;
      const double x = px + s * tx, z = pz + s * tz;
      if (!admissible(x, z)) continue;
      out_x.push_back(x);
      out_z.push_back(z);
      if (out_x.size() == count) return;
    }
  }
  throw FeasibilityError(
      "cannot place " + std::to_string(count) +
      " elements with spacing d_min on the alignment lines inside the region; "
      "binding constraint: region bound R = " + format_double(r));
}

}  // namespace detail

struct SinglePathSolutions {
  ModeSolution pbf_only;
  ModeSolution em_only;
  ModeSolution em_pbf;
};

// Single cascaded path, N elements. All three modes attain
// (N |gain| + |gamma|)^2; they differ in which variables realize the target.
inline SinglePathSolutions solve_multi_element_single_path(
    const ChannelRealization& c, std::size_t n, const GeometryTemplate& t = {}) {
  validate_channel(c);
  check(c.cascaded.size() == 1, "solver requires a single cascaded path");
  check(n >= 1, "element count must be at least 1");
  const cplx g = c.cascaded.gains[0];
  const double theta = c.cascaded.virtual_theta[0];
  const double phi = c.cascaded.virtual_phi[0];
  const double kappa = kTwoPi / t.wavelength;
  const bool zero_gain = std::abs(g) == 0.0;
  // Total element phase must hit arg(gamma) - arg(gain) modulo 2 pi.
  const double delta =
      zero_gain ? 0.0 : std::arg(c.direct_gamma) - std::arg(g);

  SinglePathSolutions out;

  // PBF: fixed half-wavelength grid, per-element phase correction.
  {
    ModeSolution& s = out.pbf_only;
    s.mode = OptimizationMode::PbfOnly;
    s.solver = SolverKind::ClosedForm;
    s.geometry = make_half_wavelength_array(n, t);
    s.phases.resize(n);
    for (std::size_t i = 0; i < n; ++i)
      s.phases[i] = wrap_two_pi(delta - kappa * (theta * s.geometry.element_z[i] +
                                                 phi * s.geometry.element_x[i]));
    s.degenerate = zero_gain;
    s.objective_value = received_power(s.geometry, s.phases, c);
  }

  // EM: zero phases, elements on the alignment lines.
  {
    ModeSolution& s = out.em_only;
    s.mode = OptimizationMode::EmOnly;
    s.solver = SolverKind::ClosedForm;
    std::vector<double> xs, zs;
    if (zero_gain) {
      const auto grid = make_half_wavelength_array(n, t);
      xs = grid.element_x;
      zs = grid.element_z;
      s.degenerate = true;
    } else {
      detail::place_on_alignment_lines(kappa * phi, kappa * theta, delta, n, t,
                                       xs, zs);
    }
    s.geometry = make_geometry(std::move(xs), std::move(zs), t.region_bound,
                               t.d_min, t.wavelength);
    s.phases.assign(n, 0.0);
    s.objective_value = received_power(s.geometry, s.phases, c);
  }

  // EM-PBF: any in-region placement works once phases correct the residual.
  {
    ModeSolution& s = out.em_pbf;
    s.mode = OptimizationMode::EmPbf;
    s.solver = SolverKind::ClosedForm;
    s.geometry = out.pbf_only.geometry;
    s.phases = out.pbf_only.phases;
    s.degenerate = zero_gain;
    s.objective_value = received_power(s.geometry, s.phases, c);
  }
  return out;
}

inline SinglePathSolutions solve_single_element_single_path(
    const ChannelRealization& c, const GeometryTemplate& t = {}) {
  return solve_multi_element_single_path(c, 1, t);
}

// Single element, exactly two cascaded paths: aligning both paths with the
// direct channel is a 2x2 linear system in (x, z), one equation per path,
// solvable for every integer pair (k1, k2). The in-region solution with the
// smallest position norm is returned.
inline ModeSolution solve_single_element_two_paths_em(
    const ChannelRealization& c, const GeometryTemplate& t = {}) {
  validate_channel(c);
  check(c.cascaded.size() == 2, "solver requires exactly two cascaded paths");
  const double kappa = kTwoPi / t.wavelength;
  const double r = t.region_bound;

  double phi0 = c.cascaded.virtual_phi[0], theta0 = c.cascaded.virtual_theta[0];
  double phi1 = c.cascaded.virtual_phi[1], theta1 = c.cascaded.virtual_theta[1];
  const double det = phi0 * theta1 - phi1 * theta0;
  const double scale = std::max({std::abs(phi0), std::abs(theta0),
                                 std::abs(phi1), std::abs(theta1), 1e-30});
  if (std::abs(det) < 1e-12 * scale * scale)
    throw ConditioningError(
        "the two cascaded paths have parallel alignment lines; the position "
        "system is singular");

  auto target = [&](std::size_t i) {
    const cplx g = c.cascaded.gains[i];
    return std::abs(g) == 0.0 ? 0.0
                              : std::arg(c.direct_gamma) - std::arg(g);
  };
  const double d0 = target(0), d1 = target(1);
  const double b0 = kappa * (std::abs(phi0) + std::abs(theta0)) * r;
  const double b1 = kappa * (std::abs(phi1) + std::abs(theta1)) * r;
  const long k0_lo = long(std::ceil((-b0 - d0) / kTwoPi)) - 1;
  const long k0_hi = long(std::floor((b0 - d0) / kTwoPi)) + 1;
  const long k1_lo = long(std::ceil((-b1 - d1) / kTwoPi)) - 1;
  const long k1_hi = long(std::floor((b1 - d1) / kTwoPi)) + 1;

  double best_norm2 = std::numeric_limits<double>::infinity();
  double best_x = 0.0, best_z = 0.0;
  double nearest_excess = std::numeric_limits<double>::infinity();
  bool found = false;
  for (long k0 = k0_lo; k0 <= k0_hi; ++k0) {
    const double c0 = (d0 + kTwoPi * double(k0)) / kappa;
    for (long k1 = k1_lo; k1 <= k1_hi; ++k1) {
      const double c1 = (d1 + kTwoPi * double(k1)) / kappa;
      // [phi0 theta0; phi1 theta1] [x; z] = [c0; c1]
      const double x = (c0 * theta1 - c1 * theta0) / det;
      const double z = (phi0 * c1 - phi1 * c0) / det;
      const double excess = std::max(std::abs(x), std::abs(z)) - r;
      if (excess <= r * 1e-12) {
        const double n2 = x * x + z * z;
        if (!found || n2 < best_norm2 - 1e-18 * (1.0 + best_norm2)) {
          best_norm2 = n2;
          best_x = x;
          best_z = z;
          found = true;
        }
      } else {
        nearest_excess = std::min(nearest_excess, excess);
      }
    }
  }
  if (!found)
    throw FeasibilityError(
        "no integer pair places the aligned position inside the region; "
        "nearest solution exceeds the bound by " +
        format_double(nearest_excess) + " m");

  ModeSolution s;
  s.mode = OptimizationMode::EmOnly;
  s.solver = SolverKind::SquareSystem;
  s.geometry =
      make_geometry({best_x}, {best_z}, t.region_bound, t.d_min, t.wavelength);
  s.phases = {0.0};
  s.objective_value = received_power(s.geometry, s.phases, c);
  return s;
}

// Re-evaluates a solution from scratch and confirms the stored objective,
// the geometry constraints, and phase ranges. Returns the recomputed power.
inline double verify_mode_solution(const ModeSolution& s,
                                   const ChannelRealization& c,
                                   double tolerance = 1e-12) {
  validate_geometry(s.geometry);
  check(s.phases.size() == s.geometry.size(),
        "phase vector length must match the element count");
  for (double v : s.phases)
    check(v >= -1e-12 && v < kTwoPi + 1e-12, "phase outside [0, 2pi)");
  const double f = received_power(s.geometry, s.phases, c);
  check(std::abs(f - s.objective_value) <=
            tolerance * (1.0 + std::abs(s.objective_value)),
        "stored objective does not match re-evaluated received power");
  return f;
}

// ---------------------------------------------------------------------------
// Fringe maps

enum class FringeAxes { PlaneXZ, LineV, Grid3D };

struct FringeRequest {
  FringeAxes axes = FringeAxes::PlaneXZ;
  double fixed_v = 0.0;
  double fixed_x = 0.0;
  double fixed_z = 0.0;
  std::size_t nx = 201;
  std::size_t nz = 201;
  std::size_t nv = 721;
  double region_bound = 0.06;
  double wavelength = 0.03;
};

struct FringeMap {
  FringeRequest request;
  std::vector<double> x_axis;  // scanned axes only
  std::vector<double> z_axis;
  std::vector<double> v_axis;
  std::vector<double> values;  // index = (iv * nz + iz) * nx + ix
  double max_value = 0.0, min_value = 0.0;
  double max_v = 0.0, max_x = 0.0, max_z = 0.0;
  double min_v = 0.0, min_x = 0.0, min_z = 0.0;
};

// Received power of a single element swept over phase and/or position.
inline FringeMap fringe_map(const ChannelRealization& c,
                            const FringeRequest& req) {
  validate_channel(c);
  FringeMap map;
  map.request = req;
  const bool scan_xz = req.axes != FringeAxes::LineV;
  const bool scan_v = req.axes != FringeAxes::PlaneXZ;
  if (scan_xz) check(req.nx >= 1 && req.nz >= 1, "zero-resolution spatial axis");
  if (scan_v) check(req.nv >= 1, "zero-resolution phase axis");

  map.x_axis = scan_xz ? linspace(-req.region_bound, req.region_bound, req.nx)
                       : std::vector<double>{req.fixed_x};
  map.z_axis = scan_xz ? linspace(-req.region_bound, req.region_bound, req.nz)
                       : std::vector<double>{req.fixed_z};
  // Closed sweep at half-degree-style steps; the endpoint aliases 0.
  map.v_axis = scan_v ? linspace(0.0, kTwoPi, req.nv)
                      : std::vector<double>{req.fixed_v};

  const std::size_t nx = map.x_axis.size(), nz = map.z_axis.size(),
                    nv = map.v_axis.size();
  map.values.resize(nx * nz * nv);
  const double kappa = kTwoPi / req.wavelength;
  const std::size_t paths = c.cascaded.size();

  map.max_value = -std::numeric_limits<double>::infinity();
  map.min_value = std::numeric_limits<double>::infinity();
  for (std::size_t iz = 0; iz < nz; ++iz) {
    for (std::size_t ix = 0; ix < nx; ++ix) {
      cplx s{0.0, 0.0};
      for (std::size_t e = 0; e < paths; ++e) {
        const double psi = kappa * (c.cascaded.virtual_theta[e] * map.z_axis[iz] +
                                    c.cascaded.virtual_phi[e] * map.x_axis[ix]);
        s += c.cascaded.gains[e] * cplx(std::cos(psi), std::sin(psi));
      }
      for (std::size_t iv = 0; iv < nv; ++iv) {
        const double v = map.v_axis[iv];
        const cplx h = s * cplx(std::cos(v), std::sin(v)) + c.direct_gamma;
        const double f = std::norm(h);
        map.values[(iv * nz + iz) * nx + ix] = f;
        if (f > map.max_value) {
          map.max_value = f;
          map.max_v = v;
          map.max_x = map.x_axis[ix];
          map.max_z = map.z_axis[iz];
        }
        if (f < map.min_value) {
          map.min_value = f;
          map.min_v = v;
          map.min_x = map.x_axis[ix];
          map.min_z = map.z_axis[iz];
        }
      }
    }
  }
  return map;
}

inline void fringe_to_csv(const FringeMap& map, std::ostream& os,
                          const std::string& extra_metadata = {}) {
  os << "# fimkit fringe map\n";
  if (!extra_metadata.empty()) os << extra_metadata;
  os << "# max_value: " << format_double(map.max_value)
     << " at v=" << format_double(map.max_v) << " x=" << format_double(map.max_x)
     << " z=" << format_double(map.max_z) << "\n";
  os << "# min_value: " << format_double(map.min_value)
     << " at v=" << format_double(map.min_v) << " x=" << format_double(map.min_x)
     << " z=" << format_double(map.min_z) << "\n";
  const bool has_v = map.v_axis.size() > 1;
  const bool has_xz = map.x_axis.size() > 1 || map.z_axis.size() > 1;
  if (has_v && has_xz)
    os << "v,x,z,f\n";
  else if (has_v)
    os << "v,f\n";
  else
    os << "x,z,f\n";
  const std::size_t nx = map.x_axis.size(), nz = map.z_axis.size(),
                    nv = map.v_axis.size();
  for (std::size_t iv = 0; iv < nv; ++iv) {
    for (std::size_t iz = 0; iz < nz; ++iz) {
      for (std::size_t ix = 0; ix < nx; ++ix) {
        const double f = map.values[(iv * nz + iz) * nx + ix];
        if (has_v && has_xz)
          os << format_double(map.v_axis[iv]) << ',' << format_double(map.x_axis[ix])
             << ',' << format_double(map.z_axis[iz]) << ',' << format_double(f)
             << '\n';
        else if (has_v)
          os << format_double(map.v_axis[iv]) << ',' << format_double(f) << '\n';
        else
          os << format_double(map.x_axis[ix]) << ',' << format_double(map.z_axis[iz])
             << ',' << format_double(f) << '\n';
      }
    }
  }
}

inline nlohmann::json fringe_to_json(const FringeMap& map) {
  nlohmann::json j;
  j["x_axis"] = map.x_axis;
  j["z_axis"] = map.z_axis;
  j["v_axis"] = map.v_axis;
  j["values"] = map.values;
  j["value_order"] = "index = (iv * nz + iz) * nx + ix";
  j["max"] = {{"value", map.max_value},
              {"v", map.max_v},
              {"x", map.max_x},
              {"z", map.max_z}};
  j["min"] = {{"value", map.min_value},
              {"v", map.min_v},
              {"x", map.min_x},
              {"z", map.min_z}};
  return j;
}

}  // namespace fim

#endif  // FIM_INTERFERENCE_HPP
