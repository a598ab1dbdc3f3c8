// SPDX-License-Identifier: Apache-2.0
//
// Part of fimkit, a flexible-metasurface link simulation and estimation toolkit.
//
// Pilot protocols for channel estimation: the surface elements move between
// subframes so the visited positions accumulate into a virtual array, and
// per-slot phase patterns multiplex the element responses into measurements.
// The sparse-recovery problem couples a virtual-angle dictionary with a
// constant direct-channel atom.

#ifndef FIM_ESTIMATION_HPP
#define FIM_ESTIMATION_HPP

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "fim/channel.hpp"
#include "fim/errors.hpp"
#include "fim/geometry.hpp"
#include "fim/math_util.hpp"
#include "fim/rng.hpp"
#include "fim/serialize.hpp"

namespace fim {

enum class ProtocolKind { SingleElement, MultiElement };
enum class MovementPattern { HalfWavelengthLattice };
enum class PbfSource { RandomPhases, DftColumns, AllOnes };

// Q subframes of T2 slots each; one geometry snapshot per subframe and one
// N x T2 unit-modulus phase matrix per subframe. The single-element protocol
// is the degenerate case N = 1, T2 = 1, Q = T1.
struct ProtocolSchedule {
  ProtocolKind kind = ProtocolKind::SingleElement;
  std::size_t n = 1;   // elements per snapshot
  std::size_t q = 1;   // subframes
  std::size_t t2 = 1;  // slots per subframe
  std::vector<FimGeometry> snapshots;        // q entries of n elements
  std::vector<std::vector<cplx>> pbf_w;      // q matrices, entry [e*t2 + t]
  FimGeometry virtual_lattice;               // full aperture, visited or not
  std::size_t lattice_side = 1;              // columns of the aperture lattice
  double wavelength = 0.03;

  std::size_t measurement_count() const { return q * t2; }
  std::size_t virtual_size() const { return n * q; }
};

inline void validate_schedule(const ProtocolSchedule& s) {
  check(s.n >= 1 && s.q >= 1 && s.t2 >= 1, "schedule dimensions must be >= 1");
  check(s.snapshots.size() == s.q, "need one geometry snapshot per subframe");
  check(s.pbf_w.size() == s.q, "need one phase matrix per subframe");
  for (std::size_t q = 0; q < s.q; ++q) {
    check(s.snapshots[q].size() == s.n, "snapshot element count mismatch");
    validate_geometry(s.snapshots[q]);
    check(s.pbf_w[q].size() == s.n * s.t2, "phase matrix shape mismatch");
    for (const cplx& w : s.pbf_w[q])
      check(std::abs(std::abs(w) - 1.0) < 1e-12,
            "phase matrix entries must have unit modulus");
  }
  validate_geometry(s.virtual_lattice);
}

// Tight region template for a side x side half-wavelength virtual aperture:
// the outermost lattice site lands exactly on the bound.
inline GeometryTemplate virtual_aperture_region(std::size_t side,
                                                double wavelength = 0.03,
                                                double d_min = 0.015) {
  check(side >= 1, "aperture side must be at least 1");
  GeometryTemplate t;
  t.wavelength = wavelength;
  t.d_min = d_min;
  t.region_bound = double(side - 1) * wavelength / 4.0;
  if (t.region_bound == 0.0) t.region_bound = wavelength / 4.0;
  return t;
}

namespace detail {

// Centered lattice coordinate of integer site m on a `side`-wide axis.
inline double lattice_coord(std::size_t m, std::size_t side, double wavelength) {
  return (double(m) - double(side - 1) / 2.0) * (wavelength / 2.0);
}

inline FimGeometry lattice_geometry(std::size_t count, std::size_t side,
                                    const GeometryTemplate& t) {
  FimGeometry g;
  g.region_bound = t.region_bound;
  g.d_min = t.d_min;
  g.wavelength = t.wavelength;
  const std::size_t rows = (count + side - 1) / side;
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t col = i % side, row = i / side;
    g.element_x.push_back(lattice_coord(col, side, t.wavelength));
    g.element_z.push_back(lattice_coord(row, rows, t.wavelength));
  }
  return g;
}

inline std::vector<cplx> draw_pbf_matrix(PbfSource source, std::size_t n,
                                         std::size_t t2, Rng& rng) {
  std::vector<cplx> w(n * t2);
  switch (source) {
    case PbfSource::AllOnes:
      std::fill(w.begin(), w.end(), cplx(1.0, 0.0));
      break;
    case PbfSource::DftColumns:
      for (std::size_t e = 0; e < n; ++e)
        for (std::size_t t = 0; t < t2; ++t)
          w[e * t2 + t] = std::polar(1.0, -kTwoPi * double(e) *
                                              double(t % n) / double(n));
      break;
    case PbfSource::RandomPhases:
      for (auto& entry : w) entry = std::polar(1.0, rng.uniform(0.0, kTwoPi));
      break;
  }
  return w;
}

}  // namespace detail

// T1 single-element movements scanning a centered half-wavelength lattice
// row-major; the visited positions themselves form the virtual aperture.
inline ProtocolSchedule build_schedule_single(
    std::size_t t1, MovementPattern pattern = MovementPattern::HalfWavelengthLattice,
    const GeometryTemplate& region = virtual_aperture_region(12)) {
  check(t1 >= 1, "need at least one movement");
  (void)pattern;  // single pattern today; the enum pins the contract
  ProtocolSchedule s;
  s.kind = ProtocolKind::SingleElement;
  s.n = 1;
  s.q = t1;
  s.t2 = 1;
  s.wavelength = region.wavelength;
  const std::size_t side = std::size_t(std::ceil(std::sqrt(double(t1))));
  s.lattice_side = side;
  s.virtual_lattice = detail::lattice_geometry(t1, side, region);
  for (std::size_t i = 0; i < t1; ++i) {
    FimGeometry g;
    g.region_bound = region.region_bound;
    g.d_min = region.d_min;
    g.wavelength = region.wavelength;
    g.element_x = {s.virtual_lattice.element_x[i]};
    g.element_z = {s.virtual_lattice.element_z[i]};
    validate_geometry(g);
    s.snapshots.push_back(std::move(g));
    s.pbf_w.push_back({cplx(1.0, 0.0)});
  }
  validate_schedule(s);
  return s;
}

// N-element subarray translated over a translations x translations coarse
// grid (one subarray width per step), visited cyclically across the Q
// subframes; the union of translated positions is the virtual aperture.
inline ProtocolSchedule build_schedule_multi(
    std::size_t n, std::size_t q, std::size_t t2, const GeometryTemplate& region,
    PbfSource pbf_source, std::uint64_t seed, std::size_t translations = 3) {
  check(n >= 1 && q >= 1 && t2 >= 1 && translations >= 1,
        "schedule dimensions must be >= 1");
  const std::size_t sub_side = std::size_t(std::lround(std::sqrt(double(n))));
  check(sub_side * sub_side == n,
        "the movable subarray must be square (element count a perfect square)");
  ProtocolSchedule s;
  s.kind = ProtocolKind::MultiElement;
  s.n = n;
  s.q = q;
  s.t2 = t2;
  s.wavelength = region.wavelength;
  const std::size_t side = sub_side * translations;
  s.lattice_side = side;
  s.virtual_lattice = detail::lattice_geometry(side * side, side, region);

  Rng rng(seed);
  for (std::size_t qi = 0; qi < q; ++qi) {
    const std::size_t slot = qi % (translations * translations);
    const std::size_t off_x = (slot % translations) * sub_side;
    const std::size_t off_z = (slot / translations) * sub_side;
    FimGeometry g;
    g.region_bound = region.region_bound;
    g.d_min = region.d_min;
    g.wavelength = region.wavelength;
    for (std::size_t e = 0; e < n; ++e) {
      const std::size_t col = off_x + e % sub_side;
      const std::size_t row = off_z + e / sub_side;
      // Identical site formula as the lattice, so shared positions are
      // bitwise equal across snapshots.
      g.element_x.push_back(detail::lattice_coord(col, side, region.wavelength));
      g.element_z.push_back(detail::lattice_coord(row, side, region.wavelength));
    }
    validate_geometry(g);
    for (std::size_t a = 0; a < n; ++a)
      for (std::size_t b = a + 1; b < n; ++b)
        check(g.element_x[a] != g.element_x[b] || g.element_z[a] != g.element_z[b],
              "duplicate element positions within a snapshot");
    s.snapshots.push_back(std::move(g));
    s.pbf_w.push_back(detail::draw_pbf_matrix(pbf_source, n, t2, rng));
  }
  validate_schedule(s);
  return s;
}

// Field observed at one snapshot element: the cascaded paths summed with the
// position-dependent phase (unit pilot, zero applied phase shift).
namespace detail {

inline cplx element_field(const ChannelRealization& c, double kappa, double x,
                          double z) {
  cplx acc{0.0, 0.0};
  for (std::size_t e = 0; e < c.cascaded.size(); ++e) {
    const double psi = kappa * (c.cascaded.virtual_theta[e] * z +
                                c.cascaded.virtual_phi[e] * x);
    acc += c.cascaded.gains[e] * cplx(std::cos(psi), std::sin(psi));
  }
  return acc;
}

}  // namespace detail

// Stacked observations y[(q * T2) + t] = sum_n W_q[n,t] field(q,n) + gamma
// + CN(0, sigma^2) noise, with unit pilot symbols.
inline Eigen::VectorXcd synthesize_measurements(const ProtocolSchedule& s,
                                                const ChannelRealization& c,
                                                const NoiseModel& noise,
                                                std::uint64_t seed) {
  validate_schedule(s);
  validate_channel(c);
  check_non_negative(noise.variance_sigma2, "noise variance");
  const double kappa = kTwoPi / s.wavelength;
  Eigen::VectorXcd y(Eigen::Index(s.measurement_count()));
  Rng rng(seed);
  std::vector<cplx> field(s.n);
  for (std::size_t q = 0; q < s.q; ++q) {
    const auto& g = s.snapshots[q];
    for (std::size_t e = 0; e < s.n; ++e)
      field[e] = detail::element_field(c, kappa, g.element_x[e], g.element_z[e]);
    for (std::size_t t = 0; t < s.t2; ++t) {
      cplx acc = c.direct_gamma;
      for (std::size_t e = 0; e < s.n; ++e)
        acc += s.pbf_w[q][e * s.t2 + t] * field[e];
      if (noise.variance_sigma2 > 0.0)
        acc += rng.cnormal(noise.variance_sigma2);
      y(Eigen::Index(q * s.t2 + t)) = acc;
    }
  }
  return y;
}

// ---------------------------------------------------------------------------
// Dictionary and sparse problem

// Angle grid: the zero pair models the position-independent direct channel;
// cascaded atoms live on a half-offset lattice over one alias-free period
// [-1, 1) per axis, so a side x side aperture sees mutually orthogonal
// cascaded atoms. For odd sides the lattice's center cell lands exactly on
// zero; that cell is served by the direct atom and is not duplicated.
inline std::vector<std::pair<double, double>> default_angle_grid(
    std::size_t side) {
  check(side >= 1, "grid side must be at least 1");
  std::vector<std::pair<double, double>> grid;
  grid.reserve(side * side + 1);
  grid.emplace_back(0.0, 0.0);
  for (std::size_t it = 0; it < side; ++it)
    for (std::size_t ip = 0; ip < side; ++ip) {
      const double theta = -1.0 + (double(it) + 0.5) * 2.0 / double(side);
      const double phi = -1.0 + (double(ip) + 0.5) * 2.0 / double(side);
      if (theta == 0.0 && phi == 0.0) continue;
      grid.emplace_back(theta, phi);
    }
  return grid;
}

struct SparseProblem {
  Eigen::MatrixXcd dictionary_phi;  // (Q*T2) x G
  Eigen::VectorXcd observation_y;
  std::vector<std::pair<double, double>> grid_angles;  // (theta, phi), size G
  std::size_t direct_atom_index = 0;
  double noise_variance = 0.0;
  // Virtual-aperture sites used to synthesize channel responses from atoms.
  std::vector<double> virtual_x, virtual_z;
  double wavelength = 0.03;

  std::size_t num_atoms() const { return grid_angles.size(); }
};

inline void validate_problem(const SparseProblem& p) {
  const auto g = Eigen::Index(p.grid_angles.size());
  check(g >= 1, "dictionary needs at least one atom");
  check(p.dictionary_phi.cols() == g,
        "dictionary column count must equal the grid size");
  check(p.direct_atom_index < p.grid_angles.size(),
        "direct atom index out of range");
  std::size_t zeros = 0;
  for (const auto& a : p.grid_angles)
    if (a.first == 0.0 && a.second == 0.0) ++zeros;
  check(zeros == 1, "the grid must contain exactly one zero-angle atom");
  check(p.grid_angles[p.direct_atom_index].first == 0.0 &&
            p.grid_angles[p.direct_atom_index].second == 0.0,
        "direct atom must sit at the zero angle pair");
  check(p.observation_y.size() == 0 ||
            p.observation_y.size() == p.dictionary_phi.rows(),
        "observation length must match the dictionary rows");
  check(p.virtual_x.size() == p.virtual_z.size(),
        "virtual aperture coordinate lengths differ");
  check_non_negative(p.noise_variance, "noise variance");
}

// Dictionary columns: cascaded atom g stacks sum_n W_q[n,t] e^{j kappa
// (theta_g z_{q,n} + phi_g x_{q,n})} over measurements; the direct atom is
// the all-ones column (a constant reaches every measurement unweighted).
inline SparseProblem build_dictionary(
    const ProtocolSchedule& s,
    const std::vector<std::pair<double, double>>& grid_spec) {
  validate_schedule(s);
  SparseProblem p;
  p.grid_angles = grid_spec;
  p.wavelength = s.wavelength;
  p.virtual_x = s.virtual_lattice.element_x;
  p.virtual_z = s.virtual_lattice.element_z;
  std::size_t direct = grid_spec.size();
  for (std::size_t g = 0; g < grid_spec.size(); ++g)
    if (grid_spec[g].first == 0.0 && grid_spec[g].second == 0.0) {
      check(direct == grid_spec.size(),
            "the grid must contain exactly one zero-angle atom");
      direct = g;
    }
  check(direct < grid_spec.size(),
        "the grid must include the zero-angle direct atom");
  p.direct_atom_index = direct;

  const std::size_t rows = s.measurement_count();
  p.dictionary_phi.resize(Eigen::Index(rows), Eigen::Index(grid_spec.size()));
  const double kappa = kTwoPi / s.wavelength;
  std::vector<cplx> field(s.n);
  for (std::size_t g = 0; g < grid_spec.size(); ++g) {
    if (g == direct) {
      p.dictionary_phi.col(Eigen::Index(g)).setOnes();
      continue;
    }
    const double theta = grid_spec[g].first, phi = grid_spec[g].second;
    for (std::size_t q = 0; q < s.q; ++q) {
      const auto& geo = s.snapshots[q];
      for (std::size_t e = 0; e < s.n; ++e) {
        const double psi = kappa * (theta * geo.element_z[e] +
                                    phi * geo.element_x[e]);
        field[e] = cplx(std::cos(psi), std::sin(psi));
      }
      for (std::size_t t = 0; t < s.t2; ++t) {
        cplx acc{0.0, 0.0};
        for (std::size_t e = 0; e < s.n; ++e)
          acc += s.pbf_w[q][e * s.t2 + t] * field[e];
        p.dictionary_phi(Eigen::Index(q * s.t2 + t), Eigen::Index(g)) = acc;
      }
    }
  }
  validate_problem(p);
  return p;
}

// Dictionary + synthesized observations in one call.
inline SparseProblem build_problem(
    const ProtocolSchedule& s, const ChannelRealization& c,
    const NoiseModel& noise, std::uint64_t seed,
    const std::vector<std::pair<double, double>>& grid_spec) {
  SparseProblem p = build_dictionary(s, grid_spec);
  p.observation_y = synthesize_measurements(s, c, noise, seed);
  p.noise_variance = noise.variance_sigma2;
  return p;
}

// Ground-truth sparse coefficients for an on-grid channel: gamma at the
// direct atom, per-path gains accumulated at their angle atoms. Errors if a
// path angle is not a grid point.
inline Eigen::VectorXcd true_sparse_vector(const SparseProblem& p,
                                           const ChannelRealization& c) {
  validate_channel(c);
  Eigen::VectorXcd xi = Eigen::VectorXcd::Zero(Eigen::Index(p.num_atoms()));
  xi(Eigen::Index(p.direct_atom_index)) = c.direct_gamma;
  for (std::size_t e = 0; e < c.cascaded.size(); ++e) {
    std::size_t hit = p.num_atoms();
    for (std::size_t g = 0; g < p.num_atoms(); ++g) {
      if (g == p.direct_atom_index) continue;
      if (std::abs(p.grid_angles[g].first - c.cascaded.virtual_theta[e]) < 1e-12 &&
          std::abs(p.grid_angles[g].second - c.cascaded.virtual_phi[e]) < 1e-12) {
        hit = g;
        break;
      }
    }
    check(hit < p.num_atoms(), "channel path angle is not on the grid");
    xi(Eigen::Index(hit)) += c.cascaded.gains[e];
  }
  return xi;
}

// ---------------------------------------------------------------------------
// Recovery output and error metrics

struct RecoveryResult {
  Eigen::VectorXcd xi_hat;
  std::vector<std::size_t> support;
  cplx direct_estimate_gamma{0.0, 0.0};
  Eigen::VectorXcd cascaded_estimate;  // response over the virtual aperture
  int iterations = 0;
  double wall_time = 0.0;  // seconds
  std::string diagnostics;
};

// Response of the coefficient vector on the virtual aperture, excluding the
// direct atom.
inline Eigen::VectorXcd synthesize_virtual_response(
    const SparseProblem& p, const Eigen::VectorXcd& xi) {
  check(xi.size() == Eigen::Index(p.num_atoms()),
        "coefficient length must equal the atom count");
  const double kappa = kTwoPi / p.wavelength;
  Eigen::VectorXcd h = Eigen::VectorXcd::Zero(Eigen::Index(p.virtual_x.size()));
  for (std::size_t g = 0; g < p.num_atoms(); ++g) {
    if (g == p.direct_atom_index) continue;
    const cplx w = xi(Eigen::Index(g));
    if (w == cplx(0.0, 0.0)) continue;
    const double theta = p.grid_angles[g].first, phi = p.grid_angles[g].second;
    for (std::size_t j = 0; j < p.virtual_x.size(); ++j) {
      const double psi =
          kappa * (theta * p.virtual_z[j] + phi * p.virtual_x[j]);
      h(Eigen::Index(j)) += w * cplx(std::cos(psi), std::sin(psi));
    }
  }
  return h;
}

// Completes a recovery result from its coefficients: support, the direct
// gain, and the virtual-aperture reconstruction.
inline void finalize_recovery_result(const SparseProblem& p,
                                     RecoveryResult& r) {
  r.direct_estimate_gamma = r.xi_hat(Eigen::Index(p.direct_atom_index));
  r.support.clear();
  double peak = 0.0;
  for (Eigen::Index i = 0; i < r.xi_hat.size(); ++i)
    peak = std::max(peak, std::abs(r.xi_hat(i)));
  for (Eigen::Index i = 0; i < r.xi_hat.size(); ++i)
    if (std::abs(r.xi_hat(i)) > 1e-12 * peak && r.xi_hat(i) != cplx(0.0, 0.0))
      r.support.push_back(std::size_t(i));
  r.cascaded_estimate = synthesize_virtual_response(p, r.xi_hat);
}

struct NmseResult {
  double cascaded = 0.0;
  double direct = 0.0;
};

// Cascaded NMSE over the full virtual aperture plus the scalar direct-gain
// NMSE. The truth response is synthesized directly from the channel paths.
inline NmseResult evaluate_nmse(const RecoveryResult& r,
                                const ChannelRealization& truth,
                                const ProtocolSchedule& s) {
  validate_channel(truth);
  const auto& lat = s.virtual_lattice;
  check(r.cascaded_estimate.size() == Eigen::Index(lat.size()),
        "reconstruction length must match the virtual aperture");
  const double kappa = kTwoPi / s.wavelength;
  double err = 0.0, energy = 0.0;
  for (std::size_t j = 0; j < lat.size(); ++j) {
    const cplx h =
        detail::element_field(truth, kappa, lat.element_x[j], lat.element_z[j]);
    err += std::norm(r.cascaded_estimate(Eigen::Index(j)) - h);
    energy += std::norm(h);
  }
  if (!(energy > 0.0) || std::abs(truth.direct_gamma) == 0.0)
    throw InvalidInputError(
        "normalized error undefined: the true channel has zero energy");
  NmseResult out;
  out.cascaded = err / energy;
  out.direct = std::norm(r.direct_estimate_gamma - truth.direct_gamma) /
               std::norm(truth.direct_gamma);
  return out;
}

// ---------------------------------------------------------------------------
// Serialization: JSON header + little-endian base64 arrays, bit-exact.

inline nlohmann::json sparse_problem_to_json(const SparseProblem& p) {
  validate_problem(p);
  nlohmann::json j;
  j["rows"] = p.dictionary_phi.rows();
  j["cols"] = p.dictionary_phi.cols();
  j["direct_atom_index"] = p.direct_atom_index;
  j["noise_variance"] = doubles_to_base64({p.noise_variance});
  j["wavelength"] = doubles_to_base64({p.wavelength});
  std::vector<double> gt, gp;
  for (const auto& a : p.grid_angles) {
    gt.push_back(a.first);
    gp.push_back(a.second);
  }
  j["grid_theta"] = doubles_to_base64(gt);
  j["grid_phi"] = doubles_to_base64(gp);
  j["virtual_x"] = doubles_to_base64(p.virtual_x);
  j["virtual_z"] = doubles_to_base64(p.virtual_z);
  std::vector<cplx> phi_flat;
  phi_flat.reserve(std::size_t(p.dictionary_phi.size()));
  for (Eigen::Index r = 0; r < p.dictionary_phi.rows(); ++r)
    for (Eigen::Index c = 0; c < p.dictionary_phi.cols(); ++c)
      phi_flat.push_back(p.dictionary_phi(r, c));
  j["phi"] = complex_to_base64(phi_flat);
  std::vector<cplx> y(p.observation_y.data(),
                      p.observation_y.data() + p.observation_y.size());
  j["y"] = complex_to_base64(y);
  return j;
}

inline SparseProblem sparse_problem_from_json(const nlohmann::json& j) {
  SparseProblem p;
  const auto rows = j.at("rows").get<Eigen::Index>();
  const auto cols = j.at("cols").get<Eigen::Index>();
  check(rows >= 0 && cols >= 1, "invalid serialized dimensions");
  p.direct_atom_index = j.at("direct_atom_index").get<std::size_t>();
  p.noise_variance = doubles_from_base64(j.at("noise_variance").get<std::string>()).at(0);
  p.wavelength = doubles_from_base64(j.at("wavelength").get<std::string>()).at(0);
  const auto gt = doubles_from_base64(j.at("grid_theta").get<std::string>());
  const auto gp = doubles_from_base64(j.at("grid_phi").get<std::string>());
  check(gt.size() == gp.size() && Eigen::Index(gt.size()) == cols,
        "serialized grid does not match the column count");
  for (std::size_t i = 0; i < gt.size(); ++i)
    p.grid_angles.emplace_back(gt[i], gp[i]);
  p.virtual_x = doubles_from_base64(j.at("virtual_x").get<std::string>());
  p.virtual_z = doubles_from_base64(j.at("virtual_z").get<std::string>());
  const auto phi_flat = complex_from_base64(j.at("phi").get<std::string>());
  check(Eigen::Index(phi_flat.size()) == rows * cols,
        "serialized dictionary size mismatch");
  p.dictionary_phi.resize(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c)
      p.dictionary_phi(r, c) = phi_flat[std::size_t(r * cols + c)];
  const auto y = complex_from_base64(j.at("y").get<std::string>());
  check(y.empty() || Eigen::Index(y.size()) == rows,
        "serialized observation size mismatch");
  p.observation_y.resize(Eigen::Index(y.size()));
  for (std::size_t i = 0; i < y.size(); ++i)
    p.observation_y(Eigen::Index(i)) = y[i];
  validate_problem(p);
  return p;
}

}  // namespace fim

#endif  // FIM_ESTIMATION_HPP
