// SPDX-License-Identifier: Apache-2.0
//
// Part of fimkit, a flexible-metasurface link simulation and estimation toolkit.
//
// Forward model of the metasurface-aided SISO link. The cascaded channel is a
// sum over L*P path products; each stored gain is alpha_l * conj(beta_p)
// pre-scaled by 1/sqrt(LP) so downstream power formulas need no extra factor.
// Angles are virtual: theta = theta_B - theta_U and phi = phi_B - phi_U, each
// in [-2, 2]. Physical angles are never stored.

#ifndef FIM_CHANNEL_HPP
#define FIM_CHANNEL_HPP

#include <cmath>
#include <complex>
#include <cstdint>
#include <utility>
#include <vector>

#include "fim/errors.hpp"
#include "fim/geometry.hpp"
#include "fim/math_util.hpp"
#include "fim/rng.hpp"

namespace fim {

struct PathSet {
  std::vector<cplx> gains;
  std::vector<double> virtual_theta;
  std::vector<double> virtual_phi;

  std::size_t size() const { return gains.size(); }
};

inline void validate_path_set(const PathSet& p, double angle_limit) {
  check(p.gains.size() == p.virtual_theta.size() &&
            p.gains.size() == p.virtual_phi.size(),
        "path set lists must have equal length");
  for (std::size_t i = 0; i < p.size(); ++i) {
    check(std::abs(p.virtual_theta[i]) <= angle_limit &&
              std::abs(p.virtual_phi[i]) <= angle_limit,
          "virtual angle outside the admissible range");
  }
}

struct ChannelRealization {
  int L = 1;
  int P = 1;
  PathSet cascaded;  // L*P entries; gains carry the 1/sqrt(LP) factor
  cplx direct_gamma{0.0, 0.0};
};

inline void validate_channel(const ChannelRealization& c) {
  check(c.L >= 1 && c.P >= 1, "L and P must be at least 1");
  check(c.cascaded.size() == std::size_t(c.L) * std::size_t(c.P),
        "cascaded path count must equal L*P");
  validate_path_set(c.cascaded, 2.0 + 1e-12);
}

struct NoiseModel {
  double variance_sigma2 = 0.0;  // SNR is defined as 1 / variance
};

// Unit-norm steering vector: entry n is (1/sqrt(N)) e^{j 2pi/lambda (x_n phi + z_n theta)}.
inline std::vector<cplx> array_manifold(const FimGeometry& g, double theta,
                                        double phi) {
  check(!g.element_x.empty(), "array_manifold requires a non-empty geometry");
  check(std::abs(theta) <= 2.0 + 1e-12 && std::abs(phi) <= 2.0 + 1e-12,
        "virtual angles must lie in [-2, 2]");
  const std::size_t n = g.size();
  const double kappa = kTwoPi / g.wavelength;
  const double scale = 1.0 / std::sqrt(double(n));
  std::vector<cplx> a(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double psi = kappa * (g.element_x[i] * phi + g.element_z[i] * theta);
    a[i] = cplx(scale * std::cos(psi), scale * std::sin(psi));
  }
  return a;
}

// h_cas = sum_{l,p} gain_{lp} sum_n e^{j v_n} e^{j 2pi/lambda (theta z_n + phi x_n)}.
inline cplx cascaded_channel(const FimGeometry& g, const PhaseVector& v,
                             const ChannelRealization& c) {
  check(v.size() == g.size(), "phase vector length must match element count");
  const double kappa = kTwoPi / g.wavelength;
  const std::size_t n = g.size();
  cplx total{0.0, 0.0};
  for (std::size_t e = 0; e < c.cascaded.size(); ++e) {
    const double th = c.cascaded.virtual_theta[e];
    const double ph = c.cascaded.virtual_phi[e];
    cplx element_sum{0.0, 0.0};
    for (std::size_t i = 0; i < n; ++i) {
      const double psi =
          v[i] + kappa * (th * g.element_z[i] + ph * g.element_x[i]);
      element_sum += cplx(std::cos(psi), std::sin(psi));
    }
    total += c.cascaded.gains[e] * element_sum;
  }
  return total;
}

inline double received_power(const FimGeometry& g, const PhaseVector& v,
                             const ChannelRealization& c) {
  return std::norm(cascaded_channel(g, v, c) + c.direct_gamma);
}

// Builds the cascaded realization from per-side parameters. Gains become
// alpha_l conj(beta_p) / sqrt(LP); angles become per-pair differences.
inline ChannelRealization make_cascaded_channel(
    const std::vector<cplx>& alphas, const std::vector<cplx>& betas,
    const std::vector<double>& theta_b, const std::vector<double>& phi_b,
    const std::vector<double>& theta_u, const std::vector<double>& phi_u,
    cplx gamma) {
  const std::size_t L = alphas.size();
  const std::size_t P = betas.size();
  check(L >= 1 && P >= 1, "need at least one path on each side");
  check(theta_b.size() == L && phi_b.size() == L, "B-side angle count mismatch");
  check(theta_u.size() == P && phi_u.size() == P, "U-side angle count mismatch");
  ChannelRealization c;
  c.L = int(L);
  c.P = int(P);
  c.direct_gamma = gamma;
  const double scale = 1.0 / std::sqrt(double(L * P));
  c.cascaded.gains.reserve(L * P);
  for (std::size_t l = 0; l < L; ++l) {
    for (std::size_t p = 0; p < P; ++p) {
      c.cascaded.gains.push_back(alphas[l] * std::conj(betas[p]) * scale);
      c.cascaded.virtual_theta.push_back(theta_b[l] - theta_u[p]);
      c.cascaded.virtual_phi.push_back(phi_b[l] - phi_u[p]);
    }
  }
  validate_channel(c);
  return c;
}

// Angle source for sample_channel: continuous draws per-side angles uniformly
// on [-1, 1]; a grid source draws cascaded angle pairs from an explicit list.
struct AngleGridSource {
  const std::vector<std::pair<double, double>>* pairs = nullptr;  // (theta, phi)
  std::size_t skip_index = std::size_t(-1);  // grid entry reserved elsewhere
};

inline ChannelRealization sample_channel(int L, int P, double sigma_alpha,
                                         double sigma_beta, double sigma_gamma,
                                         std::uint64_t seed,
                                         const AngleGridSource* grid = nullptr) {
  check(L >= 1 && P >= 1, "L and P must be at least 1");
  check_non_negative(sigma_alpha, "sigma_alpha");
  check_non_negative(sigma_beta, "sigma_beta");
  check_non_negative(sigma_gamma, "sigma_gamma");
  Rng rng(seed);
  std::vector<cplx> alphas(L), betas(P);
  for (auto& a : alphas) a = rng.cnormal(sigma_alpha * sigma_alpha);
  for (auto& b : betas) b = rng.cnormal(sigma_beta * sigma_beta);
  const cplx gamma = rng.cnormal(sigma_gamma * sigma_gamma);

  ChannelRealization c;
  c.L = L;
  c.P = P;
  c.direct_gamma = gamma;
  const double scale = 1.0 / std::sqrt(double(L) * double(P));
  if (grid == nullptr) {
    std::vector<double> tb(L), pb(L), tu(P), pu(P);
    for (int l = 0; l < L; ++l) {
      tb[l] = rng.uniform(-1.0, 1.0);
      pb[l] = rng.uniform(-1.0, 1.0);
    }
    for (int p = 0; p < P; ++p) {
      tu[p] = rng.uniform(-1.0, 1.0);
      pu[p] = rng.uniform(-1.0, 1.0);
    }
    for (int l = 0; l < L; ++l) {
      for (int p = 0; p < P; ++p) {
        c.cascaded.gains.push_back(alphas[l] * std::conj(betas[p]) * scale);
        c.cascaded.virtual_theta.push_back(tb[l] - tu[p]);
        c.cascaded.virtual_phi.push_back(pb[l] - pu[p]);
      }
    }
  } else {
    check(grid->pairs != nullptr && !grid->pairs->empty(),
          "grid angle source must list at least one pair");
    const auto& pairs = *grid->pairs;
    const std::size_t usable =
        pairs.size() - (grid->skip_index < pairs.size() ? 1 : 0);
    check(usable >= 1, "grid angle source has no usable entries");
    for (int l = 0; l < L; ++l) {
      for (int p = 0; p < P; ++p) {
        std::size_t idx = rng.uniform_index(usable);
        if (grid->skip_index < pairs.size() && idx >= grid->skip_index) ++idx;
        c.cascaded.gains.push_back(alphas[l] * std::conj(betas[p]) * scale);
        c.cascaded.virtual_theta.push_back(pairs[idx].first);
        c.cascaded.virtual_phi.push_back(pairs[idx].second);
      }
    }
  }
  validate_channel(c);
  return c;
}

// Sum of stored cascaded gains, i.e. (1/sqrt(LP)) sum alpha_l conj(beta_p).
inline cplx cascaded_gain_sum(const ChannelRealization& c) {
  return pairwise_sum(c.cascaded.gains);
}

// Sum of stored gain magnitudes, the ingredient of the power upper bound.
inline double cascaded_gain_abs_sum(const ChannelRealization& c) {
  std::vector<double> mags(c.cascaded.size());
  for (std::size_t i = 0; i < mags.size(); ++i)
    mags[i] = std::abs(c.cascaded.gains[i]);
  return pairwise_sum(mags);
}

}  // namespace fim

#endif  // FIM_CHANNEL_HPP
