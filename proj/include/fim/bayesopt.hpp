// SPDX-License-Identifier: Apache-2.0
//
// Part of fimkit, a flexible-metasurface link simulation and estimation toolkit.
//
// Constrained Bayesian optimization of element positions (and optionally
// phases) under the minimum-spacing constraint. A squared-exponential
// Gaussian process models the received power; expected improvement picks the
// next configuration; infeasible candidates are discarded, never repaired.

#ifndef FIM_BAYESOPT_HPP
#define FIM_BAYESOPT_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <numeric>
#include <ostream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "fim/channel.hpp"
#include "fim/errors.hpp"
#include "fim/geometry.hpp"
#include "fim/interference.hpp"
#include "fim/math_util.hpp"
#include "fim/rng.hpp"
#include "fim/serialize.hpp"

namespace fim {

// ---------------------------------------------------------------------------
// Gaussian-process surrogate

struct GpPosterior {
  double mean = 0.0;
  double variance = 0.0;
};

// Zero-mean GP over centered values: the posterior mean reverts to the sample
// mean of the observations far from all data, the variance to signal_variance.
struct GpSurrogate {
  std::vector<double> length_scales;  // one per dimension
  double signal_variance = 1.0;
  double noise_jitter = 1e-8;  // relative to signal_variance

  std::vector<std::vector<double>> observed_points;
  std::vector<double> observed_values;

  // Fitted state.
  bool fitted = false;
  double value_mean = 0.0;
  double jitter_used = 0.0;
  Eigen::MatrixXd chol_l;
  Eigen::VectorXd alpha;
  double log_marginal = 0.0;
};

namespace detail {

inline double sq_exp_kernel(const GpSurrogate& s, const std::vector<double>& a,
                            const std::vector<double>& b) {
  double e = 0.0;
  for (std::size_t d = 0; d < s.length_scales.size(); ++d) {
    const double u = (a[d] - b[d]) / s.length_scales[d];
    e += u * u;
  }
  return s.signal_variance * std::exp(-0.5 * e);
}

}  // namespace detail

inline GpSurrogate gp_fit(GpSurrogate s,
                          const std::vector<std::vector<double>>& points,
                          const std::vector<double>& values) {
  check(!points.empty() && points.size() == values.size(),
        "need at least one observation with matching value count");
  check(!s.length_scales.empty(), "length scales must be set before fitting");
  for (double l : s.length_scales) check_positive(l, "length_scale");
  check_positive(s.signal_variance, "signal_variance");
  for (double v : values) check_finite(v, "observed value");
  const std::size_t dim = s.length_scales.size();
  for (const auto& p : points)
    check(p.size() == dim, "observation dimension mismatch");

  s.observed_points = points;
  s.observed_values = values;
  const Eigen::Index m = Eigen::Index(points.size());
  s.value_mean = pairwise_sum(values) / double(points.size());

  Eigen::MatrixXd k(m, m);
  for (Eigen::Index i = 0; i < m; ++i)
    for (Eigen::Index j = 0; j <= i; ++j) {
      const double v = detail::sq_exp_kernel(s, points[i], points[j]);
      k(i, j) = v;
      k(j, i) = v;
    }
  Eigen::VectorXd y(m);
  for (Eigen::Index i = 0; i < m; ++i) y(i) = values[i] - s.value_mean;

  // Escalate the diagonal jitter until the Cholesky succeeds.
  double jitter = std::max(s.noise_jitter, 0.0) * s.signal_variance;
  const double jitter_cap = 1e-2 * s.signal_variance;
  for (;;) {
    Eigen::MatrixXd kj = k;
    kj.diagonal().array() += jitter;
    Eigen::LLT<Eigen::MatrixXd> llt(kj);
    if (llt.info() == Eigen::Success) {
      s.chol_l = llt.matrixL();
      s.alpha = llt.solve(y);
      s.jitter_used = jitter;
      double log_det = 0.0;
      for (Eigen::Index i = 0; i < m; ++i) log_det += std::log(s.chol_l(i, i));
      s.log_marginal = -0.5 * y.dot(s.alpha) - log_det -
                       0.5 * double(m) * std::log(kTwoPi);
      s.fitted = true;
      return s;
    }
    if (jitter >= jitter_cap)
      throw ConditioningError(
          "surrogate covariance is not positive definite even at the maximum "
          "diagonal jitter");
    jitter = std::max(jitter * 10.0, 1e-12 * s.signal_variance);
  }
}

inline GpPosterior gp_posterior(const GpSurrogate& s,
                                const std::vector<double>& query) {
  check(s.fitted, "surrogate must be fitted before querying");
  check(query.size() == s.length_scales.size(), "query dimension mismatch");
  const Eigen::Index m = Eigen::Index(s.observed_points.size());
  Eigen::VectorXd kstar(m);
  for (Eigen::Index i = 0; i < m; ++i)
    kstar(i) = detail::sq_exp_kernel(s, s.observed_points[i], query);
  GpPosterior post;
  post.mean = s.value_mean + kstar.dot(s.alpha);
  const Eigen::VectorXd w =
      s.chol_l.triangularView<Eigen::Lower>().solve(kstar);
  post.variance = s.signal_variance - w.squaredNorm();
  if (post.variance < 0.0) post.variance = 0.0;  // clamp FP round-off
  return post;
}

// EI for maximization: E[max(value - best, 0)] under N(mean, sigma^2).
inline double expected_improvement_value(double mean, double sigma,
                                         double best) {
  if (!(sigma > 0.0)) return 0.0;
  const double z = (mean - best) / sigma;
  const double ei = (mean - best) * normal_cdf(z) + sigma * normal_pdf(z);
  return ei > 0.0 ? ei : 0.0;
}

inline double expected_improvement(const GpSurrogate& s,
                                   const std::vector<double>& query,
                                   double best_so_far) {
  const GpPosterior post = gp_posterior(s, query);
  return expected_improvement_value(post.mean, std::sqrt(post.variance),
                                    best_so_far);
}

// ---------------------------------------------------------------------------
// Constrained optimizer

struct BoProblem {
  OptimizationMode mode = OptimizationMode::EmOnly;  // EmOnly or EmPbf
  std::size_t num_elements = 1;
  std::size_t dimension = 0;  // 2N (EmOnly) or 3N (EmPbf)
  GeometryTemplate box;       // region bound, spacing, wavelength
  std::function<double(const std::vector<double>&)> objective;
  std::size_t budget = 100;
  std::uint64_t seed = 0;
};

// Coordinate layout: x_0, z_0, ..., x_{N-1}, z_{N-1}[, v_0, ..., v_{N-1}].
inline std::size_t bo_dimension(OptimizationMode mode, std::size_t n) {
  check(mode != OptimizationMode::PbfOnly,
        "phase-only configurations have a closed-form optimum; the surrogate "
        "optimizer covers movement modes only");
  return (mode == OptimizationMode::EmPbf ? 3 : 2) * n;
}

inline ModeSolution decode_bo_point(const BoProblem& p,
                                    const std::vector<double>& x,
                                    double value) {
  const std::size_t n = p.num_elements;
  ModeSolution s;
  s.mode = p.mode;
  s.solver = SolverKind::BayesOpt;
  std::vector<double> xs(n), zs(n);
  for (std::size_t i = 0; i < n; ++i) {
    xs[i] = x[2 * i];
    zs[i] = x[2 * i + 1];
  }
  s.geometry = make_geometry(std::move(xs), std::move(zs), p.box.region_bound,
                             p.box.d_min, p.box.wavelength);
  s.phases.assign(n, 0.0);
  if (p.mode == OptimizationMode::EmPbf)
    for (std::size_t i = 0; i < n; ++i) s.phases[i] = x[2 * n + i];
  s.objective_value = value;
  return s;
}

// Builds the received-power objective for a channel; decoding the optimizer's
// best point through decode_bo_point reproduces objective_value exactly.
inline BoProblem make_bo_problem(const ChannelRealization& c, std::size_t n,
                                 OptimizationMode mode,
                                 const GeometryTemplate& box,
                                 std::size_t budget, std::uint64_t seed) {
  validate_channel(c);
  check(n >= 1, "element count must be at least 1");
  BoProblem p;
  p.mode = mode;
  p.num_elements = n;
  p.dimension = bo_dimension(mode, n);
  p.box = box;
  p.budget = budget;
  p.seed = seed;
  ChannelRealization chan = c;
  GeometryTemplate t = box;
  p.objective = [chan, t, n, mode](const std::vector<double>& x) {
    FimGeometry g;
    g.region_bound = t.region_bound;
    g.d_min = t.d_min;
    g.wavelength = t.wavelength;
    g.element_x.resize(n);
    g.element_z.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      g.element_x[i] = x[2 * i];
      g.element_z[i] = x[2 * i + 1];
    }
    PhaseVector v(n, 0.0);
    if (mode == OptimizationMode::EmPbf)
      for (std::size_t i = 0; i < n; ++i) v[i] = x[2 * n + i];
    return received_power(g, v, chan);
  };
  return p;
}

struct BoTraceRow {
  std::size_t iteration = 0;  // 1-based evaluation index
  double value = 0.0;
  double best_value = 0.0;
  std::vector<double> point;
};

struct BoTrace {
  std::vector<BoTraceRow> rows;
};

inline void bo_trace_to_csv(const BoTrace& trace, std::ostream& os) {
  os << "iteration,value,best_value,coordinates\n";
  for (const auto& r : trace.rows) {
    os << r.iteration << ',' << format_double(r.value) << ','
       << format_double(r.best_value) << ',';
    for (std::size_t d = 0; d < r.point.size(); ++d)
      os << (d ? ";" : "") << format_double(r.point[d]);
    os << '\n';
  }
}

namespace detail {

struct BoBox {
  std::vector<double> lo, hi;
  std::size_t n = 0;        // elements
  std::size_t pos_dims = 0; // 2n
  double d_min = 0.0;
};

inline BoBox make_bo_box(const BoProblem& p) {
  BoBox b;
  b.n = p.num_elements;
  b.pos_dims = 2 * p.num_elements;
  b.d_min = p.box.d_min;
  const std::size_t dim = p.dimension;
  b.lo.assign(dim, -p.box.region_bound);
  b.hi.assign(dim, p.box.region_bound);
  for (std::size_t d = b.pos_dims; d < dim; ++d) {
    b.lo[d] = 0.0;
    b.hi[d] = std::nextafter(kTwoPi, 0.0);  // phases live in [0, 2*pi)
  }
  return b;
}

inline bool bo_feasible(const BoBox& b, const std::vector<double>& x) {
  for (std::size_t d = 0; d < x.size(); ++d)
    if (x[d] < b.lo[d] || x[d] > b.hi[d]) return false;
  if (b.d_min <= 0.0) return true;
  const double limit = b.d_min * b.d_min;
  for (std::size_t i = 0; i < b.n; ++i)
    for (std::size_t j = i + 1; j < b.n; ++j) {
      const double dx = x[2 * i] - x[2 * j];
      const double dz = x[2 * i + 1] - x[2 * j + 1];
      if (dx * dx + dz * dz < limit) return false;
    }
  return true;
}

// Latin hypercube batch: each coordinate stratified into `count` bins with a
// random permutation per dimension.
inline std::vector<std::vector<double>> latin_hypercube(const BoBox& b,
                                                        std::size_t count,
                                                        Rng& rng) {
  const std::size_t dim = b.lo.size();
  std::vector<std::vector<double>> pts(count, std::vector<double>(dim));
  std::vector<std::size_t> perm(count);
  for (std::size_t d = 0; d < dim; ++d) {
    std::iota(perm.begin(), perm.end(), std::size_t(0));
    for (std::size_t i = count; i > 1; --i)
      std::swap(perm[i - 1], perm[rng.uniform_index(i)]);
    for (std::size_t i = 0; i < count; ++i) {
      const double u = (double(perm[i]) + rng.uniform()) / double(count);
      pts[i][d] = b.lo[d] + u * (b.hi[d] - b.lo[d]);
    }
  }
  return pts;
}

// Deterministic spacing-respecting fallback layout used when rejection
// sampling cannot produce a feasible point.
inline std::vector<double> packed_layout(const BoBox& b, Rng& rng) {
  std::vector<double> x(b.lo.size());
  const double r = b.hi[0];
  const double step = std::max(b.d_min, 1e-6);
  const std::size_t per_axis = std::size_t((2.0 * r) / step) + 1;
  for (std::size_t i = 0; i < b.n; ++i) {
    const std::size_t row = i / per_axis, col = i % per_axis;
    x[2 * i] = -r + double(col) * step;
    x[2 * i + 1] = -r + double(row) * step;
  }
  for (std::size_t d = b.pos_dims; d < x.size(); ++d)
    x[d] = rng.uniform(b.lo[d], b.hi[d]);
  return x;
}

}  // namespace detail

// Maximizes the objective over feasible configurations. Every evaluated point
// satisfies the box and spacing constraints; the best-so-far trace is
// non-decreasing; identical (seed, budget) inputs give identical traces.
inline ModeSolution optimize(const BoProblem& p, BoTrace* trace = nullptr) {
  check(bool(p.objective), "objective callable must be set");
  check(p.num_elements >= 1, "element count must be at least 1");
  check(p.dimension == bo_dimension(p.mode, p.num_elements),
        "dimension must equal 2N (movement only) or 3N (movement + phases)");
  const detail::BoBox box = detail::make_bo_box(p);
  const std::size_t dim = p.dimension;

  // Packing pre-check: a d_min lattice must be able to hold all elements.
  if (box.d_min > 0.0) {
    const double per_axis =
        std::floor(2.0 * p.box.region_bound / box.d_min) + 1.0;
    if (per_axis * per_axis < double(p.num_elements))
      throw FeasibilityError(
          "cannot place " + std::to_string(p.num_elements) +
          " elements with the required spacing inside the region; binding "
          "constraint: d_min = " +
          format_double(box.d_min));
  }

  const std::size_t init_count = std::max<std::size_t>(5, 2 * dim);
  check(p.budget >= init_count,
        "budget must cover the initial design of max(5, 2*dimension) points");

  Rng rng(p.seed);
  std::vector<std::vector<double>> xs;
  std::vector<double> ys;
  xs.reserve(p.budget);
  ys.reserve(p.budget);
  std::size_t best_idx = 0;

  auto evaluate = [&](const std::vector<double>& x) {
    const double y = p.objective(x);
    check_finite(y, "objective value");
    xs.push_back(x);
    ys.push_back(y);
    if (y > ys[best_idx]) best_idx = xs.size() - 1;
    if (trace)
      trace->rows.push_back(
          BoTraceRow{xs.size(), y, ys[best_idx], x});
  };

  // Initial design: feasible Latin hypercube, individual redraws on
  // rejection, deterministic packed layout as the last resort.
  {
    auto lhs = detail::latin_hypercube(box, init_count, rng);
    for (auto& x : lhs) {
      bool ok = detail::bo_feasible(box, x);
      for (int attempt = 0; !ok && attempt < 1000; ++attempt) {
        for (std::size_t d = 0; d < dim; ++d)
          x[d] = rng.uniform(box.lo[d], box.hi[d]);
        ok = detail::bo_feasible(box, x);
      }
      if (!ok) x = detail::packed_layout(box, rng);
      check(detail::bo_feasible(box, x), "initial design point infeasible");
      evaluate(x);
    }
  }

  // Kernel defaults: length scale = box width / 4, amplitude = initial
  // sample variance; both rescaled by marginal-likelihood grid refits.
  GpSurrogate proto;
  proto.length_scales.resize(dim);
  for (std::size_t d = 0; d < dim; ++d)
    proto.length_scales[d] = (box.hi[d] - box.lo[d]) / 4.0;
  {
    const auto ms = mean_stderr(ys);
    double var = 0.0;
    for (double y : ys) var += (y - ms.mean) * (y - ms.mean);
    var /= double(ys.size() > 1 ? ys.size() - 1 : 1);
    proto.signal_variance = std::max(var, 1e-12);
  }

  GpSurrogate gp;
  std::size_t evals_since_refit = 0;
  while (xs.size() < p.budget) {
    gp = gp_fit(proto, xs, ys);
    if (evals_since_refit >= 10) {
      evals_since_refit = 0;
      // Maximum-likelihood refit over a compounding multiplier grid.
      GpSurrogate best_gp = gp;
      GpSurrogate best_proto = proto;
      for (double ml : {0.5, 1.0, 2.0})
        for (double mv : {0.5, 1.0, 2.0}) {
          if (ml == 1.0 && mv == 1.0) continue;
          GpSurrogate cand = proto;
          for (auto& l : cand.length_scales) l *= ml;
          cand.signal_variance *= mv;
          GpSurrogate fitted = gp_fit(cand, xs, ys);
          if (fitted.log_marginal > best_gp.log_marginal) {
            best_gp = fitted;
            best_proto = cand;
          }
        }
      gp = best_gp;
      proto = best_proto;
    }

    const double f_best = ys[best_idx];
    std::vector<std::vector<double>> cands;
    std::vector<double> scores;
    auto consider = [&](const std::vector<double>& x) {
      if (!detail::bo_feasible(box, x)) return std::size_t(SIZE_MAX);
      cands.push_back(x);
      scores.push_back(expected_improvement(gp, x, f_best));
      return cands.size() - 1;
    };

    // Candidate pool: a fresh Latin hypercube plus perturbations of the
    // incumbent at two scales.
    for (int batch = 0; batch < 4 && cands.size() < 8; ++batch)
      for (const auto& x : detail::latin_hypercube(box, 64, rng))
        consider(x);
    for (double scale : {0.02, 0.1})
      for (int rep = 0; rep < 4; ++rep) {
        std::vector<double> x = xs[best_idx];
        for (std::size_t d = 0; d < dim; ++d) {
          x[d] += scale * (box.hi[d] - box.lo[d]) * rng.normal();
          x[d] = std::clamp(x[d], box.lo[d], box.hi[d]);
        }
        consider(x);
      }
    if (cands.empty()) {
      // Feasible region too thin for sampling; fall back to the packed
      // layout with fresh phases so the iteration still evaluates.
      consider(detail::packed_layout(box, rng));
      if (cands.empty()) throw FeasibilityError(
          "candidate generation found no feasible configuration");
    }

    // Multi-start coordinate ascent on EI from the top-scoring candidates.
    std::vector<std::size_t> order(cands.size());
    std::iota(order.begin(), order.end(), std::size_t(0));
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return scores[a] > scores[b];
    });
    const std::size_t starts = std::min<std::size_t>(3, order.size());
    for (std::size_t s0 = 0; s0 < starts; ++s0) {
      std::vector<double> x = cands[order[s0]];
      double fx = scores[order[s0]];
      for (int pass = 0; pass < 2; ++pass) {
        const double shrink = pass == 0 ? 8.0 : 16.0;
        for (std::size_t d = 0; d < dim; ++d) {
          const double w = (box.hi[d] - box.lo[d]) / shrink;
          std::vector<double> y = x;
          for (int t = -3; t <= 3; ++t) {
            if (t == 0) continue;
            y[d] = std::clamp(x[d] + w * double(t) / 3.0, box.lo[d], box.hi[d]);
            const std::size_t idx = consider(y);
            if (idx != SIZE_MAX && scores[idx] > fx) {
              fx = scores[idx];
              x = cands[idx];
            }
          }
        }
      }
    }

    // Deterministic argmax: strict improvement keeps the lowest index.
    std::size_t pick = 0;
    for (std::size_t i = 1; i < cands.size(); ++i)
      if (scores[i] > scores[pick]) pick = i;
    evaluate(cands[pick]);
    ++evals_since_refit;
  }

  return decode_bo_point(p, xs[best_idx], ys[best_idx]);
}

}  // namespace fim

#endif  // FIM_BAYESOPT_HPP
