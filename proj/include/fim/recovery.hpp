// SPDX-License-Identifier: Apache-2.0
//
// Part of fimkit, a flexible-metasurface link simulation and estimation toolkit.
//
// Sparse recovery over a SparseProblem: greedy (OMP) and proximal (FISTA)
// baselines plus a variational Bayesian family. The Bayesian solvers share
// one set of hyperparameter update rules and differ only in how the
// coefficient posterior is factorized: jointly (full covariance), per scalar
// (diagonal covariance), or per cluster of atoms (block covariance). The
// clustered solver additionally prunes atoms whose precision diverges and
// periodically re-clusters the survivors.

#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <complex>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include "fim/errors.hpp"
#include "fim/estimation.hpp"
#include "fim/rng.hpp"
#include <json.hpp>

namespace fim {

// Gamma hyperpriors on the per-atom precisions (a, b) and on the noise
// precision (c, d); non-informative by default. prune_threshold_rho only
// affects the clustered solver; +infinity disables pruning.
struct SblHyperparams {
  double a = 1e-6;
  double b = 1e-6;
  double c = 1e-6;
  double d = 1e-6;
  int max_iterations = 400;
  double tolerance = 1e-8;
  double prune_threshold_rho = 1e8;
};

inline void validate_hyperparams(const SblHyperparams& h) {
  check_positive(h.a, "hyperparameter a");
  check_positive(h.b, "hyperparameter b");
  check_positive(h.c, "hyperparameter c");
  check_positive(h.d, "hyperparameter d");
  check(h.max_iterations >= 1, "max_iterations must be at least 1");
  check_positive(h.tolerance, "tolerance");
  check(h.prune_threshold_rho > 0.0, "prune threshold must be positive");
}

// Variational posterior snapshot: mean, covariance diagonal, expected atom
// precisions, expected noise precision, and the surviving atom set.
struct PosteriorState {
  Eigen::VectorXcd mean_mu;
  Eigen::VectorXd sigma_diag;
  Eigen::VectorXd rho_expectations;
  double noise_precision_expectation = 0.0;
  std::vector<std::size_t> active_atoms;
};

// Per-iteration record for reduction and sanity tests. sigma_diag holds the
// covariance diagonal used by that iteration's hyperparameter updates; rho
// and noise_precision hold the values after the updates.
struct SolverTrace {
  std::vector<Eigen::VectorXcd> mu;
  std::vector<Eigen::VectorXd> sigma_diag;
  std::vector<Eigen::VectorXd> rho;
  std::vector<double> noise_precision;
  PosteriorState final_state;
};

struct ClusterAssignment {
  std::size_t num_clusters_d = 1;
  std::vector<std::size_t> assignment;  // atom index -> cluster id
  std::string feature_description;
};

namespace detail {

// Feature vectors for atom clustering: rows of the absolute Gram matrix of
// the column-normalized dictionary restricted to `atoms`. Atoms that point
// in similar directions get similar rows and end up in one cluster.
inline Eigen::MatrixXd cluster_features(const Eigen::MatrixXcd& phi,
                                        const std::vector<std::size_t>& atoms) {
  const std::size_t n = atoms.size();
  Eigen::MatrixXcd cols(phi.rows(), Eigen::Index(n));
  for (std::size_t i = 0; i < n; ++i) {
    cols.col(Eigen::Index(i)) = phi.col(Eigen::Index(atoms[i]));
    const double norm = cols.col(Eigen::Index(i)).norm();
    if (norm > 0.0) cols.col(Eigen::Index(i)) /= norm;
  }
  return (cols.adjoint() * cols).cwiseAbs();
}

// Lloyd's algorithm with k-means++ seeding over the rows of `features`.
// Deterministic given the generator state; empty clusters are re-seeded from
// the point farthest from its assigned center. Labels are canonicalized so
// cluster ids ascend with each cluster's smallest row index.
inline std::vector<std::size_t> kmeans_assign(const Eigen::MatrixXd& features,
                                              std::size_t d, Rng& rng) {
  const std::size_t n = std::size_t(features.rows());
  check(d >= 1 && d <= n, "cluster count must lie in [1, atom count]");
  std::vector<std::size_t> labels(n, 0);
  if (d == 1) return labels;
  if (d == n) {
    for (std::size_t i = 0; i < n; ++i) labels[i] = i;
    return labels;
  }

  Eigen::MatrixXd centers(Eigen::Index(d), features.cols());
  std::vector<double> dist2(n);
  const std::size_t first = rng.uniform_index(n);
  centers.row(0) = features.row(Eigen::Index(first));
  for (std::size_t i = 0; i < n; ++i)
    dist2[i] = (features.row(Eigen::Index(i)) - centers.row(0)).squaredNorm();
  for (std::size_t k = 1; k < d; ++k) {
    double total = 0.0;
    for (double v : dist2) total += v;
    std::size_t pick = 0;
    if (total > 0.0) {
      const double u = rng.uniform() * total;
      double acc = 0.0;
      pick = n - 1;
      for (std::size_t i = 0; i < n; ++i) {
        acc += dist2[i];
        if (acc > u) {
          pick = i;
          break;
        }
      }
    } else {
      // All remaining points coincide with a center; take the lowest index
      // not yet used as a center.
      std::vector<char> used(n, 0);
      for (std::size_t kk = 0; kk < k; ++kk)
        for (std::size_t i = 0; i < n; ++i)
          if ((features.row(Eigen::Index(i)) - centers.row(Eigen::Index(kk)))
                  .squaredNorm() == 0.0)
            used[i] = 1;
      while (pick + 1 < n && used[pick]) ++pick;
    }
    centers.row(Eigen::Index(k)) = features.row(Eigen::Index(pick));
    for (std::size_t i = 0; i < n; ++i)
      dist2[i] = std::min(dist2[i], (features.row(Eigen::Index(i)) -
                                     centers.row(Eigen::Index(k)))
                                        .squaredNorm());
  }

  for (int pass = 0; pass < 100; ++pass) {
    bool changed = false;
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < d; ++k) {
        const double dd = (features.row(Eigen::Index(i)) -
                           centers.row(Eigen::Index(k)))
                              .squaredNorm();
        if (dd < best_d) {
          best_d = dd;
          best = k;
        }
      }
      if (labels[i] != best) {
        labels[i] = best;
        changed = true;
      }
    }
    std::vector<std::size_t> counts(d, 0);
    for (std::size_t i = 0; i < n; ++i) ++counts[labels[i]];
    for (std::size_t k = 0; k < d; ++k) {
      if (counts[k] != 0) continue;
      // Re-seed the empty cluster from the farthest point overall.
      std::size_t far = 0;
      double far_d = -1.0;
      for (std::size_t i = 0; i < n; ++i) {
        if (counts[labels[i]] <= 1) continue;
        const double dd = (features.row(Eigen::Index(i)) -
                           centers.row(Eigen::Index(labels[i])))
                              .squaredNorm();
        if (dd > far_d) {
          far_d = dd;
          far = i;
        }
      }
      --counts[labels[far]];
      labels[far] = k;
      ++counts[k];
      centers.row(Eigen::Index(k)) = features.row(Eigen::Index(far));
      changed = true;
    }
    if (!changed) break;
    centers.setZero();
    for (std::size_t i = 0; i < n; ++i)
      centers.row(Eigen::Index(labels[i])) += features.row(Eigen::Index(i));
    for (std::size_t k = 0; k < d; ++k)
      if (counts[k] > 0) centers.row(Eigen::Index(k)) /= double(counts[k]);
  }

  // Canonical labels: clusters ordered by their smallest member index.
  std::vector<std::size_t> order;
  std::vector<std::size_t> remap(d, d);
  for (std::size_t i = 0; i < n; ++i)
    if (remap[labels[i]] == d) {
      remap[labels[i]] = order.size();
      order.push_back(labels[i]);
    }
  for (std::size_t i = 0; i < n; ++i) labels[i] = remap[labels[i]];
  return labels;
}

}  // namespace detail

// Clusters all atoms of a problem by Gram-row similarity.
inline ClusterAssignment kmeans_cluster(const SparseProblem& p, std::size_t d,
                                        std::uint64_t seed) {
  validate_problem(p);
  check(d >= 1 && d <= p.num_atoms(),
        "cluster count must lie in [1, atom count]");
  std::vector<std::size_t> atoms(p.num_atoms());
  for (std::size_t i = 0; i < atoms.size(); ++i) atoms[i] = i;
  Rng rng(seed);
  ClusterAssignment out;
  out.num_clusters_d = d;
  out.assignment =
      detail::kmeans_assign(detail::cluster_features(p.dictionary_phi, atoms),
                            d, rng);
  out.feature_description =
      "rows of |Gram| of the column-normalized dictionary";
  return out;
}

namespace detail {

struct SblWork {
  Eigen::MatrixXcd gram;      // Phi^H Phi
  Eigen::VectorXcd phi_h_y;   // Phi^H y
  Eigen::VectorXd col_norm2;  // squared column norms
  double y_norm2 = 0.0;
};

inline SblWork make_sbl_work(const SparseProblem& p) {
  SblWork w;
  w.gram = p.dictionary_phi.adjoint() * p.dictionary_phi;
  w.phi_h_y = p.dictionary_phi.adjoint() * p.observation_y;
  w.col_norm2 = w.gram.diagonal().real();
  w.y_norm2 = p.observation_y.squaredNorm();
  return w;
}

// Initial noise precision from observation energy; a zero-energy
// observation gets a neutral unit precision instead of a divide-by-zero.
inline double initial_noise_precision(const SparseProblem& p, double y_norm2) {
  return y_norm2 > 0.0 ? double(p.observation_y.size()) / y_norm2 : 1.0;
}

// Expected atom precisions, elementwise over the listed atoms.
inline void update_rho(const SblHyperparams& h, const Eigen::VectorXcd& mu,
                       const Eigen::VectorXd& sigma_diag,
                       const std::vector<std::size_t>& atoms,
                       Eigen::VectorXd& rho) {
  for (std::size_t i : atoms)
    rho(Eigen::Index(i)) =
        (h.a + 0.5) /
        ((std::norm(mu(Eigen::Index(i))) + sigma_diag(Eigen::Index(i))) / 2.0 +
         h.b);
}

// Expected noise precision. residual_norm2 = ||y - Phi mu||^2 and
// trace_term = Tr(Phi^H Phi Sigma); together they form the printed
// denominator  ||y||^2 - 2 Re{y^H Phi mu} + Tr(Phi^H Phi (mu mu^H + Sigma)).
inline double update_noise_precision(const SblHyperparams& h,
                                     std::size_t model_size,
                                     double residual_norm2,
                                     double trace_term) {
  return (h.c + double(model_size) / 2.0) /
         ((residual_norm2 + trace_term) / 2.0 + h.d);
}

inline bool sbl_converged(const Eigen::VectorXcd& mu_old,
                          const Eigen::VectorXcd& mu_new, double tolerance) {
  const double base = mu_old.norm();
  if (base <= 0.0) return false;
  return (mu_new - mu_old).norm() < tolerance * base;
}

inline void record_trace(SolverTrace* trace, const Eigen::VectorXcd& mu,
                         const Eigen::VectorXd& sigma_diag,
                         const Eigen::VectorXd& rho, double noise_precision) {
  if (trace == nullptr) return;
  trace->mu.push_back(mu);
  trace->sigma_diag.push_back(sigma_diag);
  trace->rho.push_back(rho);
  trace->noise_precision.push_back(noise_precision);
}

inline void fill_final_state(SolverTrace* trace, const Eigen::VectorXcd& mu,
                             const Eigen::VectorXd& sigma_diag,
                             const Eigen::VectorXd& rho,
                             double noise_precision,
                             const std::vector<std::size_t>& active) {
  if (trace == nullptr) return;
  trace->final_state.mean_mu = mu;
  trace->final_state.sigma_diag = sigma_diag;
  trace->final_state.rho_expectations = rho;
  trace->final_state.noise_precision_expectation = noise_precision;
  trace->final_state.active_atoms = active;
}

}  // namespace detail

// Jointly factorized variational solver. Each iteration inverts the full
// G x G posterior precision, so the cost is cubic in the atom count; the
// covariance diagonal then drives the hyperparameter updates.
inline RecoveryResult vsbl(const SparseProblem& p, const SblHyperparams& h,
                           SolverTrace* trace = nullptr) {
  validate_problem(p);
  validate_hyperparams(h);
  const auto t0 = std::chrono::steady_clock::now();
  const auto w = detail::make_sbl_work(p);
  const std::size_t g = p.num_atoms();
  std::vector<std::size_t> atoms(g);
  for (std::size_t i = 0; i < g; ++i) atoms[i] = i;

  Eigen::VectorXd rho = Eigen::VectorXd::Ones(Eigen::Index(g));
  double noise_prec =
      detail::initial_noise_precision(p, w.y_norm2);
  Eigen::VectorXcd mu = Eigen::VectorXcd::Zero(Eigen::Index(g));
  Eigen::VectorXd sigma_diag = Eigen::VectorXd::Zero(Eigen::Index(g));

  RecoveryResult out;
  for (int iter = 1; iter <= h.max_iterations; ++iter) {
    Eigen::MatrixXcd a = noise_prec * w.gram;
    a.diagonal() += rho.cast<cplx>();
    Eigen::LLT<Eigen::MatrixXcd> llt(a);
    if (llt.info() != Eigen::Success) {
      a.diagonal().array() += a.diagonal().real().mean() * 1e-12;
      llt.compute(a);
      if (llt.info() != Eigen::Success)
        throw ConditioningError(
            "posterior covariance inverse failed after regularization floor");
    }
    const Eigen::MatrixXcd sigma = llt.solve(
        Eigen::MatrixXcd::Identity(Eigen::Index(g), Eigen::Index(g)));
    const Eigen::VectorXcd mu_new = noise_prec * (llt.solve(w.phi_h_y));
    sigma_diag = sigma.diagonal().real();

    // Tr(Phi^H Phi Sigma) = (G - sum_i rho_i Sigma_ii) / E{sigma^-2}, using
    // the rho and precision that built Sigma.
    const double trace_term =
        (double(g) - rho.dot(sigma_diag)) / noise_prec;
    detail::update_rho(h, mu_new, sigma_diag, atoms, rho);
    const double resid2 =
        (p.observation_y - p.dictionary_phi * mu_new).squaredNorm();
    noise_prec = detail::update_noise_precision(h, g, resid2, trace_term);

    const bool done = detail::sbl_converged(mu, mu_new, h.tolerance);
    mu = mu_new;
    out.iterations = iter;
    detail::record_trace(trace, mu, sigma_diag, rho, noise_prec);
    if (done) break;
  }
  detail::fill_final_state(trace, mu, sigma_diag, rho, noise_prec, atoms);
  out.xi_hat = mu;
  out.wall_time =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();
  finalize_recovery_result(p, out);
  return out;
}

// Fully factorized variational solver. Coordinates are refreshed in
// ascending atom order against a maintained residual, so no matrix inverse
// appears and each sweep costs O(G) column products.
inline RecoveryResult mfvsbl(const SparseProblem& p, const SblHyperparams& h,
                             SolverTrace* trace = nullptr) {
  validate_problem(p);
  validate_hyperparams(h);
  const auto t0 = std::chrono::steady_clock::now();
  const auto w = detail::make_sbl_work(p);
  const std::size_t g = p.num_atoms();
  std::vector<std::size_t> atoms(g);
  for (std::size_t i = 0; i < g; ++i) atoms[i] = i;

  Eigen::VectorXd rho = Eigen::VectorXd::Ones(Eigen::Index(g));
  double noise_prec =
      detail::initial_noise_precision(p, w.y_norm2);
  Eigen::VectorXcd mu = Eigen::VectorXcd::Zero(Eigen::Index(g));
  Eigen::VectorXd sigma_diag = Eigen::VectorXd::Zero(Eigen::Index(g));
  Eigen::VectorXcd residual = p.observation_y;

  RecoveryResult out;
  for (int iter = 1; iter <= h.max_iterations; ++iter) {
    Eigen::VectorXcd mu_new = mu;
    for (std::size_t i = 0; i < g; ++i) {
      const Eigen::Index ei = Eigen::Index(i);
      sigma_diag(ei) = 1.0 / (noise_prec * w.col_norm2(ei) + rho(ei));
      const cplx excl = p.dictionary_phi.col(ei).dot(residual) +
                        w.col_norm2(ei) * mu_new(ei);
      const cplx updated = noise_prec * sigma_diag(ei) * excl;
      residual -= (updated - mu_new(ei)) * p.dictionary_phi.col(ei);
      mu_new(ei) = updated;
    }
    // Diagonal covariance: Tr(Phi^H Phi Sigma) = sum_i ||Phi_i||^2 Sigma_ii.
    const double trace_term = w.col_norm2.dot(sigma_diag);
    detail::update_rho(h, mu_new, sigma_diag, atoms, rho);
    residual = p.observation_y - p.dictionary_phi * mu_new;
    noise_prec = detail::update_noise_precision(h, g, residual.squaredNorm(),
                                                trace_term);

    const bool done = detail::sbl_converged(mu, mu_new, h.tolerance);
    mu = mu_new;
    out.iterations = iter;
    detail::record_trace(trace, mu, sigma_diag, rho, noise_prec);
    if (done) break;
  }
  detail::fill_final_state(trace, mu, sigma_diag, rho, noise_prec, atoms);
  out.xi_hat = mu;
  out.wall_time =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();
  finalize_recovery_result(p, out);
  return out;
}

// Cluster-factorized variational solver. Clusters are refreshed in
// ascending id (each against the latest residual) with one small block
// inverse per cluster. Atoms whose expected precision exceeds the prune
// threshold drop out of the model; survivors are re-clustered every
// `kReclusterInterval` iterations.
inline RecoveryResult cmfvsbl(const SparseProblem& p, const SblHyperparams& h,
                              std::size_t num_clusters, std::uint64_t seed,
                              SolverTrace* trace = nullptr) {
  validate_problem(p);
  validate_hyperparams(h);
  check(num_clusters >= 1, "cluster count must be at least 1");
  constexpr int kReclusterInterval = 20;
  const auto t0 = std::chrono::steady_clock::now();
  const auto w = detail::make_sbl_work(p);
  const std::size_t g = p.num_atoms();
  check(num_clusters <= g, "cluster count must not exceed the atom count");

  std::vector<std::size_t> active(g);
  for (std::size_t i = 0; i < g; ++i) active[i] = i;
  auto cluster_atoms = [&](std::uint64_t stage) {
    const std::size_t d = std::min(num_clusters, active.size());
    std::vector<std::vector<std::size_t>> clusters(d);
    if (d == 1) {
      clusters[0] = active;
      return clusters;
    }
    if (d == active.size()) {
      for (std::size_t i = 0; i < d; ++i) clusters[i] = {active[i]};
      return clusters;
    }
    Rng rng(derive_seed(seed, {0xC1u, stage}));
    const auto labels = detail::kmeans_assign(
        detail::cluster_features(p.dictionary_phi, active), d, rng);
    for (std::size_t i = 0; i < active.size(); ++i)
      clusters[labels[i]].push_back(active[i]);
    return clusters;
  };
  auto clusters = cluster_atoms(0);

  Eigen::VectorXd rho = Eigen::VectorXd::Ones(Eigen::Index(g));
  double noise_prec =
      detail::initial_noise_precision(p, w.y_norm2);
  Eigen::VectorXcd mu = Eigen::VectorXcd::Zero(Eigen::Index(g));
  Eigen::VectorXd sigma_diag = Eigen::VectorXd::Zero(Eigen::Index(g));
  Eigen::VectorXcd residual = p.observation_y;

  RecoveryResult out;
  for (int iter = 1; iter <= h.max_iterations; ++iter) {
    Eigen::VectorXcd mu_new = mu;
    double trace_term = 0.0;
    for (const auto& members : clusters) {
      if (members.empty()) continue;
      const Eigen::Index m = Eigen::Index(members.size());
      // Residual with this cluster's own contribution added back.
      Eigen::VectorXcd r = residual;
      for (std::size_t e : members)
        r += mu_new(Eigen::Index(e)) * p.dictionary_phi.col(Eigen::Index(e));
      Eigen::MatrixXcd a(m, m);
      Eigen::VectorXcd rhs(m);
      for (Eigen::Index i = 0; i < m; ++i) {
        const Eigen::Index gi = Eigen::Index(members[std::size_t(i)]);
        for (Eigen::Index j = 0; j < m; ++j)
          a(i, j) = noise_prec *
                    w.gram(gi, Eigen::Index(members[std::size_t(j)]));
        a(i, i) += rho(gi);
        rhs(i) = p.dictionary_phi.col(gi).dot(r);
      }
      Eigen::LLT<Eigen::MatrixXcd> llt(a);
      if (llt.info() != Eigen::Success) {
        a.diagonal().array() += a.diagonal().real().mean() * 1e-12;
        llt.compute(a);
        if (llt.info() != Eigen::Success)
          throw ConditioningError(
              "cluster covariance inverse failed after regularization floor");
      }
      const Eigen::MatrixXcd sigma_k =
          llt.solve(Eigen::MatrixXcd::Identity(m, m));
      const Eigen::VectorXcd mu_k = noise_prec * (llt.solve(rhs));
      double rho_sigma = 0.0;
      for (Eigen::Index i = 0; i < m; ++i) {
        const Eigen::Index gi = Eigen::Index(members[std::size_t(i)]);
        sigma_diag(gi) = sigma_k(i, i).real();
        rho_sigma += rho(gi) * sigma_diag(gi);
      }
      trace_term += (double(members.size()) - rho_sigma) / noise_prec;
      // Fold the refreshed cluster back into the running residual.
      for (Eigen::Index i = 0; i < m; ++i) {
        const Eigen::Index gi = Eigen::Index(members[std::size_t(i)]);
        r -= mu_k(i) * p.dictionary_phi.col(gi);
        mu_new(gi) = mu_k(i);
      }
      residual = r;
    }

    detail::update_rho(h, mu_new, sigma_diag, active, rho);

    // Prune diverged atoms: zero their mean and drop them from the model.
    std::vector<std::size_t> survivors;
    survivors.reserve(active.size());
    bool pruned = false;
    for (std::size_t i : active) {
      if (rho(Eigen::Index(i)) > h.prune_threshold_rho) {
        mu_new(Eigen::Index(i)) = cplx(0.0, 0.0);
        pruned = true;
      } else {
        survivors.push_back(i);
      }
    }
    if (pruned) {
      active = survivors;
      for (auto& members : clusters)
        members.erase(std::remove_if(members.begin(), members.end(),
                                     [&](std::size_t e) {
                                       return rho(Eigen::Index(e)) >
                                              h.prune_threshold_rho;
                                     }),
                      members.end());
    }
    if (active.empty()) {
      out.xi_hat = Eigen::VectorXcd::Zero(Eigen::Index(g));
      out.iterations = iter;
      out.diagnostics = "all atoms pruned; returning the empty model";
      detail::fill_final_state(trace, out.xi_hat, sigma_diag, rho, noise_prec,
                               active);
      out.wall_time = std::chrono::duration<double>(
                          std::chrono::steady_clock::now() - t0)
                          .count();
      finalize_recovery_result(p, out);
      return out;
    }

    residual = p.observation_y;
    for (std::size_t i : active)
      residual -= mu_new(Eigen::Index(i)) * p.dictionary_phi.col(Eigen::Index(i));
    // The noise-precision shape term comes from the likelihood over y, so it
    // keeps the full dictionary size G even after atoms are pruned; shrinking
    // it with the active set biases the noise estimate low and over-shrinks
    // the surviving coefficients.
    noise_prec = detail::update_noise_precision(h, g, residual.squaredNorm(),
                                                trace_term);

    const bool done = detail::sbl_converged(mu, mu_new, h.tolerance);
    mu = mu_new;
    out.iterations = iter;
    detail::record_trace(trace, mu, sigma_diag, rho, noise_prec);
    if (done) break;
    if (iter % kReclusterInterval == 0 && iter < h.max_iterations)
      clusters = cluster_atoms(std::uint64_t(iter));
  }
  detail::fill_final_state(trace, mu, sigma_diag, rho, noise_prec, active);
  out.xi_hat = mu;
  out.wall_time =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();
  finalize_recovery_result(p, out);
  return out;
}

// Greedy pursuit: pick the atom best correlated with the residual (after
// column normalization), refit by least squares on the selected set, repeat.
inline RecoveryResult omp(const SparseProblem& p, std::size_t sparsity_k) {
  validate_problem(p);
  const auto t0 = std::chrono::steady_clock::now();
  const std::size_t g = p.num_atoms();
  const Eigen::Index m = p.observation_y.size();
  RecoveryResult out;
  out.xi_hat = Eigen::VectorXcd::Zero(Eigen::Index(g));
  Eigen::VectorXd inv_norm = Eigen::VectorXd::Zero(Eigen::Index(g));
  for (std::size_t i = 0; i < g; ++i) {
    const double norm = p.dictionary_phi.col(Eigen::Index(i)).norm();
    inv_norm(Eigen::Index(i)) = norm > 0.0 ? 1.0 / norm : 0.0;
  }

  Eigen::VectorXcd residual = p.observation_y;
  const double y_norm = residual.norm();
  std::vector<Eigen::Index> picked;
  Eigen::VectorXcd coef;
  for (std::size_t k = 0; k < std::min(sparsity_k, g); ++k) {
    if (residual.norm() <= 1e-14 * y_norm) break;
    Eigen::Index best = -1;
    double best_corr = -1.0;
    for (std::size_t i = 0; i < g; ++i) {
      const Eigen::Index ei = Eigen::Index(i);
      if (inv_norm(ei) == 0.0) continue;
      if (std::find(picked.begin(), picked.end(), ei) != picked.end())
        continue;
      const double corr =
          std::abs(p.dictionary_phi.col(ei).dot(residual)) * inv_norm(ei);
      if (corr > best_corr) {
        best_corr = corr;
        best = ei;
      }
    }
    if (best < 0) break;
    picked.push_back(best);

    Eigen::MatrixXcd sub(m, Eigen::Index(picked.size()));
    for (std::size_t c = 0; c < picked.size(); ++c)
      sub.col(Eigen::Index(c)) = p.dictionary_phi.col(picked[c]);
    Eigen::ColPivHouseholderQR<Eigen::MatrixXcd> qr(sub);
    if (qr.rank() < Eigen::Index(picked.size())) {
      const Eigen::MatrixXcd gram = sub.adjoint() * sub;
      Eigen::MatrixXcd reg = gram;
      reg.diagonal().array() +=
          std::max(gram.diagonal().real().mean(), 1.0) * 1e-12;
      coef = reg.llt().solve(sub.adjoint() * p.observation_y);
      if (out.diagnostics.find("rank-deficient") == std::string::npos)
        out.diagnostics += "rank-deficient refit solved with a ridge floor; ";
    } else {
      coef = qr.solve(p.observation_y);
    }
    residual = p.observation_y - sub * coef;
    out.iterations = int(k) + 1;
  }
  for (std::size_t c = 0; c < picked.size(); ++c)
    out.xi_hat(picked[c]) = coef(Eigen::Index(c));
  out.wall_time =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();
  finalize_recovery_result(p, out);
  return out;
}

namespace detail {

// Largest squared singular value of the dictionary by power iteration on
// the Gram operator; deterministic start from Phi^H y when it is nonzero.
inline double squared_spectral_norm(const Eigen::MatrixXcd& phi,
                                    const Eigen::VectorXcd& phi_h_y) {
  Eigen::VectorXcd v = phi_h_y;
  if (v.norm() == 0.0) v = Eigen::VectorXcd::Ones(phi.cols());
  v /= v.norm();
  double value = 0.0;
  for (int i = 0; i < 300; ++i) {
    Eigen::VectorXcd next = phi.adjoint() * (phi * v);
    const double norm = next.norm();
    if (norm == 0.0) return 0.0;
    next /= norm;
    const double prev = value;
    value = norm;
    v = next;
    if (i > 4 && std::abs(value - prev) <= 1e-12 * value) break;
  }
  return value;
}

inline cplx soft_threshold(cplx v, double tau) {
  const double mag = std::abs(v);
  if (mag <= tau) return cplx(0.0, 0.0);
  return v * ((mag - tau) / mag);
}

}  // namespace detail

// Accelerated proximal gradient on 0.5||y - Phi xi||^2 + lambda ||xi||_1
// with complex soft-thresholding. A function-value restart drops the
// momentum whenever it would increase the objective, which keeps the
// objective non-increasing.
inline RecoveryResult fista(const SparseProblem& p, double lambda_reg,
                            int max_iter = 1000,
                            std::vector<double>* objective_trace = nullptr) {
  validate_problem(p);
  check_positive(lambda_reg, "lambda");
  check(max_iter >= 1, "max_iter must be at least 1");
  const auto t0 = std::chrono::steady_clock::now();
  const std::size_t g = p.num_atoms();
  const Eigen::VectorXcd phi_h_y =
      p.dictionary_phi.adjoint() * p.observation_y;
  const double lipschitz =
      detail::squared_spectral_norm(p.dictionary_phi, phi_h_y) *
      (1.0 + 1e-3);
  const double step = lipschitz > 0.0 ? 1.0 / lipschitz : 1.0;

  auto objective = [&](const Eigen::VectorXcd& xi) {
    return 0.5 * (p.observation_y - p.dictionary_phi * xi).squaredNorm() +
           lambda_reg * xi.cwiseAbs().sum();
  };
  auto prox_step = [&](const Eigen::VectorXcd& z) {
    const Eigen::VectorXcd grad =
        p.dictionary_phi.adjoint() * (p.dictionary_phi * z - p.observation_y);
    Eigen::VectorXcd next(z.size());
    for (Eigen::Index i = 0; i < z.size(); ++i)
      next(i) = detail::soft_threshold(z(i) - step * grad(i),
                                       step * lambda_reg);
    return next;
  };

  Eigen::VectorXcd xi = Eigen::VectorXcd::Zero(Eigen::Index(g));
  Eigen::VectorXcd z = xi;
  double momentum = 1.0;
  double obj = objective(xi);
  RecoveryResult out;
  for (int iter = 1; iter <= max_iter; ++iter) {
    Eigen::VectorXcd next = prox_step(z);
    double next_obj = objective(next);
    if (next_obj > obj) {
      // Restart: plain proximal step from the last accepted point.
      momentum = 1.0;
      next = prox_step(xi);
      next_obj = objective(next);
    }
    const double momentum_next =
        (1.0 + std::sqrt(1.0 + 4.0 * momentum * momentum)) / 2.0;
    z = next + ((momentum - 1.0) / momentum_next) * (next - xi);
    const bool done =
        (next - xi).norm() <= 1e-10 * std::max(1.0, xi.norm());
    xi = next;
    obj = next_obj;
    momentum = momentum_next;
    out.iterations = iter;
    if (objective_trace != nullptr) objective_trace->push_back(obj);
    if (done) break;
  }
  out.xi_hat = xi;
  out.wall_time =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();
  finalize_recovery_result(p, out);
  return out;
}

// Conventional default: a fraction of the largest correlation, below which
// nothing survives the threshold.
inline double default_fista_lambda(const SparseProblem& p) {
  const double peak =
      (p.dictionary_phi.adjoint() * p.observation_y).cwiseAbs().maxCoeff();
  return 0.1 * std::max(peak, 1e-300);
}

// Least-squares refit on the support of an estimate, removing the shrinkage
// bias of l1 solvers. Off-support coefficients stay zero.
inline RecoveryResult debias_on_support(const SparseProblem& p,
                                        const RecoveryResult& r) {
  validate_problem(p);
  check(r.xi_hat.size() == Eigen::Index(p.num_atoms()),
        "estimate length must equal the atom count");
  RecoveryResult out = r;
  if (r.support.empty()) {
    finalize_recovery_result(p, out);
    return out;
  }
  Eigen::MatrixXcd sub(p.observation_y.size(),
                       Eigen::Index(r.support.size()));
  for (std::size_t c = 0; c < r.support.size(); ++c)
    sub.col(Eigen::Index(c)) =
        p.dictionary_phi.col(Eigen::Index(r.support[c]));
  const Eigen::VectorXcd coef =
      sub.colPivHouseholderQr().solve(p.observation_y);
  out.xi_hat = Eigen::VectorXcd::Zero(r.xi_hat.size());
  for (std::size_t c = 0; c < r.support.size(); ++c)
    out.xi_hat(Eigen::Index(r.support[c])) = coef(Eigen::Index(c));
  finalize_recovery_result(p, out);
  return out;
}

inline nlohmann::json recovery_result_to_json(const RecoveryResult& r) {
  nlohmann::json j;
  j["support"] = r.support;
  auto pairs = nlohmann::json::array();
  for (Eigen::Index i = 0; i < r.xi_hat.size(); ++i)
    pairs.push_back({r.xi_hat(i).real(), r.xi_hat(i).imag()});
  j["coefficients"] = std::move(pairs);
  j["direct_gain"] = {r.direct_estimate_gamma.real(),
                      r.direct_estimate_gamma.imag()};
  j["iterations"] = r.iterations;
  j["wall_time"] = r.wall_time;
  j["diagnostics"] = r.diagnostics;
  return j;
}

}  // namespace fim
