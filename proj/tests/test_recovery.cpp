// SPDX-License-Identifier: Apache-2.0
//
// Part of fimkit, a flexible-metasurface link simulation and estimation toolkit.
//
// Oracle tests for the sparse solvers. The variational updates are verified
// against independent recomputations of the printed update rules, the
// clustered solver against its two factorization extremes, and the greedy
// and proximal baselines against closed-form orthogonal-design solutions.

#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstring>
#include <limits>
#include <vector>

#include <Eigen/Dense>

#include "fim/channel.hpp"
#include "fim/estimation.hpp"
#include "fim/recovery.hpp"
#include "fim/rng.hpp"

using namespace fim;
using Catch::Approx;

namespace {

// Synthetic problem with consistent metadata and an arbitrary dictionary.
SparseProblem synthetic_problem(Eigen::Index m, Eigen::Index g, Rng& rng) {
  SparseProblem p;
  p.dictionary_phi.resize(m, g);
  for (Eigen::Index j = 0; j < g; ++j)
    for (Eigen::Index i = 0; i < m; ++i)
      p.dictionary_phi(i, j) = rng.cnormal(1.0);
  p.grid_angles.emplace_back(0.0, 0.0);
  for (Eigen::Index j = 1; j < g; ++j)
    p.grid_angles.emplace_back(0.01 * double(j), 0.02 * double(j) + 0.005);
  p.direct_atom_index = 0;
  p.observation_y = Eigen::VectorXcd::Zero(m);
  p.noise_variance = 0.0;
  return p;
}

void set_sparse_observation(SparseProblem& p, const std::vector<int>& support,
                            Rng& rng, double noise_sigma) {
  Eigen::VectorXcd xi = Eigen::VectorXcd::Zero(p.dictionary_phi.cols());
  for (int s : support) xi(s) = rng.cnormal(1.0) + cplx(0.5, 0.5);
  p.observation_y = p.dictionary_phi * xi;
  if (noise_sigma > 0.0)
    for (Eigen::Index i = 0; i < p.observation_y.size(); ++i)
      p.observation_y(i) += rng.cnormal(noise_sigma * noise_sigma);
  p.noise_variance = noise_sigma * noise_sigma;
}

// Orthogonal dictionary with distinct column norms.
SparseProblem orthogonal_problem(Eigen::Index m, Eigen::Index g, Rng& rng) {
  SparseProblem p = synthetic_problem(m, g, rng);
  Eigen::MatrixXcd raw(m, g);
  for (Eigen::Index j = 0; j < g; ++j)
    for (Eigen::Index i = 0; i < m; ++i) raw(i, j) = rng.cnormal(1.0);
  const Eigen::MatrixXcd q =
      Eigen::HouseholderQR<Eigen::MatrixXcd>(raw).householderQ() *
      Eigen::MatrixXcd::Identity(m, g);
  for (Eigen::Index j = 0; j < g; ++j)
    p.dictionary_phi.col(j) = q.col(j) * (0.5 + 0.25 * double(j));
  return p;
}

struct FimCase {
  ProtocolSchedule schedule;
  ChannelRealization channel;
  SparseProblem problem;
};

FimCase make_fim_case(int paths_l, int paths_p, std::uint64_t seed,
                      std::size_t q = 16) {
  FimCase f;
  f.schedule = build_schedule_multi(16, q, 9, virtual_aperture_region(12),
                                    PbfSource::RandomPhases,
                                    derive_seed(seed, {1}));
  const auto grid = default_angle_grid(12);
  AngleGridSource src{&grid, 0};
  f.channel = sample_channel(paths_l, paths_p, 1.0, 1.0, 1.0,
                             derive_seed(seed, {2}), &src);
  f.problem = build_problem(f.schedule, f.channel, NoiseModel{0.0},
                            derive_seed(seed, {3}), grid);
  return f;
}

}  // namespace

TEST_CASE("zero observation drives the mean to zero and precisions up",
          "[recovery]") {
  Rng rng(10);
  auto p = synthetic_problem(20, 8, rng);
  SblHyperparams h;
  h.max_iterations = 8;
  h.tolerance = 1e-12;
  SolverTrace trace;
  const auto r = vsbl(p, h, &trace);
  REQUIRE(r.xi_hat.norm() == 0.0);
  REQUIRE(trace.rho.size() == 8);
  for (std::size_t k = 1; k < trace.rho.size(); ++k)
    for (Eigen::Index i = 0; i < trace.rho[k].size(); ++i)
      REQUIRE(trace.rho[k](i) >= trace.rho[k - 1](i) * (1.0 - 1e-12));
  REQUIRE(trace.rho.back()(0) > 10.0 * trace.rho.front()(0));
}

TEST_CASE("one-sparse orthonormal observation is recovered exactly",
          "[recovery]") {
  Rng rng(11);
  auto p = orthogonal_problem(16, 2, rng);
  for (Eigen::Index j = 0; j < 2; ++j)
    p.dictionary_phi.col(j) /= p.dictionary_phi.col(j).norm();
  p.observation_y = 5.0 * p.dictionary_phi.col(1);
  const auto r = vsbl(p, SblHyperparams{});
  REQUIRE(std::abs(r.xi_hat(1) - cplx(5.0, 0.0)) < 1e-6);
  REQUIRE(std::abs(r.xi_hat(0)) < 1e-6);
}

TEST_CASE("solvers are deterministic", "[recovery]") {
  Rng rng(12);
  auto p = synthetic_problem(30, 20, rng);
  set_sparse_observation(p, {2, 7, 11}, rng, 0.05);
  SblHyperparams h;
  h.max_iterations = 60;
  const auto a1 = vsbl(p, h), a2 = vsbl(p, h);
  const auto b1 = mfvsbl(p, h), b2 = mfvsbl(p, h);
  const auto c1 = cmfvsbl(p, h, 4, 99), c2 = cmfvsbl(p, h, 4, 99);
  REQUIRE(std::memcmp(a1.xi_hat.data(), a2.xi_hat.data(),
                      sizeof(cplx) * 20) == 0);
  REQUIRE(std::memcmp(b1.xi_hat.data(), b2.xi_hat.data(),
                      sizeof(cplx) * 20) == 0);
  REQUIRE(std::memcmp(c1.xi_hat.data(), c2.xi_hat.data(),
                      sizeof(cplx) * 20) == 0);
}

TEST_CASE("diagonal-covariance solver matches the joint one on orthogonal "
          "dictionaries",
          "[recovery]") {
  Rng rng(13);
  auto p = orthogonal_problem(24, 8, rng);
  set_sparse_observation(p, {1, 4}, rng, 1e-3);
  SblHyperparams h;
  h.tolerance = 1e-12;
  const auto joint = vsbl(p, h);
  const auto scalar = mfvsbl(p, h);
  REQUIRE((joint.xi_hat - scalar.xi_hat).cwiseAbs().maxCoeff() < 1e-6);

  // Mid-sized clusters also coincide when the Gram matrix is diagonal.
  SblHyperparams h50 = h;
  h50.max_iterations = 50;
  h50.tolerance = 1e-300;
  SolverTrace tj, tc;
  vsbl(p, h50, &tj);
  cmfvsbl(p, h50, 3, 5, &tc);
  REQUIRE(tj.mu.size() == tc.mu.size());
  for (std::size_t k = 0; k < tj.mu.size(); ++k)
    REQUIRE((tj.mu[k] - tc.mu[k]).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("single-atom problems make all factorizations identical",
          "[recovery]") {
  Rng rng(14);
  SparseProblem p;
  p.dictionary_phi = Eigen::MatrixXcd::Ones(6, 1);
  p.grid_angles = {{0.0, 0.0}};
  p.direct_atom_index = 0;
  p.observation_y.resize(6);
  for (Eigen::Index i = 0; i < 6; ++i)
    p.observation_y(i) = cplx(0.4, -0.2) + rng.cnormal(0.01);
  SblHyperparams h;
  h.max_iterations = 20;
  h.tolerance = 1e-300;
  SolverTrace tv, tm;
  vsbl(p, h, &tv);
  mfvsbl(p, h, &tm);
  REQUIRE(tv.mu.size() == tm.mu.size());
  for (std::size_t k = 0; k < tv.mu.size(); ++k)
    REQUIRE(std::abs(tv.mu[k](0) - tm.mu[k](0)) < 1e-12);
}

TEST_CASE("cluster factorization reduces to the joint and scalar solvers",
          "[recovery]") {
  SblHyperparams h;
  h.max_iterations = 50;
  h.tolerance = 1e-300;
  h.prune_threshold_rho = std::numeric_limits<double>::infinity();
  for (std::uint64_t seed : {21u, 22u, 23u}) {
    Rng rng(seed);
    auto p = synthetic_problem(40, 120, rng);
    set_sparse_observation(p, {3, 30, 77, 111}, rng, 0.05);
    SolverTrace tv, tm, tc1, tcg;
    vsbl(p, h, &tv);
    mfvsbl(p, h, &tm);
    cmfvsbl(p, h, 1, seed, &tc1);
    cmfvsbl(p, h, 120, seed, &tcg);
    REQUIRE(tc1.mu.size() == tv.mu.size());
    REQUIRE(tcg.mu.size() == tm.mu.size());
    for (std::size_t k = 0; k < tv.mu.size(); ++k)
      REQUIRE((tv.mu[k] - tc1.mu[k]).cwiseAbs().maxCoeff() < 1e-8);
    for (std::size_t k = 0; k < tm.mu.size(); ++k)
      REQUIRE((tm.mu[k] - tcg.mu[k]).cwiseAbs().maxCoeff() < 1e-8);
  }
}

TEST_CASE("variational updates match the printed rules recomputed "
          "independently",
          "[recovery]") {
  Rng rng(31);
  auto p = synthetic_problem(12, 6, rng);
  set_sparse_observation(p, {2, 4}, rng, 0.1);
  SblHyperparams h;
  h.max_iterations = 15;
  h.tolerance = 1e-300;

  SECTION("joint solver") {
    SolverTrace t;
    vsbl(p, h, &t);
    const Eigen::MatrixXcd gram = p.dictionary_phi.adjoint() * p.dictionary_phi;
    Eigen::VectorXd rho_prev = Eigen::VectorXd::Ones(6);
    double c_prev = double(p.observation_y.size()) /
                    p.observation_y.squaredNorm();
    for (std::size_t k = 0; k < t.mu.size(); ++k) {
      Eigen::MatrixXcd a = c_prev * gram;
      a.diagonal() += rho_prev.cast<cplx>();
      const Eigen::MatrixXcd sigma = a.inverse();
      const Eigen::VectorXcd mu =
          c_prev * sigma * p.dictionary_phi.adjoint() * p.observation_y;
      REQUIRE((mu - t.mu[k]).cwiseAbs().maxCoeff() < 1e-9);
      REQUIRE((sigma.diagonal().real() - t.sigma_diag[k])
                  .cwiseAbs()
                  .maxCoeff() < 1e-9);
      for (Eigen::Index i = 0; i < 6; ++i) {
        REQUIRE(t.sigma_diag[k](i) > 0.0);
        const double want =
            (h.a + 0.5) /
            ((std::norm(mu(i)) + sigma(i, i).real()) / 2.0 + h.b);
        REQUIRE(t.rho[k](i) == Approx(want).epsilon(1e-9));
      }
      const Eigen::MatrixXcd second = mu * mu.adjoint() + sigma;
      const double denominator =
          (p.observation_y.squaredNorm() -
           2.0 * (p.observation_y.adjoint() * p.dictionary_phi * mu)
                     .real()
                     .sum() +
           (gram * second).trace().real()) /
              2.0 +
          h.d;
      const double want_prec = (h.c + 3.0) / denominator;
      REQUIRE(t.noise_precision[k] == Approx(want_prec).epsilon(1e-9));
      REQUIRE(t.noise_precision[k] > 0.0);
      rho_prev = t.rho[k];
      c_prev = t.noise_precision[k];
    }
  }

  SECTION("scalar solver sweep order") {
    SolverTrace t;
    mfvsbl(p, h, &t);
    Eigen::VectorXd rho_prev = Eigen::VectorXd::Ones(6);
    double c_prev = double(p.observation_y.size()) /
                    p.observation_y.squaredNorm();
    Eigen::VectorXcd mu = Eigen::VectorXcd::Zero(6);
    for (std::size_t k = 0; k < t.mu.size(); ++k) {
      Eigen::VectorXd sig(6);
      for (Eigen::Index i = 0; i < 6; ++i) {
        const double n2 = p.dictionary_phi.col(i).squaredNorm();
        sig(i) = 1.0 / (c_prev * n2 + rho_prev(i));
        Eigen::VectorXcd others = Eigen::VectorXcd::Zero(12);
        for (Eigen::Index j = 0; j < 6; ++j)
          if (j != i) others += mu(j) * p.dictionary_phi.col(j);
        mu(i) = c_prev * sig(i) *
                p.dictionary_phi.col(i).dot(p.observation_y - others);
      }
      REQUIRE((mu - t.mu[k]).cwiseAbs().maxCoeff() < 1e-9);
      REQUIRE((sig - t.sigma_diag[k]).cwiseAbs().maxCoeff() < 1e-12);
      rho_prev = t.rho[k];
      c_prev = t.noise_precision[k];
      mu = t.mu[k];
    }
  }
}

TEST_CASE("atom clustering honors trivial counts and block structure",
          "[recovery]") {
  Rng rng(41);
  auto p = synthetic_problem(24, 6, rng);

  const auto singletons = kmeans_cluster(p, 6, 7);
  for (std::size_t i = 0; i < 6; ++i) REQUIRE(singletons.assignment[i] == i);
  const auto one = kmeans_cluster(p, 1, 7);
  for (std::size_t i = 0; i < 6; ++i) REQUIRE(one.assignment[i] == 0);

  // Two coherent groups of three atoms each.
  Eigen::VectorXcd base_a(24), base_b(24);
  for (Eigen::Index i = 0; i < 24; ++i) {
    base_a(i) = rng.cnormal(1.0);
    base_b(i) = rng.cnormal(1.0);
  }
  base_b -= base_a * (base_a.dot(base_b) / base_a.squaredNorm());
  for (Eigen::Index j = 0; j < 6; ++j) {
    Eigen::VectorXcd noise(24);
    for (Eigen::Index i = 0; i < 24; ++i) noise(i) = rng.cnormal(1e-4);
    p.dictionary_phi.col(j) = (j < 3 ? base_a : base_b) + noise;
  }
  const auto blocks = kmeans_cluster(p, 2, 7);
  REQUIRE(blocks.assignment ==
          std::vector<std::size_t>({0, 0, 0, 1, 1, 1}));

  REQUIRE_THROWS_AS(kmeans_cluster(p, 0, 7), InvalidInputError);
  REQUIRE_THROWS_AS(kmeans_cluster(p, 7, 7), InvalidInputError);
}

TEST_CASE("greedy pursuit oracles", "[recovery]") {
  Rng rng(51);
  auto p = orthogonal_problem(16, 5, rng);
  p.observation_y = cplx(3.7, -1.2) * p.dictionary_phi.col(2);
  const auto one = omp(p, 1);
  REQUIRE(one.iterations == 1);
  REQUIRE(one.support == std::vector<std::size_t>({2}));
  REQUIRE(std::abs(one.xi_hat(2) - cplx(3.7, -1.2)) < 1e-12);

  const auto none = omp(p, 0);
  REQUIRE(none.xi_hat.norm() == 0.0);
  REQUIRE(none.iterations == 0);

  // Early exit once the residual is consumed.
  const auto extra = omp(p, 5);
  REQUIRE(extra.iterations <= 2);
  REQUIRE(std::abs(extra.xi_hat(2) - cplx(3.7, -1.2)) < 1e-10);
}

TEST_CASE("proximal solver matches the orthogonal-design closed form",
          "[recovery]") {
  Rng rng(61);
  auto p = orthogonal_problem(20, 6, rng);
  set_sparse_observation(p, {0, 3}, rng, 0.2);
  const Eigen::VectorXcd corr =
      p.dictionary_phi.adjoint() * p.observation_y;
  const double lambda = 0.3 * corr.cwiseAbs().maxCoeff();

  std::vector<double> objective;
  const auto r = fista(p, lambda, 4000, &objective);
  for (Eigen::Index i = 0; i < 6; ++i) {
    const double mag = std::abs(corr(i));
    const cplx want = mag <= lambda
                          ? cplx(0.0, 0.0)
                          : corr(i) * ((mag - lambda) / mag) /
                                p.dictionary_phi.col(i).squaredNorm();
    REQUIRE(std::abs(r.xi_hat(i) - want) < 1e-8);
  }
  for (std::size_t k = 1; k < objective.size(); ++k)
    REQUIRE(objective[k] <= objective[k - 1] * (1.0 + 1e-12) + 1e-15);

  // A threshold above every correlation yields the zero vector.
  const auto zero = fista(p, corr.cwiseAbs().maxCoeff() * 1.001, 50);
  REQUIRE(zero.xi_hat.norm() == 0.0);

  REQUIRE_THROWS_AS(fista(p, 0.0, 10), InvalidInputError);
}

TEST_CASE("noiseless on-grid problems are recovered by all five solvers",
          "[recovery]") {
  const auto f = make_fim_case(4, 4, 71);
  const auto truth = f.channel;

  auto check_result = [&](const RecoveryResult& r, double bound) {
    const auto err = evaluate_nmse(r, truth, f.schedule);
    REQUIRE(err.cascaded < bound);
    REQUIRE(err.direct < bound);
  };
  check_result(omp(f.problem, 17), 1e-6);
  check_result(vsbl(f.problem, SblHyperparams{}), 1e-4);
  check_result(mfvsbl(f.problem, SblHyperparams{}), 1e-6);
  check_result(cmfvsbl(f.problem, SblHyperparams{}, 12, 5), 1e-4);
  const double lambda =
      0.02 * (f.problem.dictionary_phi.adjoint() * f.problem.observation_y)
                 .cwiseAbs()
                 .maxCoeff();
  const auto lasso = fista(f.problem, lambda, 4000);
  check_result(debias_on_support(f.problem, lasso), 1e-4);
}

TEST_CASE("pruning removes junk atoms but never strong true atoms",
          "[recovery]") {
  // Strong unit-magnitude gains on four distinct grid atoms.
  const auto grid = default_angle_grid(12);
  const auto schedule =
      build_schedule_multi(16, 16, 9, virtual_aperture_region(12),
                           PbfSource::RandomPhases, 81);
  const auto channel = make_cascaded_channel(
      {cplx(1.0, 0.0), cplx(0.0, 1.0)}, {cplx(1.0, 0.0), cplx(0.8, -0.6)},
      {grid[5].first, grid[40].first}, {grid[5].second, grid[40].second},
      {0.0, 0.0}, {0.0, 0.0}, cplx(0.9, 0.4));
  const auto p =
      build_problem(schedule, channel, NoiseModel{0.0}, 4, grid);
  const auto xi_true = true_sparse_vector(p, channel);

  SblHyperparams h;
  h.prune_threshold_rho = 1e4;
  const auto r = cmfvsbl(p, h, 12, 9);
  std::size_t exact_zeros = 0;
  for (Eigen::Index i = 0; i < r.xi_hat.size(); ++i) {
    if (r.xi_hat(i) == cplx(0.0, 0.0)) ++exact_zeros;
    if (xi_true(i) != cplx(0.0, 0.0))
      REQUIRE(r.xi_hat(i) != cplx(0.0, 0.0));
  }
  REQUIRE(exact_zeros > 100);  // pruning actually fired
  // The noise-precision shape term keeps the full dictionary size after
  // pruning, so the survivors converge to the noiseless least-squares fit.
  const auto err = evaluate_nmse(r, channel, schedule);
  REQUIRE(err.cascaded < 1e-3);
  REQUIRE(err.direct < 5e-2);

  // An absurdly low threshold prunes everything and reports it.
  SblHyperparams all;
  all.prune_threshold_rho = 1e-9;
  const auto empty = cmfvsbl(p, all, 12, 9);
  REQUIRE(empty.xi_hat.norm() == 0.0);
  REQUIRE(empty.diagnostics.find("pruned") != std::string::npos);
}

TEST_CASE("default pruning threshold never removes true-support atoms",
          "[recovery]") {
  SblHyperparams h;
  h.max_iterations = 60;
  for (std::uint64_t trial = 0; trial < 100; ++trial) {
    const auto f = make_fim_case(2, 2, derive_seed(4000, {trial}));
    const auto xi_true = true_sparse_vector(f.problem, f.channel);
    const auto r = cmfvsbl(f.problem, h, 12, derive_seed(4001, {trial}));
    for (Eigen::Index i = 0; i < xi_true.size(); ++i)
      if (xi_true(i) != cplx(0.0, 0.0))
        REQUIRE(r.xi_hat(i) != cplx(0.0, 0.0));
  }
}

TEST_CASE("recovery results serialize to structured JSON", "[recovery]") {
  Rng rng(91);
  auto p = orthogonal_problem(16, 5, rng);
  p.observation_y = cplx(2.0, 1.0) * p.dictionary_phi.col(3);
  const auto r = omp(p, 1);
  const auto j = recovery_result_to_json(r);
  REQUIRE(j.at("support").size() == 1);
  REQUIRE(j.at("support")[0].get<std::size_t>() == 3);
  REQUIRE(j.at("coefficients").size() == 5);
  REQUIRE(j.at("coefficients")[3][0].get<double>() == Approx(2.0));
  REQUIRE(j.at("coefficients")[3][1].get<double>() == Approx(1.0));
  REQUIRE(j.at("iterations").get<int>() == 1);
  REQUIRE(j.contains("diagnostics"));
}

TEST_CASE("solver input validation", "[recovery]") {
  Rng rng(95);
  auto p = synthetic_problem(10, 4, rng);
  SblHyperparams bad;
  bad.tolerance = 0.0;
  REQUIRE_THROWS_AS(vsbl(p, bad), InvalidInputError);
  bad = SblHyperparams{};
  bad.a = -1.0;
  REQUIRE_THROWS_AS(mfvsbl(p, bad), InvalidInputError);
  REQUIRE_THROWS_AS(cmfvsbl(p, SblHyperparams{}, 0, 1), InvalidInputError);
  REQUIRE_THROWS_AS(cmfvsbl(p, SblHyperparams{}, 5, 1), InvalidInputError);
}
