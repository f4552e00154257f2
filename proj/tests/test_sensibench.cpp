// Apache License, Version 2.0, refer to LICENSE.txt

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "gola/metrics.hpp"
#include "gola/sensibench.hpp"

#include <atomic>
#include <cmath>
#include <random>

using namespace gola;

namespace {

std::vector<Factor> unit_factors(int k) {
  std::vector<Factor> fs;
  for (int i = 0; i < k; ++i) fs.push_back({"x" + std::to_string(i + 1), 0.0, 1.0, false});
  return fs;
}

// Overlap of equal-covariance Gaussians: exp(-delta^T Sigma^{-1} delta / 4).
double equal_cov_overlap(const GaussianComponent& a, const GaussianComponent& b) {
  const Vector delta = a.mean() - b.mean();
  return std::exp(-0.25 * delta.dot(a.covariance().ldlt().solve(delta)));
}

}  // namespace

TEST_CASE("generate_test_gmm weights and covariances") {
  const MixtureModel m = generate_test_gmm({4, 3, 2.0, 0.0, 1e-3}, 1);
  REQUIRE(m.size() == 3);
  CHECK(m.weights()[0] == doctest::Approx(4.0 / 7.0).epsilon(1e-14));
  CHECK(m.weights()[1] == doctest::Approx(2.0 / 7.0).epsilon(1e-14));
  CHECK(m.weights()[2] == doctest::Approx(1.0 / 7.0).epsilon(1e-14));
  for (const auto& c : m.components()) CHECK(c.covariance() == Matrix::Identity(4, 4));

  const MixtureModel corr = generate_test_gmm({5, 2, 1.5, 0.6, 1e-3}, 2);
  for (const auto& c : corr.components()) {
    const Matrix cov = c.covariance();
    for (int i = 0; i < 5; ++i)
      for (int j = 0; j < 5; ++j) CHECK(cov(i, j) == doctest::Approx(i == j ? 1.0 : 0.6).epsilon(1e-12));
  }
}

TEST_CASE("generate_test_gmm hits the overlap target") {
  const MixtureModel pair = generate_test_gmm({3, 2, 1.0, 0.3, 5e-3}, 3);
  const double v = dice_overlap(pair.components()[0], pair.components()[1]);
  CHECK(std::abs(v - 5e-3) <= 0.01 * 5e-3);
  CHECK(std::abs(equal_cov_overlap(pair.components()[0], pair.components()[1]) - v) <= 1e-12);

  const FactorSpec spec = FactorSpec::standard();
  for (std::uint64_t s = 0; s < 200; ++s) {
    const FactorValues f = spec.sample(s);
    const MixtureModel m = generate_test_gmm(f, s);
    CHECK(m.dim() == f.d);
    CHECK(static_cast<int>(m.size()) == f.M);
    double best = 0.0;
    for (std::size_t i = 0; i < m.size(); ++i)
      for (std::size_t j = i + 1; j < m.size(); ++j) {
        const double o = equal_cov_overlap(m.components()[i], m.components()[j]);
        CHECK(o <= f.lambda * 1.01);
        best = std::max(best, o);
      }
    CHECK(std::abs(best - f.lambda) <= 0.01 * f.lambda);
    CHECK(max_pairwise_overlap(m) == doctest::Approx(best).epsilon(1e-10));
  }
}

TEST_CASE("generate_test_gmm determinism and failure modes") {
  const FactorValues f{6, 4, 1.3, 0.2, 1e-2};
  const MixtureModel a = generate_test_gmm(f, 9);
  const MixtureModel b = generate_test_gmm(f, 9);
  const MixtureModel c = generate_test_gmm(f, 10);
  for (std::size_t k = 0; k < a.size(); ++k) CHECK(a.components()[k].mean() == b.components()[k].mean());
  CHECK(a.components()[0].mean() != c.components()[0].mean());
  CHECK_THROWS_AS(generate_test_gmm({1, 3, 1.0, 0.0, 1e-2}, 1), GenerationError);
  CHECK_THROWS_AS(generate_test_gmm({2, 2, 1.0, 1.0, 1e-2}, 1), ArgumentError);
  // Square layout in the plane when M exceeds d + 1.
  const MixtureModel sq = generate_test_gmm({2, 4, 1.0, 0.0, 1e-3}, 4);
  CHECK(std::abs(max_pairwise_overlap(sq) - 1e-3) <= 1e-5);
}

TEST_CASE("factor specs") {
  const auto t2 = FactorSpec::hard();
  CHECK(t2.d.lo == 8);
  CHECK(t2.M.lo == 3);
  for (std::uint64_t s = 0; s < 500; ++s) {
    const FactorValues f = t2.sample(s);
    CHECK(f.d >= 8);
    CHECK(f.d <= 10);
    CHECK(f.omega >= 1.3);
    CHECK(f.c >= 0.1);
    CHECK(f.lambda <= 1e-2);
  }
  FactorSpec bad;
  bad.c = {0.0, 1.0};
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  const Factor d{"d", 2, 10, true};
  CHECK(d.from_unit(0.0) == 2.0);
  CHECK(d.from_unit(0.9999999) == 10.0);
  CHECK(d.from_unit(0.5) == 6.0);
}

TEST_CASE("sobol_design layout and evaluation count") {
  std::atomic<int> calls{0};
  auto design = sobol_design(unit_factors(2), 4, 1, [&](const Vector& x, std::uint64_t) {
    ++calls;
    return x.sum();
  });
  CHECK(calls == 16);
  CHECK(design.evaluations() == 16);
  CHECK(design.AB[0].col(0) == design.B.col(0));
  CHECK(design.AB[0].col(1) == design.A.col(1));
  CHECK(design.AB[1].col(1) == design.B.col(1));
  CHECK(design.AB[1].col(0) == design.A.col(0));
  for (Eigen::Index r = 0; r < 4; ++r) CHECK(design.fA[r] == doctest::Approx(design.A.row(r).sum()));

  auto constant = sobol_design(unit_factors(3), 8, 2, [](const Vector&, std::uint64_t) { return 7.0; });
  CHECK((constant.fA.array() == 7.0).all());
  CHECK((constant.fB.array() == 7.0).all());
  for (const auto& f : constant.fAB) CHECK((f.array() == 7.0).all());
  CHECK_THROWS_AS(estimate_indices(constant), DegenerateOutputError);
  CHECK_THROWS_AS(sobol_design(unit_factors(2), 1, 1, [](const Vector&, std::uint64_t) { return 0.0; }),
                  ArgumentError);
}

TEST_CASE("sobol_design resamples failing rows once") {
  const std::uint64_t seed = 5;
  const std::uint64_t poisoned = derive_seed(seed, 1);  // first evaluation of row 0
  auto design = sobol_design(unit_factors(2), 16, seed, [&](const Vector& x, std::uint64_t s) {
    if (s == poisoned) throw std::runtime_error("model failure");
    return x[0];
  });
  REQUIRE(design.resampled_rows.size() == 1);
  CHECK(design.resampled_rows[0] == 0);
  CHECK(design.fA[0] == design.A(0, 0));

  CHECK_THROWS_AS(sobol_design(unit_factors(2), 64, seed,
                               [](const Vector& x, std::uint64_t) {
                                 if (x[0] > 0.5) throw std::runtime_error("model failure");
                                 return x[1];
                               }),
                  EvaluationError);
}

TEST_CASE("estimate_indices analytic decompositions") {
  const std::size_t n = 1 << 14;
  auto additive = estimate_indices(
      sobol_design(unit_factors(2), n, 1, [](const Vector& x, std::uint64_t) { return x[0] + 2.0 * x[1]; }));
  CHECK(std::abs(additive.S[0] - 0.2) <= 0.02);
  CHECK(std::abs(additive.S[1] - 0.8) <= 0.02);
  CHECK(std::abs(additive.ST[0] - 0.2) <= 0.02);
  CHECK(std::abs(additive.ST[1] - 0.8) <= 0.02);
  CHECK(std::abs(additive.S.sum() - 1.0) <= 0.03);

  auto dummy = estimate_indices(sobol_design(unit_factors(3), n, 2, [](const Vector& x, std::uint64_t) {
    return std::sin(6.0 * x[0]) + x[1] * x[1];
  }));
  CHECK(std::abs(dummy.S[2]) <= 0.02);
  CHECK(dummy.ST[2] <= 0.02);
  CHECK(dummy.ST[2] >= 0.0);

  // (X1 - 1/2)(X2 - 1/2) has no main effects: all variance is interaction.
  auto centered = estimate_indices(sobol_design(unit_factors(2), n, 3, [](const Vector& x, std::uint64_t) {
    return (x[0] - 0.5) * (x[1] - 0.5);
  }));
  CHECK(centered.S.sum() < 1.0);
  CHECK(std::abs(1.0 - centered.S.sum() - 1.0) <= 0.03);
  CHECK(std::abs(centered.ST[0] - 1.0) <= 0.03);

  // X1 X2: V = 7/144, V_i = 3/144, interaction 1/144.
  auto product = estimate_indices(
      sobol_design(unit_factors(2), n, 4, [](const Vector& x, std::uint64_t) { return x[0] * x[1]; }));
  CHECK(std::abs(product.S[0] - 3.0 / 7.0) <= 0.03);
  CHECK(std::abs(product.S[1] - 3.0 / 7.0) <= 0.03);
  CHECK(std::abs(1.0 - product.S.sum() - 1.0 / 7.0) <= 0.03);
  CHECK(std::abs(product.ST[0] - 4.0 / 7.0) <= 0.03);
}

TEST_CASE("total indices are nonnegative and dominate first order") {
  std::mt19937_64 rng(17);
  std::normal_distribution<double> normal;
  for (int trial = 0; trial < 20; ++trial) {
    Vector a(3);
    for (int i = 0; i < 3; ++i) a[i] = normal(rng);
    const double b = normal(rng);
    auto design = sobol_design(unit_factors(3), 2048, static_cast<std::uint64_t>(trial),
                               [&](const Vector& x, std::uint64_t) {
                                 return a.dot(x) + b * x[0] * x[2] + std::cos(3.0 * x[1]);
                               });
    auto r = bootstrap_ci(design, 200, 0.95, static_cast<std::uint64_t>(trial));
    for (Eigen::Index i = 0; i < 3; ++i) {
      CHECK(r.ST[i] >= 0.0);
      const double half = 0.5 * (r.S_hi[i] - r.S_lo[i]);
      CHECK(r.ST[i] >= r.S[i] - 2.0 * half);
    }
  }
}

TEST_CASE("bootstrap intervals") {
  auto design = sobol_design(unit_factors(2), 1024, 7, [](const Vector& x, std::uint64_t) { return x[0] + 2.0 * x[1]; });
  auto r = bootstrap_ci(design, 1000, 0.95, 8);
  CHECK(r.replicates == 1000);
  for (Eigen::Index i = 0; i < 2; ++i) {
    CHECK(r.S_lo[i] <= r.S[i]);
    CHECK(r.S[i] <= r.S_hi[i]);
    CHECK(r.ST_lo[i] <= r.ST[i]);
    CHECK(r.ST[i] <= r.ST_hi[i]);
  }
  CHECK_THROWS_AS(bootstrap_ci(design, 99, 0.95, 1), ArgumentError);

  // A design whose variance comes from one row: many resamples miss it.
  SobolDesign sparse;
  sparse.factors = unit_factors(1);
  sparse.A = Matrix::Zero(100, 1);
  sparse.B = Matrix::Zero(100, 1);
  sparse.AB = {Matrix::Zero(100, 1)};
  sparse.fA = Vector::Zero(100);
  sparse.fA[0] = 1.0;
  sparse.fB = Vector::Zero(100);
  sparse.fAB = {Vector::Zero(100)};
  auto skipped = bootstrap_ci(sparse, 400, 0.95, 3);
  CHECK(skipped.skipped_replicates > 50);
  CHECK(skipped.replicates + skipped.skipped_replicates == 400);

  // Small-scale coverage check of the percentile intervals.
  int covered_s0 = 0, covered_st1 = 0;
  for (int rep = 0; rep < 40; ++rep) {
    auto d = sobol_design(unit_factors(2), 512, 100 + static_cast<std::uint64_t>(rep),
                          [](const Vector& x, std::uint64_t) { return x[0] + 2.0 * x[1]; });
    auto ci = bootstrap_ci(d, 300, 0.95, 200 + static_cast<std::uint64_t>(rep));
    covered_s0 += (ci.S_lo[0] <= 0.2 && 0.2 <= ci.S_hi[0]) ? 1 : 0;
    covered_st1 += (ci.ST_lo[1] <= 0.8 && 0.8 <= ci.ST_hi[1]) ? 1 : 0;
  }
  CHECK(covered_s0 >= 34);
  CHECK(covered_st1 >= 34);
}

TEST_CASE("robustness in the easy regime") {
  FactorSpec easy;
  easy.d = {2, 2};
  easy.M = {2, 2};
  easy.omega = {1.0, 1.0};
  easy.c = {0.0, 0.0};
  easy.lambda = {1e-4, 1e-4};
  const GolaConfig cfg;
  auto table = robustness_study(easy, 20, cfg, 4000, 11);
  REQUIRE(table.cases.size() == 20);
  for (const auto& c : table.cases) {
    CHECK(c.status == "ok");
    CHECK(c.Y <= kNearPerfectFit);
  }
  CHECK(table.fraction_within() == 1.0);

  auto parallel = robustness_study(easy, 20, cfg, 4000, 11, 3);
  for (std::size_t i = 0; i < 20; ++i) CHECK(parallel.cases[i].Y == table.cases[i].Y);

  std::string status;
  CHECK(robustness_response({1, 3, 1.0, 0.0, 1e-2}, cfg, 1000, 1, &status) == 1.0);
  CHECK(status == "generation");
}
