// Apache License, Version 2.0, refer to LICENSE.txt

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "gola/mathkit.hpp"
#include "gola/metrics.hpp"
#include "gola/pipeline.hpp"

#include <cmath>
#include <random>

using namespace gola;

namespace {

Vector vec(std::initializer_list<double> xs) {
  Vector v(static_cast<Eigen::Index>(xs.size()));
  Eigen::Index i = 0;
  for (double x : xs) v[i++] = x;
  return v;
}

Box cube(int d, double lo, double hi) { return Box{Vector::Constant(d, lo), Vector::Constant(d, hi)}; }

UnnormalizedTarget double_well(double half = 2.0) {
  return UnnormalizedTarget(
      1,
      [](const Vector& z) {
        const double u = z[0] * z[0] - 1.0;
        return -u * u;
      },
      cube(1, -half, half), [](const Vector& z) { return Vector::Constant(1, -4.0 * z[0] * (z[0] * z[0] - 1.0)); });
}

Matrix random_spd(int d, std::mt19937_64& rng) {
  std::normal_distribution<double> normal;
  Matrix g(d, d);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) g(i, j) = normal(rng);
  return g * g.transpose() / d + 0.5 * Matrix::Identity(d, d);
}

UnnormalizedTarget gaussian_target(const Vector& mu, const Matrix& cov, double scale, double half) {
  MixtureModel m({GaussianComponent::from_covariance(mu, cov)}, {1.0});
  return make_mixture_target(m, cube(static_cast<int>(mu.size()), -half, half), scale);
}

LocalMinimum at(const Vector& z, double objective) {
  LocalMinimum m;
  m.location = z;
  m.objective = objective;
  m.converged = true;
  return m;
}

}  // namespace

TEST_CASE("local_minimize examples") {
  GolaConfig cfg;
  cfg.gradient_tol = 1e-10;
  UnnormalizedTarget quad(3, [](const Vector& z) { return -0.5 * z.squaredNorm(); }, cube(3, -5, 5),
                          [](const Vector& z) { return Vector(-z); });
  const auto q = local_minimize(quad, vec({3.0, -4.0, 1.0}), cfg);
  CHECK(q.converged);
  CHECK(q.location.norm() <= 1e-8);

  const auto w = local_minimize(double_well(), vec({0.4}), cfg);
  CHECK(w.converged);
  CHECK(w.location[0] == doctest::Approx(1.0).epsilon(1e-9));

  const auto s = local_minimize(double_well(), vec({1.0}), cfg);
  CHECK(s.converged);
  CHECK(s.iterations == 0);
  CHECK(s.location[0] == 1.0);

  UnnormalizedTarget holed(1, [](const Vector& z) { return z[0] < 0.0 ? -INFINITY : -z[0] * z[0]; },
                           cube(1, -1, 1));
  CHECK_THROWS_AS(local_minimize(holed, vec({-0.5}), cfg), RejectedStartError);
}

TEST_CASE("local_minimize never increases the objective") {
  std::mt19937_64 rng(1);
  Matrix cov(2, 2);
  cov << 1.0, 0.9, 0.9, 1.0;
  auto target = gaussian_target(vec({0.5, -0.5}), cov, 1.0, 6.0);
  std::uniform_real_distribution<double> unif(-6.0, 6.0);
  GolaConfig cfg;
  for (int trial = 0; trial < 50; ++trial) {
    const Vector start = vec({unif(rng), unif(rng)});
    const auto m = local_minimize(target, start, cfg);
    CHECK(m.objective <= -target.log_phi(start));
    CHECK(m.converged);
    CHECK((m.location - vec({0.5, -0.5})).norm() <= 1e-5);
  }
  cfg.quasi_newton = true;
  const auto bfgs = local_minimize(target, vec({-5.0, 5.0}), cfg);
  CHECK(bfgs.converged);
  CHECK((bfgs.location - vec({0.5, -0.5})).norm() <= 1e-5);
}

TEST_CASE("local_minimize stays in the box") {
  // Mode at 3 lies outside [-2, 2]; the run ends on the face, unconverged.
  auto target = gaussian_target(vec({3.0}), Matrix::Identity(1, 1), 1.0, 2.0);
  GolaConfig cfg;
  const auto m = local_minimize(target, vec({0.0}), cfg);
  CHECK(m.location[0] == 2.0);
  CHECK_FALSE(m.converged);
}

TEST_CASE("multistart_minimize examples") {
  GolaConfig cfg;
  cfg.n_starts = 16;
  MultistartStats stats;
  const auto minima = multistart_minimize(double_well(), cfg, &stats);
  bool plus = false, minus = false;
  for (const auto& m : minima) {
    plus = plus || std::abs(m.location[0] - 1.0) < 1e-6;
    minus = minus || std::abs(m.location[0] + 1.0) < 1e-6;
  }
  CHECK(plus);
  CHECK(minus);
  // The centre of the box is the first Sobol point and a maximum of phi.
  CHECK(stats.n_non_minima >= 1);
  for (std::size_t i = 1; i < minima.size(); ++i) CHECK(minima[i - 1].objective <= minima[i].objective);

  Matrix cov(3, 3);
  cov << 2.0, 0.3, 0.1, 0.3, 1.0, -0.2, 0.1, -0.2, 0.5;
  auto gauss = gaussian_target(vec({0.5, 1.0, -1.0}), cov, 1.0, 5.0);
  const auto uni = multistart_minimize(gauss, GolaConfig{});
  CHECK(uni.size() == 96);
  for (const auto& m : uni) CHECK((m.location - uni.front().location).norm() <= 1e-6);

  UnnormalizedTarget nowhere(1, [](const Vector&) { return -INFINITY; }, cube(1, 0, 1));
  CHECK_THROWS_AS(multistart_minimize(nowhere, cfg), NoModesFoundError);
}

TEST_CASE("laplace_at_mode examples") {
  std::mt19937_64 rng(2);
  const Matrix cov = random_spd(4, rng);
  const Vector mu = vec({0.3, -0.2, 1.0, 0.0});
  auto target = gaussian_target(mu, cov, 5.0, 10.0);
  const auto comp = laplace_at_mode(target, mu);
  CHECK((comp.covariance() - cov).norm() / cov.norm() <= 1e-8);
  CHECK((comp.mean() - mu).norm() == 0.0);

  UnnormalizedTarget well(1, [](const Vector& z) {
    const double u = z[0] * z[0] - 1.0;
    return -u * u;
  }, cube(1, -2, 2));
  CHECK(laplace_at_mode(well, vec({1.0})).covariance()(0, 0) == doctest::Approx(0.125).epsilon(1e-6));

  Matrix corr(2, 2);
  corr << 1.0, 0.7, 0.7, 1.0;
  const auto c = laplace_at_mode(gaussian_target(Vector::Zero(2), corr, 1.0, 5.0), Vector::Zero(2));
  CHECK(std::abs(c.covariance()(0, 1) - 0.7) <= 1e-6);

  UnnormalizedTarget flat(1, [](const Vector& z) { return z[0] * z[0]; }, cube(1, -1, 1));
  CHECK_THROWS_AS(laplace_at_mode(flat, vec({0.0})), DegenerateModeError);
}

TEST_CASE("dedup_modes examples") {
  auto target = gaussian_target(Vector::Zero(2), Matrix::Identity(2, 2), 1.0, 20.0);
  CHECK(dedup_modes({}, target, 0.01).components.empty());

  auto one = dedup_modes({at(Vector::Zero(2), 1.0)}, target, 0.01);
  CHECK(one.components.size() == 1);
  CHECK(one.log.front().accepted);

  auto twice = dedup_modes({at(Vector::Zero(2), 1.0), at(Vector::Zero(2), 1.0)}, target, 0.01);
  CHECK(twice.components.size() == 1);
  CHECK_FALSE(twice.log[1].accepted);
  CHECK(twice.log[1].max_p_value == 1.0);

  // Ten standard deviations away: survival(100, 2) = exp(-50).
  auto far = dedup_modes({at(Vector::Zero(2), 1.0), at(vec({10.0, 0.0}), 2.0)}, target, 0.01);
  CHECK(far.components.size() == 2);
  CHECK(far.log[1].accepted);
  CHECK(far.log[1].max_p_value == doctest::Approx(std::exp(-50.0)).epsilon(1e-12));
}

TEST_CASE("dedup_modes is idempotent") {
  MixtureModel m({GaussianComponent(vec({-3.0, 0.0}), Matrix::Identity(2, 2)),
                  GaussianComponent(vec({3.0, 0.0}), Matrix::Identity(2, 2) * 0.5),
                  GaussianComponent(vec({0.0, 4.0}), Matrix::Identity(2, 2))},
                 {0.3, 0.3, 0.4});
  auto target = make_mixture_target(m, cube(2, -8, 8));
  const auto minima = multistart_minimize(target, GolaConfig{});
  const auto first = dedup_modes(minima, target, 0.01);
  CHECK(first.components.size() == 3);
  std::vector<LocalMinimum> again;
  for (const auto& c : first.components) again.push_back(at(c.mean(), -target.log_phi(c.mean())));
  const auto second = dedup_modes(again, target, 0.01);
  REQUIRE(second.components.size() == first.components.size());
  for (std::size_t k = 0; k < first.components.size(); ++k) {
    CHECK(second.components[k].mean() == first.components[k].mean());
    CHECK(second.components[k].chol_cov() == first.components[k].chol_cov());
  }
}

TEST_CASE("nnls satisfies the KKT conditions") {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> normal;
  for (int trial = 0; trial < 200; ++trial) {
    const int m = 30, n = 1 + trial % 8;
    Matrix a(m, n);
    Vector b(m);
    for (int i = 0; i < m; ++i) {
      b[i] = normal(rng);
      for (int j = 0; j < n; ++j) a(i, j) = normal(rng);
    }
    const Vector x = nnls(a, b);
    CHECK((x.array() >= 0.0).all());
    const Vector grad = a.transpose() * (a * x - b);  // gradient of 0.5 ||Ax - b||^2
    for (int j = 0; j < n; ++j) {
      if (x[j] == 0.0) {
        CHECK(grad[j] >= -1e-8);
      } else {
        CHECK(std::abs(grad[j]) <= 1e-8);
      }
    }
  }
}

TEST_CASE("solve_weights examples") {
  Matrix cov(2, 2);
  cov << 1.0, 0.4, 0.4, 0.8;
  const auto c1 = GaussianComponent::from_covariance(vec({0.0, 0.0}), cov);
  const auto single = solve_weights(gaussian_target(vec({0.0, 0.0}), cov, 2.0, 10.0), {c1}, 500, 3);
  CHECK(single.weights()[0] == doctest::Approx(2.0).epsilon(1e-8));
  CHECK(single.residual <= 1e-8);

  const auto c2 = GaussianComponent(vec({4.0, 1.0}), Matrix::Identity(2, 2) * 0.7);
  MixtureModel truth({c1, c2}, {0.3, 0.7});
  auto target = make_mixture_target(truth, cube(2, -10, 10));
  const auto fit = solve_weights(target, {c1, c2}, 2048, 5);
  const Vector w = fit.weights() / fit.weights().sum();
  CHECK(std::abs(w[0] - 0.3) <= 1e-3);
  CHECK(std::abs(w[1] - 0.7) <= 1e-3);

  const auto spurious = GaussianComponent(vec({40.0, -40.0}), Matrix::Identity(2, 2));
  const auto fit3 = solve_weights(target, {c1, c2, spurious}, 3072, 6);
  CHECK(fit3.weights()[2] <= 1e-6);

  UnnormalizedTarget dead(2, [](const Vector&) { return -INFINITY; }, cube(2, -1, 1));
  CHECK_THROWS_AS(solve_weights(dead, {c1}, 100, 1), ScalingError);
  CHECK_THROWS_AS(solve_weights(target, {c1, c2}, 1, 1), ArgumentError);
}

TEST_CASE("run_gola on a scaled Gaussian recovers it exactly") {
  std::mt19937_64 rng(9);
  for (int d : {1, 2, 5}) {
    const Matrix cov = random_spd(d, rng);
    Vector mu(d);
    for (int i = 0; i < d; ++i) mu[i] = 0.3 * i - 0.5;
    const double c = 7.5;
    const auto report = run_gola(gaussian_target(mu, cov, c, 6.0), GolaConfig{});
    REQUIRE(report.mixture.size() == 1);
    const auto& comp = report.mixture.components().front();
    CHECK((comp.mean() - mu).norm() / mu.norm() <= 1e-6);
    CHECK((comp.covariance() - cov).norm() / cov.norm() <= 1e-6);
    CHECK(std::abs(report.evidence / c - 1.0) <= 0.01);
    CHECK(report.mixture.weights()[0] == 1.0);
  }
}

TEST_CASE("run_gola on a separated two-mode target") {
  Matrix cov(2, 2);
  cov << 1.0, -0.3, -0.3, 0.6;
  MixtureModel truth({GaussianComponent(vec({-3.0, -1.0}), Matrix::Identity(2, 2) * 0.8),
                      GaussianComponent::from_covariance(vec({3.0, 2.0}), cov)},
                     {0.35, 0.65});
  auto target = make_mixture_target(truth, cube(2, -8, 8), 0.2);
  GolaConfig cfg;
  cfg.master_seed = 4;
  const auto report = run_gola(target, cfg);
  CHECK(report.mixture.size() == 2);
  const auto jsd = jsd_normalized(as_density(truth), as_density(report.mixture), 20000, 1);
  CHECK(jsd.value <= 0.05);
  CHECK(std::abs(report.evidence - 0.2) <= 0.01 * 0.2);
  CHECK(report.dedup_log.size() == report.raw_minima.size());

  // Mode outside the box: only the other one is found; weights renormalize.
  auto clipped = make_mixture_target(truth, Box{vec({-8.0, -8.0}), vec({0.0, 8.0})});
  const auto half = run_gola(clipped, cfg);
  REQUIRE(half.mixture.size() == 1);
  CHECK((half.mixture.components()[0].mean() - vec({-3.0, -1.0})).norm() <= 1e-4);
  CHECK(half.mixture.weights()[0] == 1.0);
}

TEST_CASE("run_gola is deterministic across thread counts") {
  MixtureModel truth({GaussianComponent(vec({-2.0, 0.0, 1.0}), Matrix::Identity(3, 3)),
                      GaussianComponent(vec({2.0, 1.0, -1.0}), Matrix::Identity(3, 3) * 0.5)},
                     {0.5, 0.5});
  auto target = make_mixture_target(truth, cube(3, -6, 6));
  GolaConfig one;
  GolaConfig many = one;
  many.workers = 4;
  const auto a = run_gola(target, one);
  const auto b = run_gola(target, many);
  REQUIRE(a.mixture.size() == b.mixture.size());
  CHECK(a.evidence == b.evidence);
  CHECK(a.weight_residual == b.weight_residual);
  for (std::size_t k = 0; k < a.mixture.size(); ++k) {
    CHECK(a.mixture.weights()[k] == b.mixture.weights()[k]);
    CHECK(a.mixture.components()[k].mean() == b.mixture.components()[k].mean());
    CHECK(a.mixture.components()[k].chol_cov() == b.mixture.components()[k].chol_cov());
  }
  REQUIRE(a.raw_minima.size() == b.raw_minima.size());
  for (std::size_t i = 0; i < a.raw_minima.size(); ++i) CHECK(a.raw_minima[i].location == b.raw_minima[i].location);
}

TEST_CASE("evidence is consistent across seeds") {
  MixtureModel truth({GaussianComponent(vec({-2.0, 0.0}), Matrix::Identity(2, 2)),
                      GaussianComponent(vec({2.5, 0.5}), Matrix::Identity(2, 2) * 0.6)},
                     {0.4, 0.6});
  const double c = 3.0;
  auto target = make_mixture_target(truth, cube(2, -7, 7), c);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    GolaConfig cfg;
    cfg.master_seed = seed;
    cfg.n_weight_samples = 4096;
    const auto report = run_gola(target, cfg);
    CHECK(std::abs(report.evidence / c - 1.0) <= 0.02);
  }
}

TEST_CASE("config validation") {
  GolaConfig cfg;
  cfg.dedup_threshold = 1.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = GolaConfig{};
  cfg.gradient_tol = 0.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  CHECK(GolaConfig{}.starts_for(3) == 96);
  CHECK(GolaConfig{}.weight_samples_for(2) == 2048);
}
