// Apache License, Version 2.0, refer to LICENSE.txt

#include "gola/exemplar.hpp"

#include "gola/mathkit.hpp"
#include "gola/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

namespace gola {

void ShearFrame::validate() const {
  if (!(m1 > 0.0 && m2 > 0.0)) throw ArgumentError("ShearFrame: masses must be positive");
  if (!(k1 > 0.0 && k2 > 0.0)) throw ArgumentError("ShearFrame: stiffnesses must be positive");
  if (!(c1 >= 0.0 && c2 >= 0.0)) throw ArgumentError("ShearFrame: damping must be nonnegative");
}

ShearFrame ShearFrame::with_damping(double d1, double d2) const {
  ShearFrame f = *this;
  f.c1 = d1;
  f.c2 = d2;
  return f;
}

Matrix assemble_state_matrix(const ShearFrame& frame) {
  frame.validate();
  Matrix k(2, 2), c(2, 2);
  k << frame.k1 + frame.k2, -frame.k2, -frame.k2, frame.k2;
  c << frame.c1 + frame.c2, -frame.c2, -frame.c2, frame.c2;
  const Vector inv_m = (Vector(2) << 1.0 / frame.m1, 1.0 / frame.m2).finished();
  Matrix a = Matrix::Zero(4, 4);
  a.topRightCorner(2, 2).setIdentity();
  a.bottomLeftCorner(2, 2) = -(inv_m.asDiagonal() * k);
  a.bottomRightCorner(2, 2) = -(inv_m.asDiagonal() * c);
  return a;
}

namespace {

bool uniformly_spaced(const std::vector<double>& t) {
  if (t.size() < 3) return false;
  const double dt = t[1] - t[0];
  if (!(dt > 0.0)) return false;
  for (std::size_t i = 2; i < t.size(); ++i)
    if (std::abs((t[i] - t[i - 1]) - dt) > 1e-12 * std::max(1.0, t[i])) return false;
  return true;
}

}  // namespace

Matrix simulate(const ShearFrame& frame, const Vector& u0, const std::vector<double>& times) {
  if (u0.size() != 4) throw ArgumentError("simulate: initial state must have 4 entries");
  const Matrix a = assemble_state_matrix(frame);
  Matrix out(static_cast<Eigen::Index>(times.size()), 4);
  for (double t : times)
    if (!(t >= 0.0)) throw ArgumentError("simulate: times must be nonnegative");

  auto at = [&](double t) -> Vector {
    if (t == 0.0) return u0;
    return matrix_exponential(a * t) * u0;
  };
  if (uniformly_spaced(times)) {
    const double dt = times[1] - times[0];
    const Matrix step = matrix_exponential(a * dt);
    Vector u = at(times[0]);
    out.row(0) = u.transpose();
    for (std::size_t i = 1; i < times.size(); ++i) {
      u = step * u;
      out.row(static_cast<Eigen::Index>(i)) = u.transpose();
    }
  } else {
    for (std::size_t i = 0; i < times.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = at(times[i]).transpose();
  }
  return out;
}

double mechanical_energy(const ShearFrame& frame, const Vector& s) {
  const double drift = s[1] - s[0];
  return 0.5 * (frame.m1 * s[2] * s[2] + frame.m2 * s[3] * s[3]) +
         0.5 * (frame.k1 * s[0] * s[0] + frame.k2 * drift * drift);
}

void ObservationSet::validate() const {
  if (times.size() != static_cast<std::size_t>(values.size()))
    throw ArgumentError("ObservationSet: times and values differ in length");
  if (times.empty()) throw ArgumentError("ObservationSet: no observations");
  for (std::size_t i = 1; i < times.size(); ++i)
    if (!(times[i] > times[i - 1])) throw ArgumentError("ObservationSet: times must be strictly increasing");
  if (!(sigma > 0.0)) throw ArgumentError("ObservationSet: sigma must be positive");
  if (u0.size() != 4) throw ArgumentError("ObservationSet: initial state must have 4 entries");
  if (observed_index < 0 || observed_index > 3) throw ArgumentError("ObservationSet: observed_index out of range");
}

ObservationSet generate_observations(const ShearFrame& truth, const Vector& u0, std::size_t n_obs,
                                     double horizon, double sigma, std::uint64_t seed, int observed_index) {
  if (!(horizon > 0.0)) throw ArgumentError("generate_observations: horizon must be positive");
  if (n_obs < 2) throw ArgumentError("generate_observations: need at least 2 observations");
  if (!(sigma >= 0.0)) throw ArgumentError("generate_observations: sigma must be nonnegative");
  ObservationSet obs;
  obs.sigma = sigma;
  obs.u0 = u0;
  obs.observed_index = observed_index;
  for (std::size_t i = 1; i <= n_obs; ++i)
    obs.times.push_back(horizon * static_cast<double>(i) / static_cast<double>(n_obs));
  const Matrix states = simulate(truth, u0, obs.times);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  obs.values = states.col(observed_index);
  for (Eigen::Index i = 0; i < obs.values.size(); ++i) obs.values[i] += sigma * noise(rng);
  return obs;
}

UnnormalizedTarget damping_log_likelihood(const ObservationSet& obs, const ShearFrame& constants,
                                          const Box& box) {
  obs.validate();
  if (box.dim() != 2) throw ArgumentError("damping_log_likelihood: box must be 2-D");
  if (!(box.lower.minCoeff() > 0.0)) throw ArgumentError("damping_log_likelihood: box must lie in (0, inf)^2");
  const ShearFrame base = constants.with_damping(0.0, 0.0);
  base.validate();
  auto log_phi = [obs, base](const Vector& c) -> double {
    if (!(c[0] > 0.0 && c[1] > 0.0)) return -std::numeric_limits<double>::infinity();
    const Matrix states = simulate(base.with_damping(c[0], c[1]), obs.u0, obs.times);
    const double sse = (obs.values - states.col(obs.observed_index)).squaredNorm();
    return -0.5 * sse / (obs.sigma * obs.sigma);
  };
  return UnnormalizedTarget(2, log_phi, box);
}

ObservationSet ExemplarScenario::observations() const {
  return generate_observations(truth, u0, n_obs, horizon, sigma, data_seed);
}

UnnormalizedTarget ExemplarScenario::target() const {
  return damping_log_likelihood(observations(), truth, box);
}

GolaConfig ExemplarScenario::gola_config() const {
  GolaConfig cfg;
  cfg.n_starts = 64;
  cfg.gradient_tol = 1e-5;  // finite-difference gradients of a simulator
  return cfg;
}

std::vector<Vector> grid_local_minima(const UnnormalizedTarget& target, const Box& box, int n) {
  if (box.dim() != 2) throw ArgumentError("grid_local_minima: box must be 2-D");
  if (n < 3) throw ArgumentError("grid_local_minima: need n >= 3");
  Matrix g(n, n);
  auto node = [&](int i, int j) {
    Vector z(2);
    z[0] = box.lower[0] + (box.upper[0] - box.lower[0]) * i / (n - 1);
    z[1] = box.lower[1] + (box.upper[1] - box.lower[1]) * j / (n - 1);
    return z;
  };
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) g(i, j) = -target.log_phi(node(i, j));
  std::vector<Vector> minima;
  for (int i = 1; i + 1 < n; ++i)
    for (int j = 1; j + 1 < n; ++j) {
      bool lowest = std::isfinite(g(i, j));
      for (int di = -1; di <= 1 && lowest; ++di)
        for (int dj = -1; dj <= 1 && lowest; ++dj)
          if ((di || dj) && !(g(i, j) < g(i + di, j + dj))) lowest = false;
      if (lowest) minima.push_back(node(i, j));
    }
  return minima;
}

GridPosterior::GridPosterior(const UnnormalizedTarget& target, const Box& box, int n)
    : target_(target), box_(box), n_(n) {
  if (box.dim() != 2) throw ArgumentError("GridPosterior: box must be 2-D");
  if (n < 2) throw ArgumentError("GridPosterior: need n >= 2");
  const Vector h = box.width() / (n - 1);
  grid_.resize(n, n);
  Vector z(2);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      z << box.lower[0] + h[0] * i, box.lower[1] + h[1] * j;
      grid_(i, j) = target.log_phi(z);
    }
  const double top = grid_.maxCoeff();
  if (!std::isfinite(top)) throw ScalingError("GridPosterior: log phi is -inf on the whole grid");
  const Matrix e = (grid_.array() - top).exp().matrix();

  // Cell masses from the corner average; their total is the 2-D trapezoid rule.
  cell_cdf_.resize(static_cast<std::size_t>(n - 1) * static_cast<std::size_t>(n - 1));
  double total = 0.0;
  for (int i = 0; i + 1 < n; ++i)
    for (int j = 0; j + 1 < n; ++j) {
      total += 0.25 * (e(i, j) + e(i + 1, j) + e(i, j + 1) + e(i + 1, j + 1));
      cell_cdf_[static_cast<std::size_t>(i) * static_cast<std::size_t>(n - 1) + static_cast<std::size_t>(j)] = total;
    }
  for (auto& c : cell_cdf_) c /= total;
  log_z_ = top + std::log(total * h[0] * h[1]);
}

Density GridPosterior::density() const {
  Density d;
  d.dim = 2;
  const UnnormalizedTarget target = target_;
  const Box box = box_;
  const double log_z = log_z_;
  d.log_pdf = [target, box, log_z](const Vector& z) {
    if (!box.contains(z)) return -std::numeric_limits<double>::infinity();
    return target.log_phi(z) - log_z;
  };
  const std::vector<double> cdf = cell_cdf_;
  const int n = n_;
  d.sample = [cdf, box, n](std::size_t count, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    const Vector h = box.width() / (n - 1);
    Matrix out(static_cast<Eigen::Index>(count), 2);
    for (std::size_t s = 0; s < count; ++s) {
      const double u = unif(rng);
      const auto cell = static_cast<std::size_t>(std::lower_bound(cdf.begin(), cdf.end(), u) - cdf.begin());
      const std::size_t c = std::min(cell, cdf.size() - 1);
      const auto i = static_cast<double>(c / static_cast<std::size_t>(n - 1));
      const auto j = static_cast<double>(c % static_cast<std::size_t>(n - 1));
      out(static_cast<Eigen::Index>(s), 0) = box.lower[0] + h[0] * (i + unif(rng));
      out(static_cast<Eigen::Index>(s), 1) = box.lower[1] + h[1] * (j + unif(rng));
    }
    return out;
  };
  return d;
}

namespace {

double percentile_sorted(const std::vector<double>& xs, double q) {
  const double pos = q * static_cast<double>(xs.size() - 1);
  const auto i = static_cast<std::size_t>(std::floor(pos));
  const std::size_t j = std::min(i + 1, xs.size() - 1);
  return xs[i] + (pos - static_cast<double>(i)) * (xs[j] - xs[i]);
}

}  // namespace

PushforwardSummary pushforward(const Density& posterior, const ShearFrame& constants, const Vector& u0,
                               const std::vector<double>& times, std::size_t n_samples, std::uint64_t seed,
                               int workers) {
  if (n_samples < 100) throw ArgumentError("pushforward: n_samples must be at least 100");
  if (posterior.dim != 2) throw ArgumentError("pushforward: posterior must be over (c1, c2)");
  PushforwardSummary out;
  out.times = times;

  std::vector<Vector> accepted;
  std::size_t drawn = 0;
  for (std::uint64_t batch = 0; accepted.size() < n_samples; ++batch) {
    if (drawn > 100 * n_samples) break;
    const Matrix z = posterior.sample(n_samples, derive_seed(seed, batch));
    for (Eigen::Index r = 0; r < z.rows() && accepted.size() < n_samples; ++r) {
      ++drawn;
      if (z(r, 0) > 0.0 && z(r, 1) > 0.0)
        accepted.push_back(z.row(r).transpose());
      else
        ++out.n_rejected;
    }
  }
  out.n_samples = accepted.size();
  out.high_rejection = 2 * out.n_rejected > drawn;
  if (accepted.empty()) return out;

  std::vector<Matrix> traj(accepted.size());
  parallel_for(accepted.size(), workers, [&](std::size_t s) {
    traj[s] = simulate(constants.with_damping(accepted[s][0], accepted[s][1]), u0, times);
  });

  const auto nt = static_cast<Eigen::Index>(times.size());
  out.mean = Matrix::Zero(nt, 2);
  out.lo95.resize(nt, 2);
  out.hi95.resize(nt, 2);
  std::vector<double> col(accepted.size());
  for (Eigen::Index t = 0; t < nt; ++t)
    for (Eigen::Index f = 0; f < 2; ++f) {
      double sum = 0.0;
      for (std::size_t s = 0; s < accepted.size(); ++s) {
        col[s] = traj[s](t, f);
        sum += col[s];
      }
      out.mean(t, f) = sum / static_cast<double>(accepted.size());
      std::sort(col.begin(), col.end());
      out.lo95(t, f) = percentile_sorted(col, 0.025);
      out.hi95(t, f) = percentile_sorted(col, 0.975);
    }
  return out;
}

PushforwardSummary pushforward(const MixtureModel& posterior, const ShearFrame& constants, const Vector& u0,
                               const std::vector<double>& times, std::size_t n_samples, std::uint64_t seed,
                               int workers) {
  return pushforward(as_density(posterior), constants, u0, times, n_samples, seed, workers);
}

}  // namespace gola
