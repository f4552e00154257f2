// Apache License, Version 2.0, refer to LICENSE.txt

#include "gola/pipeline.hpp"

#include "gola/mathkit.hpp"
#include "gola/parallel.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <sstream>

namespace gola {

namespace {

constexpr double kArmijo = 1e-4;
constexpr int kMaxBacktracks = 60;

double objective_at(const UnnormalizedTarget& target, const Vector& z) {
  const double lp = target.log_phi(z);
  return std::isnan(lp) ? std::numeric_limits<double>::infinity() : -lp;
}

bool lexicographic_less(const Vector& a, const Vector& b) {
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    if (a[i] < b[i]) return true;
    if (b[i] < a[i]) return false;
  }
  return false;
}

// True when the Hessian of -log phi has a clearly negative direction.
bool is_saddle_or_maximum(const UnnormalizedTarget& target, const Vector& z) {
  Matrix h;
  try {
    h = eval_hessian(target, z);
  } catch (const DerivativeError&) {
    return true;
  }
  if (!h.allFinite()) return true;
  Eigen::SelfAdjointEigenSolver<Matrix> eig(h, Eigen::EigenvaluesOnly);
  const Vector& ev = eig.eigenvalues();
  const double scale = std::max(ev.cwiseAbs().maxCoeff(), 1e-300);
  return ev.minCoeff() < -1e-6 * scale;
}

}  // namespace

std::size_t GolaConfig::starts_for(int dim) const {
  return n_starts > 0 ? n_starts : static_cast<std::size_t>(32 * dim);
}

std::size_t GolaConfig::weight_samples_for(std::size_t k) const {
  return n_weight_samples > 0 ? n_weight_samples : 1024 * k;
}

void GolaConfig::validate() const {
  if (max_local_iters < 1) throw ConfigError("max_local_iters must be at least 1");
  if (!(gradient_tol > 0.0)) throw ConfigError("gradient_tol must be positive");
  if (!(dedup_threshold > 0.0 && dedup_threshold < 1.0))
    throw ConfigError("dedup_threshold must lie in (0, 1)");
  if (workers < 1) throw ConfigError("workers must be at least 1");
}

Vector WeightFit::weights() const { return scaled_weights * std::exp(log_scale); }

LocalMinimum local_minimize(const UnnormalizedTarget& target, const Vector& start,
                            const GolaConfig& cfg) {
  if (start.size() != target.dim())
    throw ArgumentError("local_minimize: start has the wrong dimension");
  const Box& box = target.search_box();
  Vector z = box.clamp(start);
  double f = objective_at(target, z);
  if (!std::isfinite(f)) {
    std::ostringstream msg;
    msg << "local_minimize: log phi is not finite at the start point";
    throw RejectedStartError(msg.str());
  }
  Vector g = -eval_gradient(target, z);

  const Eigen::Index d = z.size();
  Matrix inv_hess = Matrix::Identity(d, d);
  const double min_width = box.width().minCoeff();
  double alpha = std::min(1.0, 0.1 * min_width / std::max(g.norm(), 1e-300));

  LocalMinimum out;
  int it = 0;
  for (; it < cfg.max_local_iters; ++it) {
    if (g.norm() <= cfg.gradient_tol) break;

    Vector direction = -g;
    if (cfg.quasi_newton) {
      direction = -(inv_hess * g);
      if (!(g.dot(direction) < 0.0)) {
        inv_hess.setIdentity();
        direction = -g;
      }
      alpha = it == 0 ? alpha : 1.0;
    }

    bool accepted = false;
    Vector z_new, step;
    double f_new = f;
    for (int bt = 0; bt < kMaxBacktracks; ++bt) {
      z_new = box.clamp(z + alpha * direction);
      step = z_new - z;
      const double decrease = g.dot(step);
      if (step.isZero(0.0)) break;
      if (decrease < 0.0) {
        f_new = objective_at(target, z_new);
        if (f_new <= f + kArmijo * decrease) {
          accepted = true;
          break;
        }
      }
      alpha *= 0.5;
    }
    if (!accepted) break;

    const Vector g_new = -eval_gradient(target, z_new);
    const Vector y = g_new - g;
    const double sy = step.dot(y);
    if (cfg.quasi_newton) {
      if (sy > 1e-12 * step.norm() * y.norm()) {
        const double rho = 1.0 / sy;
        const Matrix eye = Matrix::Identity(d, d);
        inv_hess = (eye - rho * step * y.transpose()) * inv_hess *
                       (eye - rho * y * step.transpose()) +
                   rho * step * step.transpose();
      }
    } else {
      // Barzilai-Borwein trial length for the next iteration.
      if (sy > 0.0) {
        alpha = step.squaredNorm() / sy;
      } else {
        alpha *= 4.0;
      }
    }
    z = z_new;
    f = f_new;
    g = g_new;
  }

  out.location = z;
  out.objective = f;
  out.gradient_norm = g.norm();
  out.converged = out.gradient_norm <= cfg.gradient_tol;
  out.iterations = it;
  return out;
}

std::vector<LocalMinimum> multistart_minimize(const UnnormalizedTarget& target,
                                              const GolaConfig& cfg, MultistartStats* stats) {
  cfg.validate();
  const int d = target.dim();
  const std::size_t n = cfg.starts_for(d);
  const Box& box = target.search_box();
  const Matrix unit = sobol_points(d, n);

  enum class Outcome { kMinimum, kRejected, kUnconverged, kNonMinimum };
  std::vector<std::optional<LocalMinimum>> results(n);
  std::vector<Outcome> outcomes(n, Outcome::kUnconverged);

  parallel_for(n, cfg.workers, [&](std::size_t i) {
    const Vector start =
        box.lower + unit.row(static_cast<Eigen::Index>(i)).transpose().cwiseProduct(box.width());
    try {
      LocalMinimum m = local_minimize(target, start, cfg);
      m.start_index = i;
      if (!m.converged) {
        outcomes[i] = Outcome::kUnconverged;
      } else if (is_saddle_or_maximum(target, m.location)) {
        outcomes[i] = Outcome::kNonMinimum;
      } else {
        outcomes[i] = Outcome::kMinimum;
        results[i] = std::move(m);
      }
    } catch (const RejectedStartError&) {
      outcomes[i] = Outcome::kRejected;
    } catch (const DerivativeError&) {
      outcomes[i] = Outcome::kUnconverged;
    }
  });

  MultistartStats local;
  local.n_starts = n;
  std::vector<LocalMinimum> minima;
  for (std::size_t i = 0; i < n; ++i) {
    switch (outcomes[i]) {
      case Outcome::kMinimum:
        minima.push_back(*results[i]);
        break;
      case Outcome::kRejected:
        ++local.n_rejected_starts;
        break;
      case Outcome::kUnconverged:
        ++local.n_unconverged;
        break;
      case Outcome::kNonMinimum:
        ++local.n_non_minima;
        break;
    }
  }
  if (stats) *stats = local;
  if (minima.empty()) {
    std::ostringstream msg;
    msg << "multistart_minimize: none of " << n << " local searches converged to a minimum ("
        << local.n_rejected_starts << " rejected starts, " << local.n_unconverged << " unconverged, "
        << local.n_non_minima << " saddles or maxima)";
    throw NoModesFoundError(msg.str());
  }
  std::stable_sort(minima.begin(), minima.end(), [](const LocalMinimum& a, const LocalMinimum& b) {
    if (a.objective != b.objective) return a.objective < b.objective;
    return lexicographic_less(a.location, b.location);
  });
  return minima;
}

GaussianComponent laplace_at_mode(const UnnormalizedTarget& target, const Vector& mode) {
  const Matrix h = eval_hessian(target, mode);
  // Factor the index-reversed Hessian: if P H P = R R^T then
  // H^{-1} = (P R^{-T} P)(P R^{-T} P)^T and P R^{-T} P is lower triangular.
  SpdMatrix f;
  try {
    f = cholesky_spd(h.reverse());
  } catch (const SingularMatrixError& e) {
    std::ostringstream msg;
    msg << "laplace_at_mode: Hessian of -log phi is not positive definite at the mode ("
        << e.what() << ")";
    throw DegenerateModeError(msg.str(), mode);
  } catch (const ArgumentError& e) {
    throw DegenerateModeError(std::string("laplace_at_mode: ") + e.what(), mode);
  }
  const Eigen::Index d = h.rows();
  const Matrix r_inv_t = f.chol_lower.transpose().triangularView<Eigen::Upper>().solve(
      Matrix::Identity(d, d));
  Matrix chol_cov = r_inv_t.reverse();
  return GaussianComponent(mode, std::move(chol_cov));
}

DedupResult dedup_modes(const std::vector<LocalMinimum>& candidates,
                        const UnnormalizedTarget& target, double t) {
  if (!(t > 0.0 && t < 1.0)) throw ArgumentError("dedup_modes: threshold must lie in (0, 1)");
  DedupResult out;
  const int dof = target.dim();
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const Vector& z = candidates[i].location;
    DedupDecision decision;
    decision.candidate = i;
    double min_p = 1.0, max_p = 0.0;
    for (const auto& comp : out.components) {
      const double dm = mahalanobis_distance(z, comp.mean(), comp.chol_cov());
      const double p = chi_square_survival(dm * dm, dof);
      min_p = std::min(min_p, p);
      max_p = std::max(max_p, p);
    }
    if (out.components.empty()) min_p = 0.0;
    decision.min_p_value = min_p;
    decision.max_p_value = max_p;
    decision.accepted = max_p < t;
    if (decision.accepted) out.components.push_back(laplace_at_mode(target, z));
    out.log.push_back(decision);
  }
  return out;
}

Vector nnls(const Matrix& a, const Vector& b, int max_iter) {
  const Eigen::Index m = a.rows();
  const Eigen::Index n = a.cols();
  if (b.size() != m) throw ArgumentError("nnls: right-hand side length mismatch");
  if (max_iter <= 0) max_iter = static_cast<int>(30 * std::max<Eigen::Index>(n, 1));
  const double tol = 10.0 * std::numeric_limits<double>::epsilon() *
                     a.cwiseAbs().colwise().sum().maxCoeff() *
                     static_cast<double>(std::max(m, n)) * std::max(1.0, b.cwiseAbs().maxCoeff());

  Vector x = Vector::Zero(n);
  std::vector<bool> passive(static_cast<std::size_t>(n), false);
  Vector w = a.transpose() * (b - a * x);

  auto solve_passive = [&](Vector& s) {
    std::vector<Eigen::Index> idx;
    for (Eigen::Index j = 0; j < n; ++j)
      if (passive[static_cast<std::size_t>(j)]) idx.push_back(j);
    Matrix ap(m, static_cast<Eigen::Index>(idx.size()));
    for (std::size_t c = 0; c < idx.size(); ++c) ap.col(static_cast<Eigen::Index>(c)) = a.col(idx[c]);
    const Vector sp = ap.colPivHouseholderQr().solve(b);
    s.setZero(n);
    for (std::size_t c = 0; c < idx.size(); ++c) s[idx[c]] = sp[static_cast<Eigen::Index>(c)];
  };

  int iter = 0;
  for (;;) {
    Eigen::Index best = -1;
    double best_w = tol;
    for (Eigen::Index j = 0; j < n; ++j) {
      if (!passive[static_cast<std::size_t>(j)] && w[j] > best_w) {
        best_w = w[j];
        best = j;
      }
    }
    if (best < 0) break;
    passive[static_cast<std::size_t>(best)] = true;

    Vector s;
    for (;;) {
      if (++iter > max_iter) return x;
      solve_passive(s);
      bool feasible = true;
      for (Eigen::Index j = 0; j < n; ++j)
        if (passive[static_cast<std::size_t>(j)] && s[j] <= 0.0) feasible = false;
      if (feasible) {
        x = s;
        break;
      }
      double step = 1.0;
      for (Eigen::Index j = 0; j < n; ++j) {
        if (passive[static_cast<std::size_t>(j)] && s[j] <= 0.0)
          step = std::min(step, x[j] / (x[j] - s[j]));
      }
      x += step * (s - x);
      for (Eigen::Index j = 0; j < n; ++j) {
        if (passive[static_cast<std::size_t>(j)] && x[j] <= tol * 1e-3) {
          passive[static_cast<std::size_t>(j)] = false;
          x[j] = 0.0;
        }
      }
    }
    w = a.transpose() * (b - a * x);
  }
  return x;
}

WeightFit solve_weights(const UnnormalizedTarget& target,
                        const std::vector<GaussianComponent>& components, std::size_t n,
                        std::uint64_t seed) {
  const std::size_t k = components.size();
  if (k == 0) throw ArgumentError("solve_weights: no components");
  if (n < k) throw ArgumentError("solve_weights: need at least as many samples as components");
  for (const auto& c : components)
    if (c.dim() != target.dim()) throw ArgumentError("solve_weights: component dimension mismatch");

  const MixtureModel sampler(components, std::vector<double>(k, 1.0 / static_cast<double>(k)));
  const Matrix z = mixture_sample(sampler, n, seed);
  const Eigen::Index rows = static_cast<Eigen::Index>(n);

  Vector log_phi(rows);
  for (Eigen::Index i = 0; i < rows; ++i) log_phi[i] = target.log_phi(z.row(i).transpose());
  double max_log = -std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < rows; ++i)
    if (!std::isnan(log_phi[i])) max_log = std::max(max_log, log_phi[i]);
  if (!std::isfinite(max_log)) {
    throw ScalingError(
        "solve_weights: every phi evaluation underflows; add a log offset to the target so "
        "log phi is finite near the modes");
  }

  Vector phi(rows);
  Matrix design(rows, static_cast<Eigen::Index>(k));
  for (Eigen::Index i = 0; i < rows; ++i) {
    phi[i] = std::isnan(log_phi[i]) ? 0.0 : std::exp(log_phi[i] - max_log);
    const Vector zi = z.row(i).transpose();
    for (std::size_t c = 0; c < k; ++c)
      design(i, static_cast<Eigen::Index>(c)) = std::exp(components[c].log_pdf(zi));
  }

  WeightFit fit;
  fit.scaled_weights = nnls(design, phi);
  fit.log_scale = max_log;
  fit.residual = (phi - design * fit.scaled_weights).norm() / std::sqrt(static_cast<double>(n));
  fit.n_samples = n;
  return fit;
}

GolaReport run_gola(const UnnormalizedTarget& target, const GolaConfig& cfg) {
  cfg.validate();
  MultistartStats stats;
  std::vector<LocalMinimum> minima = multistart_minimize(target, cfg, &stats);
  DedupResult dedup = dedup_modes(minima, target, cfg.dedup_threshold);

  const std::size_t k = dedup.components.size();
  const std::size_t n = cfg.weight_samples_for(k);
  const WeightFit fit = solve_weights(target, dedup.components, n, derive_seed(cfg.master_seed, 1));
  const double total = fit.scaled_weights.sum();
  if (!(total > 0.0))
    throw DegenerateOutputError("run_gola: every fitted mixture weight is zero");

  std::vector<double> weights(k);
  for (std::size_t c = 0; c < k; ++c)
    weights[c] = fit.scaled_weights[static_cast<Eigen::Index>(c)] / total;

  GolaReport report{MixtureModel(dedup.components, weights), 0.0, 0.0, {}, {}, 0.0, 0, {}};
  report.log_evidence = std::log(total) + fit.log_scale;
  report.evidence = std::exp(report.log_evidence);
  report.raw_minima = std::move(minima);
  report.dedup_log = std::move(dedup.log);
  report.weight_residual = fit.residual;
  report.n_weight_samples = n;
  report.stats = stats;
  return report;
}

}  // namespace gola
