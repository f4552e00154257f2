// Apache License, Version 2.0, refer to LICENSE.txt

#ifndef GOLA_PIPELINE_HPP
#define GOLA_PIPELINE_HPP

#include "gola/density.hpp"

#include <cstddef>
#include <cstdint>
#include <vector>

namespace gola {

struct GolaConfig {
  std::size_t n_starts = 0;          // 0 selects 32 * dim
  int max_local_iters = 5000;
  double gradient_tol = 1e-8;        // on ||grad(-log phi)||
  double dedup_threshold = 0.01;     // t
  std::size_t n_weight_samples = 0;  // 0 selects 1024 * K
  std::uint64_t master_seed = 0;
  bool quasi_newton = false;         // BFGS directions instead of -gradient
  int workers = 1;

  std::size_t starts_for(int dim) const;
  std::size_t weight_samples_for(std::size_t k) const;
  void validate() const;  // throws ConfigError
};

struct LocalMinimum {
  Vector location;
  double objective = 0.0;  // -log phi(location)
  double gradient_norm = 0.0;
  bool converged = false;
  std::size_t start_index = 0;
  int iterations = 0;
};

struct DedupDecision {
  std::size_t candidate = 0;  // index into the sorted candidate list
  // Extremes of chi_square_survival(D_M^2, dim) over the accepted
  // components at the time of the decision; both 0 when none existed.
  // The candidate is a duplicate when max_p_value >= t.
  double min_p_value = 0.0;
  double max_p_value = 0.0;
  bool accepted = false;
};

struct WeightFit {
  // Unnormalized weights divided by exp(log_scale); the physical weights
  // are scaled_weights * exp(log_scale).
  Vector scaled_weights;
  double log_scale = 0.0;
  // RMS of phi - M pi over the sample, in the same scaled units.
  double residual = 0.0;
  std::size_t n_samples = 0;

  Vector weights() const;
};

struct MultistartStats {
  std::size_t n_starts = 0;
  std::size_t n_rejected_starts = 0;  // -inf log phi at the start point
  std::size_t n_unconverged = 0;
  std::size_t n_non_minima = 0;  // converged onto a saddle or maximum
};

struct GolaReport {
  MixtureModel mixture;
  double evidence = 0.0;
  double log_evidence = 0.0;
  std::vector<LocalMinimum> raw_minima;
  std::vector<DedupDecision> dedup_log;
  double weight_residual = 0.0;
  std::size_t n_weight_samples = 0;
  MultistartStats stats;
};

/// Gradient descent on -log phi with a backtracking Armijo line search whose
/// trial step is the Barzilai-Borwein length. Iterates are projected onto
/// the search box. Throws RejectedStartError if log phi(start) is -inf.
LocalMinimum local_minimize(const UnnormalizedTarget& target, const Vector& start,
                            const GolaConfig& cfg);

/// Local searches from Sobol points mapped into the search box. Returns the
/// converged minima (saddles and maxima of phi removed) sorted by objective,
/// ties broken lexicographically by location.
std::vector<LocalMinimum> multistart_minimize(const UnnormalizedTarget& target,
                                              const GolaConfig& cfg,
                                              MultistartStats* stats = nullptr);

/// Gaussian with covariance H^{-1}, H the (regularized) Hessian of -log phi.
GaussianComponent laplace_at_mode(const UnnormalizedTarget& target, const Vector& mode);

struct DedupResult {
  std::vector<GaussianComponent> components;
  std::vector<DedupDecision> log;
};

/// Greedy pass: a candidate duplicates an accepted component when the
/// chi-square survival of its squared Mahalanobis distance is >= t.
DedupResult dedup_modes(const std::vector<LocalMinimum>& candidates,
                        const UnnormalizedTarget& target, double t);

/// Lawson-Hanson active-set solve of min ||A x - b|| subject to x >= 0.
Vector nnls(const Matrix& a, const Vector& b, int max_iter = 0);

/// Fits the unnormalized weights by nonnegative least squares on n points
/// from the equal-weight mixture of the components.
WeightFit solve_weights(const UnnormalizedTarget& target,
                        const std::vector<GaussianComponent>& components, std::size_t n,
                        std::uint64_t seed);

GolaReport run_gola(const UnnormalizedTarget& target, const GolaConfig& cfg);

}  // namespace gola

#endif  // GOLA_PIPELINE_HPP
