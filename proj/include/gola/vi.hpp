// Apache License, Version 2.0, refer to LICENSE.txt

#ifndef GOLA_VI_HPP
#define GOLA_VI_HPP

#include "gola/density.hpp"

#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

namespace gola {

// Unconstrained coordinates of a K-component Gaussian mixture: softmax
// logits, means, and lower Cholesky factors whose diagonals are stored as
// logarithms. The same layout carries gradients.
struct VariationalParams {
  Vector logits;
  std::vector<Vector> means;
  std::vector<Matrix> log_chol;  // strictly-lower part plus log diagonal

  static VariationalParams from_mixture(const MixtureModel& m);
  MixtureModel to_mixture() const;

  std::size_t components() const { return means.size(); }
  Eigen::Index dim() const { return means.empty() ? 0 : means.front().size(); }

  // Packing into one vector (logits, then per component mean and the lower
  // triangle row by row).
  std::size_t size() const;
  Vector flatten() const;
  static VariationalParams unflatten(const Vector& flat, std::size_t k, Eigen::Index d);
};

struct ViConfig {
  std::size_t n_mc_samples = 64;  // per gradient estimate
  double step_size = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  int max_epochs = 50;
  int steps_per_epoch = 20;  // optimizer updates per epoch
  int report_interval = 1;   // epochs between trace records
  std::size_t n_elbo_samples = 512;
  std::size_t jsd_samples = 2000;
  std::uint64_t seed = 0;
  bool baseline = true;  // leave-one-out control variate
  int workers = 1;

  void validate() const;  // throws ConfigError
};

inline constexpr double kOutOfSupportPenalty = 1e6;

struct NegElboEstimate {
  double value = 0.0;
  double std_error = 0.0;
  std::size_t n_samples = 0;
  std::size_t penalized = 0;  // samples where log phi was -inf
};

/// Monte Carlo estimate of E_q[log q - log phi] from n draws of q.
NegElboEstimate negative_elbo_estimate(const VariationalParams& params,
                                       const UnnormalizedTarget& target, std::size_t n,
                                       std::uint64_t seed, int workers = 1);

struct GradientEstimate {
  VariationalParams gradient;
  NegElboEstimate objective;  // from the same draws
};

/// Score-function estimator (1/n) sum f(z_i) grad log q(z_i) with
/// f = log q - log phi, optionally with a leave-one-out mean baseline.
GradientEstimate score_function_gradient(const VariationalParams& params,
                                         const UnnormalizedTarget& target, std::size_t n,
                                         std::uint64_t seed, bool baseline = true, int workers = 1);

/// Pathwise estimator for a single Gaussian, z = mu + L eps.
GradientEstimate reparam_gradient_single_gaussian(const VariationalParams& params,
                                                  const UnnormalizedTarget& target, std::size_t n,
                                                  std::uint64_t seed);

struct ViTraceRecord {
  int epoch = 0;
  double elapsed_seconds = 0.0;
  double neg_elbo = 0.0;
  std::optional<double> jsd;
};

struct ViTrace {
  std::vector<ViTraceRecord> records;
  bool diverged = false;
  std::size_t penalized_samples = 0;
};

struct ViResult {
  MixtureModel mixture;  // best negative-ELBO iterate
  ViTrace trace;
  double best_neg_elbo = 0.0;
  int best_epoch = 0;
};

/// Adam on the unconstrained parameters starting from init. Epoch 0 records
/// the initial state. The clock excludes time spent computing the JSD
/// against the optional reference.
ViResult refine(const MixtureModel& init, const UnnormalizedTarget& target, const ViConfig& cfg,
                const std::optional<Density>& reference = std::nullopt);

/// Means uniform in the box, covariance diag((width / 10)^2), equal weights.
MixtureModel random_cold_start(int dim, std::size_t k, const Box& box, std::uint64_t seed);

}  // namespace gola

#endif  // GOLA_VI_HPP
