// Apache License, Version 2.0, refer to LICENSE.txt

#ifndef GOLA_SENSIBENCH_HPP
#define GOLA_SENSIBENCH_HPP

#include "gola/density.hpp"
#include "gola/pipeline.hpp"

#include <array>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace gola {

// One input of a variance-based analysis: uniform on [lo, hi], or uniform on
// the integers lo..hi when discrete.
struct Factor {
  std::string name;
  double lo = 0.0;
  double hi = 1.0;
  bool discrete = false;

  /// Maps u in [0, 1) onto the factor's distribution. Discrete factors floor
  /// the scaled uniform.
  double from_unit(double u) const;
};

// Sampled values of the five test-posterior factors.
struct FactorValues {
  int d = 2;
  int M = 2;
  double omega = 1.0;
  double c = 0.0;
  double lambda = 1e-2;

  Vector to_vector() const;
  static FactorValues from_vector(const Vector& x);
};

struct IntRange {
  int lo = 0;
  int hi = 0;
};

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
};

struct FactorSpec {
  IntRange d{2, 10};
  IntRange M{2, 4};
  Interval omega{1.0, 2.0};
  Interval c{0.0, 0.7};
  Interval lambda{1e-4, 1e-2};

  static FactorSpec standard();
  static FactorSpec hard();  // refined ranges producing harder posteriors

  void validate() const;  // throws ConfigError
  std::vector<Factor> factors() const;  // order d, M, omega, c, lambda
  FactorValues sample(std::uint64_t seed) const;
};

/// M Gaussians in dimension d: geometric weights pi_{k+1} = pi_k / omega,
/// unit-diagonal covariances with constant correlation c, means on a randomly
/// rotated regular simplex (a regular polygon when M > d + 1) scaled so the
/// largest pairwise dice overlap equals lambda. Throws GenerationError when
/// the scale cannot be bracketed.
MixtureModel generate_test_gmm(const FactorValues& f, std::uint64_t seed);

/// Largest pairwise dice overlap among the components.
double max_pairwise_overlap(const MixtureModel& m);

/// Bounding box of the means padded by `margin` standard deviations.
Box test_gmm_box(const MixtureModel& m, double margin = 6.0);

// Saltelli-style sampling matrices and model outputs. AB[i] equals A except
// column i, which is taken from B.
struct SobolDesign {
  std::vector<Factor> factors;
  Matrix A;
  Matrix B;
  std::vector<Matrix> AB;
  Vector fA;
  Vector fB;
  std::vector<Vector> fAB;
  std::vector<std::size_t> resampled_rows;

  std::size_t rows() const { return static_cast<std::size_t>(A.rows()); }
  std::size_t evaluations() const { return rows() * (factors.size() + 2); }
};

// Model called with factor values and a seed that depends only on the
// evaluation's position in the design.
using SobolModel = std::function<double(const Vector&, std::uint64_t)>;

/// Rows of A and B come from a randomly shifted 2k-dimensional Sobol
/// sequence. A row whose model evaluation throws is redrawn once from a
/// pseudo-random stream; a second failure throws EvaluationError.
SobolDesign sobol_design(const std::vector<Factor>& factors, std::size_t n, std::uint64_t seed,
                         const SobolModel& model, int workers = 1);
SobolDesign sobol_design(const FactorSpec& spec, std::size_t n, std::uint64_t seed,
                         const SobolModel& model, int workers = 1);

struct SensitivityResult {
  std::vector<std::string> names;
  Vector S;
  Vector ST;
  Vector S_lo, S_hi;    // equal to S without bootstrap
  Vector ST_lo, ST_hi;  // equal to ST without bootstrap
  std::size_t n = 0;
  std::size_t replicates = 0;
  std::size_t skipped_replicates = 0;  // zero-variance resamples
};

/// First-order and total indices:
///   S_i  = (1/N) sum fB (fAB_i - fA) / V
///   ST_i = (1/2N) sum (fA - fAB_i)^2 / V
/// with V the (1/N) variance of fA. No clipping. Throws DegenerateOutputError
/// when V == 0.
SensitivityResult estimate_indices(const SobolDesign& design);

/// Point estimates plus percentile intervals from row-resampling bootstrap.
SensitivityResult bootstrap_ci(const SobolDesign& design, std::size_t replicates, double level,
                               std::uint64_t seed);

inline constexpr double kNearPerfectFit = 0.05;  // normalized JSD

struct RobustnessCase {
  std::size_t index = 0;
  FactorValues factors;
  double Y = 1.0;
  std::string status = "ok";  // otherwise the error kind
};

struct RobustnessTable {
  std::vector<RobustnessCase> cases;
  double threshold = kNearPerfectFit;

  double fraction_within() const;  // share of cases with Y <= threshold
  double mean_Y() const;
};

/// Y = normalized JSD(truth, GOLA fit) for one test posterior. Failures of
/// the generator or GOLA give Y = 1 and set *status to the error kind.
double robustness_response(const FactorValues& f, const GolaConfig& gola_cfg,
                           std::size_t jsd_samples, std::uint64_t seed,
                           std::string* status = nullptr);

RobustnessTable robustness_study(const FactorSpec& spec, std::size_t n_cases,
                                 const GolaConfig& gola_cfg, std::size_t jsd_samples,
                                 std::uint64_t seed, int workers = 1);

}  // namespace gola

#endif  // GOLA_SENSIBENCH_HPP
