// Apache License, Version 2.0, refer to LICENSE.txt

#ifndef GOLA_MATHKIT_HPP
#define GOLA_MATHKIT_HPP

#include "gola/types.hpp"

#include <cstddef>

namespace gola {

// Symmetric positive definite matrix together with its lower Cholesky factor.
// The factor is of (matrix + jitter_applied * I); jitter_applied is the first
// rung of the escalation ladder that factored successfully.
struct SpdMatrix {
  Matrix matrix;
  Matrix chol_lower;
  double jitter_applied = 0.0;

  Eigen::Index order() const { return matrix.rows(); }
};

/// Factors a symmetric matrix, escalating a diagonal jitter through
/// {0, 1e-10, 1e-8, 1e-6, 1e-4, 1e-2} times the mean diagonal magnitude.
/// Throws ArgumentError for non-square/asymmetric/non-finite input and
/// SingularMatrixError when even the largest jitter fails.
SpdMatrix cholesky_spd(const Matrix& a);

/// Unjittered Cholesky. Returns false if a pivot is not safely positive.
bool cholesky_lower(const Matrix& a, Matrix& lower);

/// e^A by scaling and squaring with a degree-13 Pade approximant
/// (smaller degrees when the 1-norm allows).
Matrix matrix_exponential(const Matrix& a);

inline constexpr int kMaxSobolDimension = 64;

/// First n points of the Sobol sequence in [0,1)^dim. With skip_initial the
/// all-zero point is dropped, so row 0 is the sequence's second point.
/// `offset` starts the sequence that many points further along.
Matrix sobol_points(int dim, std::size_t n, bool skip_initial = true,
                    std::size_t offset = 0);

/// P(Q >= x) for Q ~ chi-square(dof).
double chi_square_survival(double x, int dof);

/// Regularized upper incomplete gamma Q(a, x).
double regularized_gamma_q(double a, double x);

/// sqrt((z - mean)^T Sigma^{-1} (z - mean)) with Sigma = L L^T, via one
/// triangular solve.
double mahalanobis_distance(const Vector& z, const Vector& mean,
                            const Matrix& chol_cov);

/// log(sum(exp(values))) with -inf entries ignored; -inf if all are -inf.
double log_sum_exp(const Vector& values);

}  // namespace gola

#endif  // GOLA_MATHKIT_HPP
