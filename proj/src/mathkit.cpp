// Apache License, Version 2.0, refer to LICENSE.txt

#include "gola/mathkit.hpp"

#include "sobol_directions.hpp"

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <sstream>

namespace gola {

namespace {

constexpr double kEps = std::numeric_limits<double>::epsilon();

bool all_finite(const Matrix& a) { return a.allFinite(); }

}  // namespace

bool cholesky_lower(const Matrix& a, Matrix& lower) {
  const Eigen::Index n = a.rows();
  lower.setZero(n, n);
  double max_diag = 0.0;
  for (Eigen::Index i = 0; i < n; ++i)
    max_diag = std::max(max_diag, std::abs(a(i, i)));
  const double pivot_floor = static_cast<double>(n) * kEps * max_diag;
  for (Eigen::Index j = 0; j < n; ++j) {
    double pivot = a(j, j);
    for (Eigen::Index k = 0; k < j; ++k) pivot -= lower(j, k) * lower(j, k);
    if (!(pivot > pivot_floor) || !std::isfinite(pivot)) return false;
    const double ljj = std::sqrt(pivot);
    lower(j, j) = ljj;
    for (Eigen::Index i = j + 1; i < n; ++i) {
      double s = a(i, j);
      for (Eigen::Index k = 0; k < j; ++k) s -= lower(i, k) * lower(j, k);
      lower(i, j) = s / ljj;
    }
  }
  return true;
}

SpdMatrix cholesky_spd(const Matrix& a) {
  if (a.rows() != a.cols() || a.rows() == 0)
    throw ArgumentError("cholesky_spd: matrix must be square and non-empty");
  if (!all_finite(a))
    throw ArgumentError("cholesky_spd: matrix has non-finite entries");
  const double scale = a.cwiseAbs().maxCoeff();
  if ((a - a.transpose()).cwiseAbs().maxCoeff() > 1e-10 * std::max(scale, 1e-300))
    throw ArgumentError("cholesky_spd: matrix is not symmetric");

  const Eigen::Index d = a.rows();
  double mean_diag = a.trace() / static_cast<double>(d);
  if (!(mean_diag > 0.0)) mean_diag = a.diagonal().cwiseAbs().mean();
  if (!(mean_diag > 0.0)) mean_diag = 1.0;

  static constexpr std::array<double, 6> kLadder = {0.0,  1e-10, 1e-8,
                                                    1e-6, 1e-4,  1e-2};
  SpdMatrix out;
  out.matrix = 0.5 * (a + a.transpose());
  for (double rung : kLadder) {
    const double jitter = rung * mean_diag;
    Matrix shifted = out.matrix;
    shifted.diagonal().array() += jitter;
    if (cholesky_lower(shifted, out.chol_lower)) {
      out.jitter_applied = jitter;
      return out;
    }
  }
  throw SingularMatrixError(
      "cholesky_spd: matrix is not positive definite even with jitter " +
      std::to_string(kLadder.back() * mean_diag));
}

namespace {

// Pade coefficients b_0..b_m for the [m/m] approximant of exp.
constexpr std::array<double, 4> kPade3 = {120., 60., 12., 1.};
constexpr std::array<double, 6> kPade5 = {30240., 15120., 3360., 420., 30., 1.};
constexpr std::array<double, 8> kPade7 = {17297280., 8648640., 1995840., 277200.,
                                          25200.,    1512.,    56.,      1.};
constexpr std::array<double, 10> kPade9 = {
    17643225600., 8821612800., 2075673600., 302702400., 30270240.,
    2162160.,     110880.,     3960.,       90.,        1.};
constexpr std::array<double, 14> kPade13 = {
    64764752532480000., 32382376266240000., 7771770303897600.,
    1187353796428800.,  129060195264000.,   10559470521600.,
    670442572800.,      33522128640.,       1323241920.,
    40840800.,          960960.,            16380.,
    182.,               1.};

// 1-norm thresholds below which the degree-m approximant is accurate to
// double precision without scaling.
constexpr double kTheta3 = 1.495585217958292e-2;
constexpr double kTheta5 = 2.539398330063230e-1;
constexpr double kTheta7 = 9.504178996162932e-1;
constexpr double kTheta9 = 2.097847961257068e0;
constexpr double kTheta13 = 5.371920351148152e0;

template <std::size_t N>
Matrix pade_low_degree(const Matrix& a, const std::array<double, N>& b) {
  const Eigen::Index n = a.rows();
  const Matrix ident = Matrix::Identity(n, n);
  const Matrix a2 = a * a;
  Matrix power = ident;  // a^(2k)
  Matrix u_inner = Matrix::Zero(n, n);
  Matrix v = Matrix::Zero(n, n);
  for (std::size_t j = 0; j + 1 < N; j += 2) {
    v += b[j] * power;
    u_inner += b[j + 1] * power;
    power = power * a2;
  }
  const Matrix u = a * u_inner;
  return (v - u).partialPivLu().solve(v + u);
}

Matrix pade13(const Matrix& a) {
  const auto& b = kPade13;
  const Eigen::Index n = a.rows();
  const Matrix ident = Matrix::Identity(n, n);
  const Matrix a2 = a * a;
  const Matrix a4 = a2 * a2;
  const Matrix a6 = a4 * a2;
  const Matrix u =
      a * (a6 * (b[13] * a6 + b[11] * a4 + b[9] * a2) + b[7] * a6 +
           b[5] * a4 + b[3] * a2 + b[1] * ident);
  const Matrix v = a6 * (b[12] * a6 + b[10] * a4 + b[8] * a2) + b[6] * a6 +
                   b[4] * a4 + b[2] * a2 + b[0] * ident;
  return (v - u).partialPivLu().solve(v + u);
}

}  // namespace

Matrix matrix_exponential(const Matrix& a) {
  if (a.rows() != a.cols())
    throw ArgumentError("matrix_exponential: matrix must be square");
  if (!all_finite(a))
    throw ArgumentError("matrix_exponential: matrix has non-finite entries");
  if (a.rows() == 0) return a;

  const double norm1 = a.cwiseAbs().colwise().sum().maxCoeff();
  if (norm1 <= kTheta3) return pade_low_degree(a, kPade3);
  if (norm1 <= kTheta5) return pade_low_degree(a, kPade5);
  if (norm1 <= kTheta7) return pade_low_degree(a, kPade7);
  if (norm1 <= kTheta9) return pade_low_degree(a, kPade9);

  int squarings = 0;
  if (norm1 > kTheta13)
    squarings = static_cast<int>(std::ceil(std::log2(norm1 / kTheta13)));
  Matrix result = pade13(a / std::ldexp(1.0, squarings));
  for (int i = 0; i < squarings; ++i) result = result * result;
  return result;
}

Matrix sobol_points(int dim, std::size_t n, bool skip_initial,
                    std::size_t offset) {
  if (dim < 1 || dim > kMaxSobolDimension) {
    std::ostringstream msg;
    msg << "sobol_points: dimension " << dim << " outside supported range [1, "
        << kMaxSobolDimension << "]";
    throw ArgumentError(msg.str());
  }
  if (n == 0) throw ArgumentError("sobol_points: n must be at least 1");

  constexpr int kBits = 32;
  // directions[d][k] holds v_{k+1} = m_{k+1} << (32 - (k+1)).
  std::vector<std::array<std::uint32_t, kBits>> directions(
      static_cast<std::size_t>(dim));
  for (int k = 0; k < kBits; ++k)
    directions[0][k] = std::uint32_t{1} << (kBits - 1 - k);
  for (int d = 1; d < dim; ++d) {
    const auto& entry = detail::kSobolDirections[static_cast<std::size_t>(d - 1)];
    const unsigned poly = entry.polynomial;
    int degree = 0;
    while ((poly >> (degree + 1)) != 0u) ++degree;
    std::array<std::uint64_t, kBits> m{};
    for (int k = 0; k < degree && k < kBits; ++k) m[k] = entry.m_init[k];
    for (int k = degree; k < kBits; ++k) {
      std::uint64_t value = m[k - degree] ^ (m[k - degree] << degree);
      for (int r = 1; r < degree; ++r) {
        if ((poly >> (degree - r)) & 1u) value ^= m[k - r] << r;
      }
      m[k] = value;
    }
    for (int k = 0; k < kBits; ++k)
      directions[d][k] = static_cast<std::uint32_t>(m[k] << (kBits - 1 - k));
  }

  const std::uint64_t first = static_cast<std::uint64_t>(offset) + (skip_initial ? 1 : 0);
  if (first + n > (std::uint64_t{1} << kBits))
    throw ArgumentError("sobol_points: requested range exceeds 2^32 points");

  // State for index `first`: XOR of directions selected by its Gray code.
  std::vector<std::uint32_t> state(static_cast<std::size_t>(dim), 0u);
  const std::uint64_t gray = first ^ (first >> 1);
  for (int k = 0; k < kBits; ++k) {
    if ((gray >> k) & 1u)
      for (int d = 0; d < dim; ++d) state[d] ^= directions[d][k];
  }

  constexpr double kScale = 1.0 / 4294967296.0;
  Matrix points(static_cast<Eigen::Index>(n), dim);
  std::uint64_t index = first;
  for (std::size_t row = 0; row < n; ++row, ++index) {
    for (int d = 0; d < dim; ++d)
      points(static_cast<Eigen::Index>(row), d) = state[d] * kScale;
    // Advance to index+1: flip the direction at the lowest zero bit of index.
    int c = 0;
    while ((index >> c) & 1u) ++c;
    if (c < kBits)
      for (int d = 0; d < dim; ++d) state[d] ^= directions[d][c];
  }
  return points;
}

double regularized_gamma_q(double a, double x) {
  if (!(a > 0.0)) throw ArgumentError("regularized_gamma_q: a must be positive");
  if (std::isnan(x)) return x;
  if (x <= 0.0) return 1.0;
  if (std::isinf(x)) return 0.0;
  const double log_prefactor = -x + a * std::log(x) - std::lgamma(a);

  if (x < a + 1.0) {
    // Series for P(a, x).
    double term = 1.0 / a;
    double sum = term;
    for (int n = 1; n < 10000; ++n) {
      term *= x / (a + n);
      sum += term;
      if (std::abs(term) < std::abs(sum) * 1e-17) break;
    }
    return std::max(0.0, 1.0 - sum * std::exp(log_prefactor));
  }

  // Continued fraction for Q(a, x), modified Lentz.
  constexpr double kTiny = 1e-300;
  double b = x + 1.0 - a;
  double c = 1.0 / kTiny;
  double d = 1.0 / b;
  double h = d;
  for (int i = 1; i < 10000; ++i) {
    const double an = -i * (i - a);
    b += 2.0;
    d = an * d + b;
    if (std::abs(d) < kTiny) d = kTiny;
    c = b + an / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double delta = d * c;
    h *= delta;
    if (std::abs(delta - 1.0) < 1e-16) break;
  }
  return std::min(1.0, std::exp(log_prefactor) * h);
}

double chi_square_survival(double x, int dof) {
  if (dof < 1) throw ArgumentError("chi_square_survival: dof must be positive");
  if (x < 0.0) throw ArgumentError("chi_square_survival: x must be nonnegative");
  if (dof == 2) return std::exp(-0.5 * x);
  return regularized_gamma_q(0.5 * dof, 0.5 * x);
}

double mahalanobis_distance(const Vector& z, const Vector& mean,
                            const Matrix& chol_cov) {
  if (z.size() != mean.size() || chol_cov.rows() != z.size() ||
      chol_cov.cols() != z.size())
    throw ArgumentError("mahalanobis_distance: dimension mismatch");
  const Vector white =
      chol_cov.triangularView<Eigen::Lower>().solve(Vector(z - mean));
  return white.norm();
}

double log_sum_exp(const Vector& values) {
  double peak = -std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < values.size(); ++i)
    peak = std::max(peak, values[i]);
  if (!std::isfinite(peak)) return peak;
  double sum = 0.0;
  for (Eigen::Index i = 0; i < values.size(); ++i) {
    if (values[i] != -std::numeric_limits<double>::infinity())
      sum += std::exp(values[i] - peak);
  }
  return peak + std::log(sum);
}

}  // namespace gola
