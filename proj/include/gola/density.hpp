// Apache License, Version 2.0, refer to LICENSE.txt

#ifndef GOLA_DENSITY_HPP
#define GOLA_DENSITY_HPP

#include "gola/types.hpp"

#include <cstddef>
#include <cstdint>
#include <functional>
#include <vector>

namespace gola {

// Axis-aligned search region for global optimization.
struct Box {
  Vector lower;
  Vector upper;

  Eigen::Index dim() const { return lower.size(); }
  bool contains(const Vector& z) const;
  Vector clamp(const Vector& z) const;
  Vector width() const { return upper - lower; }
};

// Unnormalized log posterior log(phi) with optional analytic derivatives.
// Immutable after construction and safe to evaluate from several threads.
// The analytic gradient is of log(phi); the analytic Hessian is of -log(phi).
class UnnormalizedTarget {
 public:
  using LogDensityFn = std::function<double(const Vector&)>;
  using GradientFn = std::function<Vector(const Vector&)>;
  using HessianFn = std::function<Matrix(const Vector&)>;

  UnnormalizedTarget(int dim, LogDensityFn log_phi, Box search_box,
                     GradientFn gradient = {}, HessianFn neg_log_hessian = {});

  int dim() const { return dim_; }
  const Box& search_box() const { return box_; }
  bool has_gradient() const { return static_cast<bool>(gradient_); }
  bool has_hessian() const { return static_cast<bool>(hessian_); }

  double log_phi(const Vector& z) const { return log_phi_(z); }
  Vector analytic_gradient(const Vector& z) const { return gradient_(z); }
  Matrix analytic_neg_log_hessian(const Vector& z) const { return hessian_(z); }

  // Same target with a different search box.
  UnnormalizedTarget with_box(Box box) const;

 private:
  int dim_;
  LogDensityFn log_phi_;
  Box box_;
  GradientFn gradient_;
  HessianFn hessian_;
};

/// log(phi(z)); -inf marks points outside the support.
double eval_log_density(const UnnormalizedTarget& target, const Vector& z);

/// Gradient of log(phi). Analytic when available, otherwise central
/// differences with h_i = cbrt(eps) * max(1, |z_i|).
Vector eval_gradient(const UnnormalizedTarget& target, const Vector& z);

/// Hessian of -log(phi), symmetrized. Analytic when available; otherwise
/// central differences of the analytic gradient, or second differences of
/// log(phi) with h_i = eps^(1/4) * max(1, |z_i|).
Matrix eval_hessian(const UnnormalizedTarget& target, const Vector& z);

// Multivariate normal stored through the lower Cholesky factor of its
// covariance.
class GaussianComponent {
 public:
  GaussianComponent(Vector mean, Matrix chol_cov);
  static GaussianComponent from_covariance(Vector mean, const Matrix& cov);

  Eigen::Index dim() const { return mean_.size(); }
  const Vector& mean() const { return mean_; }
  const Matrix& chol_cov() const { return chol_; }
  Matrix covariance() const { return chol_ * chol_.transpose(); }
  double log_det_cov() const;
  double log_pdf(const Vector& z) const;

  // Solves Sigma x = b through the factor.
  Vector solve(const Vector& b) const;

 private:
  Vector mean_;
  Matrix chol_;
};

class MixtureModel {
 public:
  MixtureModel(std::vector<GaussianComponent> components,
               std::vector<double> weights);

  Eigen::Index dim() const { return components_.front().dim(); }
  std::size_t size() const { return components_.size(); }
  const std::vector<GaussianComponent>& components() const {
    return components_;
  }
  const std::vector<double>& weights() const { return weights_; }

 private:
  std::vector<GaussianComponent> components_;
  std::vector<double> weights_;
};

/// log q(z) via log-sum-exp over components; zero-weight components drop out.
double mixture_log_pdf(const MixtureModel& m, const Vector& z);

/// Ancestral sampling; rows are samples. Deterministic per seed.
Matrix mixture_sample(const MixtureModel& m, std::size_t n, std::uint64_t seed);

/// phi = scale * q with analytic gradient and Hessian.
UnnormalizedTarget make_mixture_target(const MixtureModel& m, Box box,
                                       double scale = 1.0);

// A normalized density that can be evaluated and sampled. Used wherever two
// distributions are compared (divergences, VI traces, pushforwards).
struct Density {
  int dim = 0;
  std::function<double(const Vector&)> log_pdf;
  std::function<Matrix(std::size_t, std::uint64_t)> sample;
};

Density as_density(const MixtureModel& m);

// One mixture component of independent sinh-arcsinh coordinates:
// Y_i = location_i + scale_i * sinh((asinh(Z_i) + skew_i) * tailweight_i).
struct SinhArcsinhSpec {
  Vector location;
  Vector scale;
  Vector skew;
  Vector tailweight;

  Eigen::Index dim() const { return location.size(); }
};

double sinh_arcsinh_log_pdf_1d(double y, double location, double scale,
                               double skew, double tailweight);

class SinhArcsinhMixture {
 public:
  SinhArcsinhMixture(std::vector<SinhArcsinhSpec> specs,
                     std::vector<double> weights);

  int dim() const { return static_cast<int>(specs_.front().dim()); }
  const std::vector<SinhArcsinhSpec>& specs() const { return specs_; }
  const std::vector<double>& weights() const { return weights_; }

  double log_pdf(const Vector& y) const;
  Vector gradient(const Vector& y) const;
  Matrix neg_log_hessian(const Vector& y) const;
  Matrix sample(std::size_t n, std::uint64_t seed) const;

  // Box spanning every component's location +/- `half_widths` scales.
  Box default_box(double half_widths = 8.0) const;

 private:
  std::vector<SinhArcsinhSpec> specs_;
  std::vector<double> weights_;
};

/// Target whose log(phi) is the log of the sinh-arcsinh mixture, with
/// analytic gradient and Hessian. Uses default_box() when box is empty.
UnnormalizedTarget make_sinh_arcsinh_mixture(std::vector<SinhArcsinhSpec> specs,
                                             std::vector<double> weights,
                                             Box box = {});

Density as_density(const SinhArcsinhMixture& m);

}  // namespace gola

#endif  // GOLA_DENSITY_HPP
