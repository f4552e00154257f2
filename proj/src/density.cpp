// Apache License, Version 2.0, refer to LICENSE.txt

#include "gola/density.hpp"

#include "gola/mathkit.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <numbers>
#include <random>
#include <sstream>

namespace gola {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();
constexpr double kLog2Pi = 1.8378770664093454835606594728112;

void check_dim(const UnnormalizedTarget& target, const Vector& z,
               const char* who) {
  if (z.size() != target.dim()) {
    std::ostringstream msg;
    msg << who << ": point has dimension " << z.size() << ", target has "
        << target.dim();
    throw ArgumentError(msg.str());
  }
}

double checked_log_phi(const UnnormalizedTarget& target, const Vector& z,
                       const char* who) {
  const double v = target.log_phi(z);
  if (!std::isfinite(v)) {
    std::ostringstream msg;
    msg << who << ": non-finite log density at stencil point";
    throw DerivativeError(msg.str(), z);
  }
  return v;
}

// Step that is exactly representable relative to the base point.
double representable_step(double base, double h) {
  volatile double shifted = base + h;
  return shifted - base;
}

// Picks component indices by inverting the cumulative weights.
std::vector<std::size_t> draw_components(const std::vector<double>& weights,
                                         std::size_t n, std::mt19937_64& rng) {
  std::vector<double> cumulative(weights.size());
  double acc = 0.0;
  for (std::size_t k = 0; k < weights.size(); ++k) {
    acc += weights[k];
    cumulative[k] = acc;
  }
  std::uniform_real_distribution<double> unif(0.0, acc);
  std::vector<std::size_t> picks(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double u = unif(rng);
    std::size_t k = 0;
    while (k + 1 < cumulative.size() && !(u < cumulative[k])) ++k;
    // Never land on a zero-weight component at the tail.
    while (weights[k] <= 0.0 && k > 0) --k;
    picks[i] = k;
  }
  return picks;
}

}  // namespace

bool Box::contains(const Vector& z) const {
  return z.size() == lower.size() && (z.array() >= lower.array()).all() &&
         (z.array() <= upper.array()).all();
}

Vector Box::clamp(const Vector& z) const {
  return z.cwiseMax(lower).cwiseMin(upper);
}

UnnormalizedTarget::UnnormalizedTarget(int dim, LogDensityFn log_phi, Box box,
                                       GradientFn gradient,
                                       HessianFn neg_log_hessian)
    : dim_(dim),
      log_phi_(std::move(log_phi)),
      box_(std::move(box)),
      gradient_(std::move(gradient)),
      hessian_(std::move(neg_log_hessian)) {
  if (dim_ < 1) throw ConstructionError("target dimension must be positive");
  if (!log_phi_) throw ConstructionError("target needs a log density");
  if (box_.lower.size() != dim_ || box_.upper.size() != dim_)
    throw ConstructionError("search box dimension does not match target");
  if (!(box_.lower.array() < box_.upper.array()).all())
    throw ConstructionError("search box needs lower < upper in every coordinate");
}

UnnormalizedTarget UnnormalizedTarget::with_box(Box box) const {
  return UnnormalizedTarget(dim_, log_phi_, std::move(box), gradient_, hessian_);
}

double eval_log_density(const UnnormalizedTarget& target, const Vector& z) {
  check_dim(target, z, "eval_log_density");
  return target.log_phi(z);
}

Vector eval_gradient(const UnnormalizedTarget& target, const Vector& z) {
  check_dim(target, z, "eval_gradient");
  if (target.has_gradient()) return target.analytic_gradient(z);

  const double base_step = std::cbrt(std::numeric_limits<double>::epsilon());
  Vector grad(z.size());
  Vector probe = z;
  for (Eigen::Index i = 0; i < z.size(); ++i) {
    const double h =
        representable_step(z[i], base_step * std::max(1.0, std::abs(z[i])));
    probe[i] = z[i] + h;
    const double fp = checked_log_phi(target, probe, "eval_gradient");
    probe[i] = z[i] - h;
    const double fm = checked_log_phi(target, probe, "eval_gradient");
    probe[i] = z[i];
    grad[i] = (fp - fm) / (2.0 * h);
  }
  return grad;
}

Matrix eval_hessian(const UnnormalizedTarget& target, const Vector& z) {
  check_dim(target, z, "eval_hessian");
  const Eigen::Index d = z.size();
  Matrix h(d, d);

  if (target.has_hessian()) {
    h = target.analytic_neg_log_hessian(z);
  } else if (target.has_gradient()) {
    const double base_step = std::cbrt(std::numeric_limits<double>::epsilon());
    Vector probe = z;
    for (Eigen::Index j = 0; j < d; ++j) {
      const double step =
          representable_step(z[j], base_step * std::max(1.0, std::abs(z[j])));
      probe[j] = z[j] + step;
      const Vector gp = target.analytic_gradient(probe);
      probe[j] = z[j] - step;
      const Vector gm = target.analytic_gradient(probe);
      probe[j] = z[j];
      if (!gp.allFinite() || !gm.allFinite())
        throw DerivativeError("eval_hessian: non-finite gradient at stencil", z);
      h.col(j) = -(gp - gm) / (2.0 * step);
    }
  } else {
    const double base_step =
        std::sqrt(std::sqrt(std::numeric_limits<double>::epsilon()));
    Vector steps(d);
    for (Eigen::Index i = 0; i < d; ++i)
      steps[i] =
          representable_step(z[i], base_step * std::max(1.0, std::abs(z[i])));
    const double f0 = checked_log_phi(target, z, "eval_hessian");
    Vector probe = z;
    for (Eigen::Index i = 0; i < d; ++i) {
      probe[i] = z[i] + steps[i];
      const double fp = checked_log_phi(target, probe, "eval_hessian");
      probe[i] = z[i] - steps[i];
      const double fm = checked_log_phi(target, probe, "eval_hessian");
      probe[i] = z[i];
      h(i, i) = -(fp - 2.0 * f0 + fm) / (steps[i] * steps[i]);
      for (Eigen::Index j = 0; j < i; ++j) {
        double corners[4];
        int c = 0;
        for (double si : {1.0, -1.0}) {
          for (double sj : {1.0, -1.0}) {
            probe[i] = z[i] + si * steps[i];
            probe[j] = z[j] + sj * steps[j];
            corners[c++] = checked_log_phi(target, probe, "eval_hessian");
          }
        }
        probe[i] = z[i];
        probe[j] = z[j];
        const double mixed = (corners[0] - corners[1] - corners[2] + corners[3]) /
                             (4.0 * steps[i] * steps[j]);
        h(i, j) = -mixed;
        h(j, i) = -mixed;
      }
    }
  }
  Matrix sym = 0.5 * (h + h.transpose());
  return sym;
}

GaussianComponent::GaussianComponent(Vector mean, Matrix chol_cov)
    : mean_(std::move(mean)), chol_(std::move(chol_cov)) {
  const Eigen::Index d = mean_.size();
  if (d < 1) throw ConstructionError("Gaussian component needs dimension >= 1");
  if (chol_.rows() != d || chol_.cols() != d)
    throw ConstructionError("Cholesky factor shape does not match mean");
  if (!mean_.allFinite() || !chol_.allFinite())
    throw ConstructionError("Gaussian component has non-finite parameters");
  for (Eigen::Index i = 0; i < d; ++i) {
    if (!(chol_(i, i) > 0.0))
      throw ConstructionError("Cholesky factor needs a positive diagonal");
    for (Eigen::Index j = i + 1; j < d; ++j) chol_(i, j) = 0.0;
  }
}

GaussianComponent GaussianComponent::from_covariance(Vector mean,
                                                     const Matrix& cov) {
  Matrix lower;
  if (cov.rows() != cov.cols() || !cholesky_lower(0.5 * (cov + cov.transpose()), lower))
    throw ConstructionError("covariance is not symmetric positive definite");
  return GaussianComponent(std::move(mean), std::move(lower));
}

double GaussianComponent::log_det_cov() const {
  return 2.0 * chol_.diagonal().array().log().sum();
}

double GaussianComponent::log_pdf(const Vector& z) const {
  if (z.size() != mean_.size())
    throw ArgumentError("GaussianComponent::log_pdf: dimension mismatch");
  const Vector white =
      chol_.triangularView<Eigen::Lower>().solve(Vector(z - mean_));
  return -0.5 * (static_cast<double>(mean_.size()) * kLog2Pi + log_det_cov() +
                 white.squaredNorm());
}

Vector GaussianComponent::solve(const Vector& b) const {
  const Vector y = chol_.triangularView<Eigen::Lower>().solve(b);
  return chol_.transpose().triangularView<Eigen::Upper>().solve(y);
}

MixtureModel::MixtureModel(std::vector<GaussianComponent> components,
                           std::vector<double> weights)
    : components_(std::move(components)), weights_(std::move(weights)) {
  if (components_.empty())
    throw ConstructionError("mixture needs at least one component");
  if (components_.size() != weights_.size())
    throw ConstructionError("mixture components and weights differ in length");
  const Eigen::Index d = components_.front().dim();
  double total = 0.0;
  for (std::size_t k = 0; k < components_.size(); ++k) {
    if (components_[k].dim() != d)
      throw ConstructionError("mixture components differ in dimension");
    if (!(weights_[k] >= 0.0) || !std::isfinite(weights_[k]))
      throw ConstructionError("mixture weights must be finite and nonnegative");
    total += weights_[k];
  }
  if (std::abs(total - 1.0) > 1e-8)
    throw ConstructionError("mixture weights must sum to 1");
  for (double& w : weights_) w /= total;
}

double mixture_log_pdf(const MixtureModel& m, const Vector& z) {
  if (z.size() != m.dim())
    throw ArgumentError("mixture_log_pdf: dimension mismatch");
  Vector terms(static_cast<Eigen::Index>(m.size()));
  for (std::size_t k = 0; k < m.size(); ++k) {
    const double w = m.weights()[k];
    terms[static_cast<Eigen::Index>(k)] =
        w > 0.0 ? std::log(w) + m.components()[k].log_pdf(z) : kNegInf;
  }
  return log_sum_exp(terms);
}

Matrix mixture_sample(const MixtureModel& m, std::size_t n, std::uint64_t seed) {
  if (n == 0) throw ArgumentError("mixture_sample: n must be at least 1");
  std::mt19937_64 rng(seed);
  const auto picks = draw_components(m.weights(), n, rng);
  std::normal_distribution<double> normal(0.0, 1.0);
  const Eigen::Index d = m.dim();
  Matrix out(static_cast<Eigen::Index>(n), d);
  Vector eps(d);
  for (std::size_t i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < d; ++j) eps[j] = normal(rng);
    const auto& comp = m.components()[picks[i]];
    out.row(static_cast<Eigen::Index>(i)) =
        (comp.mean() + comp.chol_cov().triangularView<Eigen::Lower>() * eps)
            .transpose();
  }
  return out;
}

UnnormalizedTarget make_mixture_target(const MixtureModel& m, Box box,
                                       double scale) {
  if (!(scale > 0.0) || !std::isfinite(scale))
    throw ConstructionError("mixture target scale must be positive");
  if (box.dim() != m.dim())
    throw ConstructionError("search box dimension does not match mixture");

  struct Cache {
    MixtureModel mixture;
    std::vector<Matrix> precisions;
    double log_scale;
  };
  std::vector<Matrix> precisions;
  for (const auto& comp : m.components()) {
    const Eigen::Index d = comp.dim();
    Matrix linv = comp.chol_cov().triangularView<Eigen::Lower>().solve(
        Matrix::Identity(d, d));
    precisions.push_back(linv.transpose() * linv);
  }
  auto cache = std::make_shared<const Cache>(
      Cache{m, std::move(precisions), std::log(scale)});

  // Per-component log terms and gradients of log N_k.
  auto pieces = [cache](const Vector& z, Vector& logs, std::vector<Vector>& grads) {
    const auto& mix = cache->mixture;
    logs.resize(static_cast<Eigen::Index>(mix.size()));
    grads.resize(mix.size());
    for (std::size_t k = 0; k < mix.size(); ++k) {
      const double w = mix.weights()[k];
      const auto& comp = mix.components()[k];
      logs[static_cast<Eigen::Index>(k)] =
          w > 0.0 ? std::log(w) + comp.log_pdf(z) : kNegInf;
      grads[k] = -cache->precisions[k] * (z - comp.mean());
    }
  };

  auto log_phi = [cache](const Vector& z) {
    return cache->log_scale + mixture_log_pdf(cache->mixture, z);
  };
  auto gradient = [pieces](const Vector& z) {
    Vector logs;
    std::vector<Vector> grads;
    pieces(z, logs, grads);
    const double total = log_sum_exp(logs);
    Vector g = Vector::Zero(z.size());
    for (std::size_t k = 0; k < grads.size(); ++k) {
      const double r = std::exp(logs[static_cast<Eigen::Index>(k)] - total);
      g += r * grads[k];
    }
    return g;
  };
  auto hessian = [pieces, cache](const Vector& z) {
    Vector logs;
    std::vector<Vector> grads;
    pieces(z, logs, grads);
    const double total = log_sum_exp(logs);
    const Eigen::Index d = z.size();
    Matrix h = Matrix::Zero(d, d);
    Vector mean_grad = Vector::Zero(d);
    for (std::size_t k = 0; k < grads.size(); ++k) {
      const double r = std::exp(logs[static_cast<Eigen::Index>(k)] - total);
      if (r == 0.0) continue;
      h += r * (cache->precisions[k] - grads[k] * grads[k].transpose());
      mean_grad += r * grads[k];
    }
    h += mean_grad * mean_grad.transpose();
    return h;
  };
  const int dim = static_cast<int>(m.dim());
  return UnnormalizedTarget(dim, log_phi, std::move(box), gradient, hessian);
}

Density as_density(const MixtureModel& m) {
  auto shared = std::make_shared<const MixtureModel>(m);
  Density out;
  out.dim = static_cast<int>(m.dim());
  out.log_pdf = [shared](const Vector& z) { return mixture_log_pdf(*shared, z); };
  out.sample = [shared](std::size_t n, std::uint64_t seed) {
    return mixture_sample(*shared, n, seed);
  };
  return out;
}

// --- sinh-arcsinh -----------------------------------------------------------

namespace {

struct SasTerms {
  double log_pdf;
  double d1;  // d/dy log p
  double d2;  // d^2/dy^2 log p
};

SasTerms sas_terms(double y, double location, double scale, double skew,
                   double tailweight, bool derivatives) {
  const double u = (y - location) / scale;
  const double q2 = 1.0 + u * u;
  const double q = std::sqrt(q2);
  const double w = std::asinh(u) / tailweight - skew;
  const double z = std::sinh(w);
  const double cw = std::cosh(w);
  // log cosh(w) without overflow for large |w|.
  const double aw = std::abs(w);
  const double log_cosh = aw + std::log1p(std::exp(-2.0 * aw)) - std::numbers::ln2;
  SasTerms t{};
  t.log_pdf = -0.5 * z * z - 0.5 * kLog2Pi + log_cosh - std::log(tailweight) -
              0.5 * std::log(q2) - std::log(scale);
  if (!derivatives) return t;
  const double a = -z * cw + std::tanh(w);
  const double sech = 1.0 / cw;
  const double a_prime = -std::cosh(2.0 * w) + sech * sech;
  const double ts = tailweight * scale;
  t.d1 = a / (ts * q) - u / (scale * q2);
  t.d2 = a_prime / (ts * ts * q2) - a * u / (ts * scale * q2 * q) -
         (1.0 - u * u) / (scale * scale * q2 * q2);
  return t;
}

void validate_spec(const SinhArcsinhSpec& s, Eigen::Index d) {
  if (s.location.size() != d || s.scale.size() != d || s.skew.size() != d ||
      s.tailweight.size() != d)
    throw ConstructionError("sinh-arcsinh spec fields differ in dimension");
  if (!(s.scale.array() > 0.0).all())
    throw ConstructionError("sinh-arcsinh scale must be positive");
  if (!(s.tailweight.array() > 0.0).all())
    throw ConstructionError("sinh-arcsinh tailweight must be positive");
  if (!s.location.allFinite() || !s.skew.allFinite() || !s.scale.allFinite() ||
      !s.tailweight.allFinite())
    throw ConstructionError("sinh-arcsinh parameters must be finite");
}

}  // namespace

double sinh_arcsinh_log_pdf_1d(double y, double location, double scale,
                               double skew, double tailweight) {
  return sas_terms(y, location, scale, skew, tailweight, false).log_pdf;
}

SinhArcsinhMixture::SinhArcsinhMixture(std::vector<SinhArcsinhSpec> specs,
                                       std::vector<double> weights)
    : specs_(std::move(specs)), weights_(std::move(weights)) {
  if (specs_.empty())
    throw ConstructionError("sinh-arcsinh mixture needs a component");
  if (specs_.size() != weights_.size())
    throw ConstructionError("sinh-arcsinh specs and weights differ in length");
  const Eigen::Index d = specs_.front().dim();
  if (d < 1) throw ConstructionError("sinh-arcsinh dimension must be positive");
  double total = 0.0;
  for (std::size_t k = 0; k < specs_.size(); ++k) {
    validate_spec(specs_[k], d);
    if (!(weights_[k] >= 0.0))
      throw ConstructionError("sinh-arcsinh weights must be nonnegative");
    total += weights_[k];
  }
  if (std::abs(total - 1.0) > 1e-8)
    throw ConstructionError("sinh-arcsinh weights must sum to 1");
  for (double& w : weights_) w /= total;
}

double SinhArcsinhMixture::log_pdf(const Vector& y) const {
  if (y.size() != dim()) throw ArgumentError("sinh-arcsinh: dimension mismatch");
  Vector terms(static_cast<Eigen::Index>(specs_.size()));
  for (std::size_t k = 0; k < specs_.size(); ++k) {
    const auto& s = specs_[k];
    double acc = weights_[k] > 0.0 ? std::log(weights_[k]) : kNegInf;
    for (Eigen::Index i = 0; i < y.size() && std::isfinite(acc); ++i)
      acc += sas_terms(y[i], s.location[i], s.scale[i], s.skew[i],
                       s.tailweight[i], false)
                 .log_pdf;
    terms[static_cast<Eigen::Index>(k)] = acc;
  }
  return log_sum_exp(terms);
}

Vector SinhArcsinhMixture::gradient(const Vector& y) const {
  const Eigen::Index d = y.size();
  const std::size_t kc = specs_.size();
  Vector logs(static_cast<Eigen::Index>(kc));
  Matrix grads(d, static_cast<Eigen::Index>(kc));
  for (std::size_t k = 0; k < kc; ++k) {
    const auto& s = specs_[k];
    double acc = weights_[k] > 0.0 ? std::log(weights_[k]) : kNegInf;
    for (Eigen::Index i = 0; i < d; ++i) {
      const auto t = sas_terms(y[i], s.location[i], s.scale[i], s.skew[i],
                               s.tailweight[i], true);
      acc += t.log_pdf;
      grads(i, static_cast<Eigen::Index>(k)) = t.d1;
    }
    logs[static_cast<Eigen::Index>(k)] = acc;
  }
  const double total = log_sum_exp(logs);
  Vector g = Vector::Zero(d);
  for (std::size_t k = 0; k < kc; ++k) {
    const double r = std::exp(logs[static_cast<Eigen::Index>(k)] - total);
    if (r > 0.0) g += r * grads.col(static_cast<Eigen::Index>(k));
  }
  return g;
}

Matrix SinhArcsinhMixture::neg_log_hessian(const Vector& y) const {
  const Eigen::Index d = y.size();
  const std::size_t kc = specs_.size();
  Vector logs(static_cast<Eigen::Index>(kc));
  Matrix grads(d, static_cast<Eigen::Index>(kc));
  Matrix curv(d, static_cast<Eigen::Index>(kc));
  for (std::size_t k = 0; k < kc; ++k) {
    const auto& s = specs_[k];
    double acc = weights_[k] > 0.0 ? std::log(weights_[k]) : kNegInf;
    for (Eigen::Index i = 0; i < d; ++i) {
      const auto t = sas_terms(y[i], s.location[i], s.scale[i], s.skew[i],
                               s.tailweight[i], true);
      acc += t.log_pdf;
      grads(i, static_cast<Eigen::Index>(k)) = t.d1;
      curv(i, static_cast<Eigen::Index>(k)) = t.d2;
    }
    logs[static_cast<Eigen::Index>(k)] = acc;
  }
  const double total = log_sum_exp(logs);
  Matrix h = Matrix::Zero(d, d);
  Vector mean_grad = Vector::Zero(d);
  for (std::size_t k = 0; k < kc; ++k) {
    const double r = std::exp(logs[static_cast<Eigen::Index>(k)] - total);
    if (r == 0.0) continue;
    const auto gk = grads.col(static_cast<Eigen::Index>(k));
    h.diagonal() += r * curv.col(static_cast<Eigen::Index>(k));
    h += r * gk * gk.transpose();
    mean_grad += r * gk;
  }
  h -= mean_grad * mean_grad.transpose();
  return -h;
}

Matrix SinhArcsinhMixture::sample(std::size_t n, std::uint64_t seed) const {
  if (n == 0) throw ArgumentError("sinh-arcsinh sample: n must be at least 1");
  std::mt19937_64 rng(seed);
  const auto picks = draw_components(weights_, n, rng);
  std::normal_distribution<double> normal(0.0, 1.0);
  const Eigen::Index d = dim();
  Matrix out(static_cast<Eigen::Index>(n), d);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& s = specs_[picks[i]];
    for (Eigen::Index j = 0; j < d; ++j) {
      const double z = normal(rng);
      out(static_cast<Eigen::Index>(i), j) =
          s.location[j] +
          s.scale[j] * std::sinh((std::asinh(z) + s.skew[j]) * s.tailweight[j]);
    }
  }
  return out;
}

Box SinhArcsinhMixture::default_box(double half_widths) const {
  const Eigen::Index d = dim();
  Box box{Vector::Constant(d, std::numeric_limits<double>::infinity()),
          Vector::Constant(d, -std::numeric_limits<double>::infinity())};
  for (const auto& s : specs_) {
    box.lower = box.lower.cwiseMin(s.location - half_widths * s.scale);
    box.upper = box.upper.cwiseMax(s.location + half_widths * s.scale);
  }
  return box;
}

UnnormalizedTarget make_sinh_arcsinh_mixture(std::vector<SinhArcsinhSpec> specs,
                                             std::vector<double> weights,
                                             Box box) {
  auto mix = std::make_shared<const SinhArcsinhMixture>(std::move(specs),
                                                        std::move(weights));
  if (box.dim() == 0) box = mix->default_box();
  return UnnormalizedTarget(
      mix->dim(), [mix](const Vector& y) { return mix->log_pdf(y); },
      std::move(box), [mix](const Vector& y) { return mix->gradient(y); },
      [mix](const Vector& y) { return mix->neg_log_hessian(y); });
}

Density as_density(const SinhArcsinhMixture& m) {
  auto shared = std::make_shared<const SinhArcsinhMixture>(m);
  Density out;
  out.dim = m.dim();
  out.log_pdf = [shared](const Vector& y) { return shared->log_pdf(y); };
  out.sample = [shared](std::size_t n, std::uint64_t seed) {
    return shared->sample(n, seed);
  };
  return out;
}

}  // namespace gola
