// Apache License, Version 2.0, refer to LICENSE.txt

#include "gola/metrics.hpp"

#include "gola/mathkit.hpp"

#include <algorithm>
#include <cmath>
#include <vector>
#include <numbers>

namespace gola {

namespace {

constexpr double kLog2Pi = 1.8378770664093454835606594728112;

void check_pair(const Density& p, const Density& q, std::size_t n, const char* who) {
  if (p.dim != q.dim) throw ArgumentError(std::string(who) + ": densities differ in dimension");
  if (!p.log_pdf || !q.log_pdf) throw ArgumentError(std::string(who) + ": density is missing log_pdf");
  if (n < 2) throw ArgumentError(std::string(who) + ": need at least two samples");
}

struct Moments {
  double mean = 0.0;
  double var = 0.0;  // of one term, unbiased
};

Moments moments(const std::vector<double>& v) {
  Moments m;
  for (double x : v) m.mean += x;
  m.mean /= static_cast<double>(v.size());
  for (double x : v) m.var += (x - m.mean) * (x - m.mean);
  m.var /= static_cast<double>(v.size() - 1);
  return m;
}

double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

// log p(x) - log m(x) with m = (p + q) / 2, written as log 2 - softplus(lq - lp)
// so that it never exceeds log 2.
double jsd_term(double lp, double lq, std::size_t& violations) {
  if (std::isinf(lq) && lq < 0.0 && std::isfinite(lp)) return std::numbers::ln2;
  const double diff = lq - lp;
  if (!std::isfinite(diff)) {
    ++violations;
    return std::numbers::ln2 - kLogRatioClamp;
  }
  return std::numbers::ln2 - softplus(diff);
}

// log of the integral of N(x; a, S1) N(x; b, S2), which equals
// log N(a - b; 0, S1 + S2); `cov` is S1 + S2.
double log_gaussian_product_integral(const Vector& diff, const Matrix& cov) {
  const SpdMatrix f = cholesky_spd(cov);
  const Vector w = f.chol_lower.triangularView<Eigen::Lower>().solve(diff);
  const double log_det = 2.0 * f.chol_lower.diagonal().array().log().sum();
  return -0.5 * (static_cast<double>(diff.size()) * kLog2Pi + log_det + w.squaredNorm());
}

}  // namespace

DivergenceEstimate kl_mc(const Density& p, const Density& q, std::size_t n, std::uint64_t seed) {
  check_pair(p, q, n, "kl_mc");
  if (!p.sample) throw ArgumentError("kl_mc: p needs a sampler");
  const Matrix x = p.sample(n, seed);
  DivergenceEstimate out;
  out.n_samples = n;
  std::vector<double> terms(n);
  for (std::size_t i = 0; i < n; ++i) {
    const Vector xi = x.row(static_cast<Eigen::Index>(i)).transpose();
    double r = p.log_pdf(xi) - q.log_pdf(xi);
    if (!std::isfinite(r) || std::abs(r) > kLogRatioClamp) {
      ++out.support_violations;
      r = std::isnan(r) ? kLogRatioClamp : std::clamp(r, -kLogRatioClamp, kLogRatioClamp);
    }
    terms[i] = r;
  }
  const Moments m = moments(terms);
  out.value = m.mean;
  out.std_error = std::sqrt(m.var / static_cast<double>(n));
  return out;
}

DivergenceEstimate jsd_normalized(const Density& p, const Density& q, std::size_t n,
                                  std::uint64_t seed) {
  check_pair(p, q, n, "jsd_normalized");
  if (!p.sample || !q.sample) throw ArgumentError("jsd_normalized: both densities need samplers");
  const Matrix xp = p.sample(n, derive_seed(seed, 0));
  const Matrix xq = q.sample(n, derive_seed(seed, 1));
  DivergenceEstimate out;
  out.n_samples = n;
  std::vector<double> tp(n), tq(n);
  for (std::size_t i = 0; i < n; ++i) {
    const Vector a = xp.row(static_cast<Eigen::Index>(i)).transpose();
    tp[i] = jsd_term(p.log_pdf(a), q.log_pdf(a), out.support_violations);
    const Vector b = xq.row(static_cast<Eigen::Index>(i)).transpose();
    tq[i] = jsd_term(q.log_pdf(b), p.log_pdf(b), out.support_violations);
  }
  const Moments mp = moments(tp);
  const Moments mq = moments(tq);
  const double nn = static_cast<double>(n);
  out.value = 0.5 * (mp.mean + mq.mean) / std::numbers::ln2;
  out.std_error = 0.5 * std::sqrt(mp.var / nn + mq.var / nn) / std::numbers::ln2;
  return out;
}

double dice_overlap(const GaussianComponent& p1, const GaussianComponent& p2) {
  if (p1.dim() != p2.dim()) throw ArgumentError("dice_overlap: dimension mismatch");
  const Matrix s1 = p1.covariance();
  const Matrix s2 = p2.covariance();
  const double log_cross = log_gaussian_product_integral(p1.mean() - p2.mean(), s1 + s2);
  const Vector zero = Vector::Zero(p1.dim());
  const double log_self1 = log_gaussian_product_integral(zero, 2.0 * s1);
  const double log_self2 = log_gaussian_product_integral(zero, 2.0 * s2);
  const double hi = std::max(log_self1, log_self2);
  const double log_denominator = hi + std::log(std::exp(log_self1 - hi) + std::exp(log_self2 - hi));
  return std::min(1.0, std::exp(std::numbers::ln2 + log_cross - log_denominator));
}

}  // namespace gola
