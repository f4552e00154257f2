// Apache License, Version 2.0, refer to LICENSE.txt

#include "gola/vi.hpp"

#include "gola/mathkit.hpp"
#include "gola/metrics.hpp"
#include "gola/parallel.hpp"

#include <chrono>
#include <cmath>
#include <limits>
#include <random>
#include <sstream>

namespace gola {

namespace {

// Samples per accumulation chunk. Chunks are summed in index order, so the
// result does not depend on how many threads processed them.
constexpr std::size_t kChunk = 32;

// Per-component quantities reused for every sample.
struct ComponentCache {
  std::vector<Vector> mean;
  std::vector<Matrix> chol;
  std::vector<double> log_weight;
  std::vector<double> log_norm;  // -0.5 d log 2 pi - sum log L_ii
  Vector weights;
};

ComponentCache make_cache(const VariationalParams& p, const MixtureModel& m) {
  ComponentCache c;
  const double d = static_cast<double>(p.dim());
  c.weights = Vector(static_cast<Eigen::Index>(m.size()));
  for (std::size_t k = 0; k < m.size(); ++k) {
    const auto& comp = m.components()[k];
    c.mean.push_back(comp.mean());
    c.chol.push_back(comp.chol_cov());
    const double w = m.weights()[k];
    c.weights[static_cast<Eigen::Index>(k)] = w;
    c.log_weight.push_back(w > 0.0 ? std::log(w) : -std::numeric_limits<double>::infinity());
    c.log_norm.push_back(-0.5 * d * 1.8378770664093454835606594728112 -
                         comp.chol_cov().diagonal().array().log().sum());
  }
  return c;
}

struct SampleTerms {
  double log_q = 0.0;
  Vector resp;                // r_k
  std::vector<Vector> white;  // v_k = L_k^{-1} (z - mu_k)
};

SampleTerms sample_terms(const ComponentCache& c, const Vector& z) {
  const std::size_t k = c.mean.size();
  SampleTerms t;
  t.white.resize(k);
  Vector logs(static_cast<Eigen::Index>(k));
  for (std::size_t j = 0; j < k; ++j) {
    t.white[j] = c.chol[j].triangularView<Eigen::Lower>().solve(Vector(z - c.mean[j]));
    logs[static_cast<Eigen::Index>(j)] = c.log_weight[j] + c.log_norm[j] - 0.5 * t.white[j].squaredNorm();
  }
  t.log_q = log_sum_exp(logs);
  t.resp = (logs.array() - t.log_q).exp().matrix();
  return t;
}

VariationalParams zeros_like(const VariationalParams& p) {
  VariationalParams g;
  g.logits = Vector::Zero(p.logits.size());
  for (std::size_t k = 0; k < p.components(); ++k) {
    g.means.push_back(Vector::Zero(p.dim()));
    g.log_chol.push_back(Matrix::Zero(p.dim(), p.dim()));
  }
  return g;
}

void add_scaled(VariationalParams& acc, const VariationalParams& x, double s) {
  acc.logits += s * x.logits;
  for (std::size_t k = 0; k < acc.components(); ++k) {
    acc.means[k] += s * x.means[k];
    acc.log_chol[k] += s * x.log_chol[k];
  }
}

// Adds coeff * grad_theta log q(z) into acc.
void accumulate_score(VariationalParams& acc, const ComponentCache& c, const SampleTerms& t,
                      double coeff) {
  const std::size_t k = c.mean.size();
  acc.logits += coeff * (t.resp - c.weights);
  for (std::size_t j = 0; j < k; ++j) {
    const double r = t.resp[static_cast<Eigen::Index>(j)];
    if (r == 0.0) continue;
    const Matrix& l = c.chol[j];
    const Vector w = l.transpose().triangularView<Eigen::Upper>().solve(t.white[j]);
    acc.means[j] += (coeff * r) * w;
    // d log N / dL = tril(w v^T) - diag(1 / L_ii); log-diagonal chain rule
    // multiplies the diagonal by L_ii.
    Matrix& g = acc.log_chol[j];
    const Eigen::Index d = l.rows();
    for (Eigen::Index a = 0; a < d; ++a) {
      for (Eigen::Index b = 0; b < a; ++b) g(a, b) += coeff * r * w[a] * t.white[j][b];
      g(a, a) += coeff * r * (w[a] * t.white[j][a] * l(a, a) - 1.0);
    }
  }
}

double penalized_f(double log_q, double log_phi, bool& penalized) {
  penalized = !std::isfinite(log_phi) || std::isnan(log_phi);
  if (penalized) return kOutOfSupportPenalty;
  return log_q - log_phi;
}

struct FValues {
  std::vector<double> f;
  std::size_t penalized = 0;
  Matrix z;
};

FValues evaluate_f(const VariationalParams& params, const MixtureModel& m, const ComponentCache& c,
                   const UnnormalizedTarget& target, std::size_t n, std::uint64_t seed, int workers) {
  FValues out;
  out.z = mixture_sample(m, n, seed);
  out.f.assign(n, 0.0);
  std::vector<char> pen(n, 0);
  (void)params;
  parallel_for(n, workers, [&](std::size_t i) {
    const Vector z = out.z.row(static_cast<Eigen::Index>(i)).transpose();
    const SampleTerms t = sample_terms(c, z);
    bool p = false;
    out.f[i] = penalized_f(t.log_q, target.log_phi(z), p);
    pen[i] = p ? 1 : 0;
  });
  for (char p : pen) out.penalized += static_cast<std::size_t>(p);
  return out;
}

NegElboEstimate summarize(const std::vector<double>& f, std::size_t penalized) {
  NegElboEstimate e;
  e.n_samples = f.size();
  e.penalized = penalized;
  double mean = 0.0;
  for (double v : f) mean += v;
  mean /= static_cast<double>(f.size());
  double var = 0.0;
  for (double v : f) var += (v - mean) * (v - mean);
  e.value = mean;
  e.std_error = f.size() > 1 ? std::sqrt(var / static_cast<double>(f.size() - 1) / static_cast<double>(f.size()))
                             : 0.0;
  return e;
}

// exp of the log-diagonal must stay a normal positive double.
bool representable(const VariationalParams& p) {
  if (!p.logits.allFinite()) return false;
  for (std::size_t k = 0; k < p.components(); ++k) {
    if (!p.means[k].allFinite() || !p.log_chol[k].allFinite()) return false;
    if (p.log_chol[k].diagonal().cwiseAbs().maxCoeff() > 700.0) return false;
  }
  return true;
}

void check_params(const VariationalParams& p, const UnnormalizedTarget& target) {
  if (p.components() == 0) throw ArgumentError("variational parameters have no components");
  if (p.dim() != target.dim()) throw ArgumentError("variational parameters and target differ in dimension");
}

}  // namespace

VariationalParams VariationalParams::from_mixture(const MixtureModel& m) {
  VariationalParams p;
  const std::size_t k = m.size();
  p.logits = Vector(static_cast<Eigen::Index>(k));
  for (std::size_t j = 0; j < k; ++j) {
    p.logits[static_cast<Eigen::Index>(j)] = std::log(std::max(m.weights()[j], 1e-300));
    const auto& comp = m.components()[j];
    p.means.push_back(comp.mean());
    Matrix lc = comp.chol_cov();
    for (Eigen::Index i = 0; i < lc.rows(); ++i) lc(i, i) = std::log(lc(i, i));
    p.log_chol.push_back(std::move(lc));
  }
  return p;
}

MixtureModel VariationalParams::to_mixture() const {
  const std::size_t k = components();
  const double top = logits.maxCoeff();
  Vector w = (logits.array() - top).exp().matrix();
  w /= w.sum();
  std::vector<GaussianComponent> comps;
  std::vector<double> weights(k);
  for (std::size_t j = 0; j < k; ++j) {
    Matrix l = log_chol[j].triangularView<Eigen::StrictlyLower>();
    l.diagonal() = log_chol[j].diagonal().array().exp().matrix();
    comps.emplace_back(means[j], std::move(l));
    weights[j] = w[static_cast<Eigen::Index>(j)];
  }
  return MixtureModel(std::move(comps), std::move(weights));
}

std::size_t VariationalParams::size() const {
  const std::size_t d = static_cast<std::size_t>(dim());
  return components() * (1 + d + d * (d + 1) / 2);
}

Vector VariationalParams::flatten() const {
  Vector out(static_cast<Eigen::Index>(size()));
  Eigen::Index pos = 0;
  for (Eigen::Index j = 0; j < logits.size(); ++j) out[pos++] = logits[j];
  for (std::size_t k = 0; k < components(); ++k) {
    for (Eigen::Index i = 0; i < dim(); ++i) out[pos++] = means[k][i];
    for (Eigen::Index a = 0; a < dim(); ++a)
      for (Eigen::Index b = 0; b <= a; ++b) out[pos++] = log_chol[k](a, b);
  }
  return out;
}

VariationalParams VariationalParams::unflatten(const Vector& flat, std::size_t k, Eigen::Index d) {
  VariationalParams p;
  const std::size_t expected = k * (1 + static_cast<std::size_t>(d) + static_cast<std::size_t>(d * (d + 1) / 2));
  if (static_cast<std::size_t>(flat.size()) != expected)
    throw ArgumentError("VariationalParams::unflatten: length does not match (k, d)");
  Eigen::Index pos = 0;
  p.logits = flat.head(static_cast<Eigen::Index>(k));
  pos += static_cast<Eigen::Index>(k);
  for (std::size_t j = 0; j < k; ++j) {
    p.means.push_back(flat.segment(pos, d));
    pos += d;
    Matrix l = Matrix::Zero(d, d);
    for (Eigen::Index a = 0; a < d; ++a)
      for (Eigen::Index b = 0; b <= a; ++b) l(a, b) = flat[pos++];
    p.log_chol.push_back(std::move(l));
  }
  return p;
}

void ViConfig::validate() const {
  if (n_mc_samples < 2 && baseline) throw ConfigError("the baseline needs n_mc_samples >= 2");
  if (n_mc_samples < 1) throw ConfigError("n_mc_samples must be at least 1");
  if (!(step_size > 0.0)) throw ConfigError("step_size must be positive");
  if (!(beta1 > 0.0 && beta1 < 1.0) || !(beta2 > 0.0 && beta2 < 1.0))
    throw ConfigError("beta1 and beta2 must lie in (0, 1)");
  if (max_epochs < 0) throw ConfigError("max_epochs must be nonnegative");
  if (steps_per_epoch < 1) throw ConfigError("steps_per_epoch must be at least 1");
  if (report_interval < 1) throw ConfigError("report_interval must be at least 1");
  if (n_elbo_samples < 2) throw ConfigError("n_elbo_samples must be at least 2");
  if (jsd_samples < 2) throw ConfigError("jsd_samples must be at least 2");
  if (workers < 1) throw ConfigError("workers must be at least 1");
}

NegElboEstimate negative_elbo_estimate(const VariationalParams& params,
                                       const UnnormalizedTarget& target, std::size_t n,
                                       std::uint64_t seed, int workers) {
  check_params(params, target);
  if (n < 1) throw ArgumentError("negative_elbo_estimate: n must be at least 1");
  const MixtureModel m = params.to_mixture();
  const ComponentCache c = make_cache(params, m);
  const FValues fv = evaluate_f(params, m, c, target, n, seed, workers);
  return summarize(fv.f, fv.penalized);
}

GradientEstimate score_function_gradient(const VariationalParams& params,
                                         const UnnormalizedTarget& target, std::size_t n,
                                         std::uint64_t seed, bool baseline, int workers) {
  check_params(params, target);
  if (n < 1 || (baseline && n < 2))
    throw ArgumentError("score_function_gradient: need n >= 2 with the baseline, n >= 1 without");
  const MixtureModel m = params.to_mixture();
  const ComponentCache c = make_cache(params, m);
  const FValues fv = evaluate_f(params, m, c, target, n, seed, workers);

  const double nn = static_cast<double>(n);
  double total = 0.0;
  for (double v : fv.f) total += v;
  std::vector<double> coeff(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double b = baseline ? (total - fv.f[i]) / (nn - 1.0) : 0.0;
    coeff[i] = (fv.f[i] - b) / nn;
  }

  const std::size_t n_chunks = (n + kChunk - 1) / kChunk;
  std::vector<VariationalParams> partial(n_chunks, zeros_like(params));
  parallel_for(n_chunks, workers, [&](std::size_t ch) {
    const std::size_t lo = ch * kChunk, hi = std::min(n, lo + kChunk);
    for (std::size_t i = lo; i < hi; ++i) {
      const Vector z = fv.z.row(static_cast<Eigen::Index>(i)).transpose();
      accumulate_score(partial[ch], c, sample_terms(c, z), coeff[i]);
    }
  });
  GradientEstimate out{zeros_like(params), summarize(fv.f, fv.penalized)};
  for (const auto& p : partial) add_scaled(out.gradient, p, 1.0);
  return out;
}

GradientEstimate reparam_gradient_single_gaussian(const VariationalParams& params,
                                                  const UnnormalizedTarget& target, std::size_t n,
                                                  std::uint64_t seed) {
  check_params(params, target);
  if (params.components() != 1)
    throw UnsupportedConfigurationError(
        "reparam_gradient_single_gaussian: mixtures need implicit reparameterization, which is not "
        "provided; use score_function_gradient");
  if (n < 1) throw ArgumentError("reparam_gradient_single_gaussian: n must be at least 1");
  const MixtureModel m = params.to_mixture();
  const auto& comp = m.components().front();
  const Matrix& l = comp.chol_cov();
  const Eigen::Index d = l.rows();

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  GradientEstimate out{zeros_like(params), {}};
  std::vector<double> f(n);
  std::size_t penalized = 0;
  Vector mean_grad = Vector::Zero(d);
  Matrix chol_grad = Matrix::Zero(d, d);
  Vector eps(d);
  for (std::size_t i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < d; ++j) eps[j] = normal(rng);
    const Vector z = comp.mean() + l.triangularView<Eigen::Lower>() * eps;
    const double log_phi = target.log_phi(z);
    bool pen = false;
    f[i] = penalized_f(comp.log_pdf(z), log_phi, pen);
    if (pen) {
      ++penalized;
      continue;
    }
    const Vector g = eval_gradient(target, z);
    mean_grad -= g;
    chol_grad -= (g * eps.transpose()).triangularView<Eigen::Lower>().toDenseMatrix();
  }
  const double nn = static_cast<double>(n);
  mean_grad /= nn;
  chol_grad /= nn;
  // The entropy term contributes -sum log L_ii exactly.
  for (Eigen::Index a = 0; a < d; ++a) chol_grad(a, a) -= 1.0 / l(a, a);
  for (Eigen::Index a = 0; a < d; ++a) chol_grad(a, a) *= l(a, a);
  out.gradient.means[0] = mean_grad;
  out.gradient.log_chol[0] = chol_grad;
  out.objective = summarize(f, penalized);
  return out;
}

ViResult refine(const MixtureModel& init, const UnnormalizedTarget& target, const ViConfig& cfg,
                const std::optional<Density>& reference) {
  cfg.validate();
  if (init.dim() != target.dim()) throw ArgumentError("refine: init and target differ in dimension");
  if (reference && reference->dim != target.dim())
    throw ArgumentError("refine: reference and target differ in dimension");

  using clock = std::chrono::steady_clock;
  VariationalParams params = VariationalParams::from_mixture(init);
  const std::size_t k = params.components();
  const Eigen::Index d = params.dim();
  const std::uint64_t elbo_seed = derive_seed(cfg.seed, 0xe1b0);
  const std::uint64_t jsd_seed = derive_seed(cfg.seed, 0x15d);

  ViResult result{init, {}, 0.0, 0};
  double elapsed = 0.0;

  auto jsd_of = [&](const MixtureModel& m) -> std::optional<double> {
    if (!reference) return std::nullopt;
    return jsd_normalized(*reference, as_density(m), cfg.jsd_samples, jsd_seed).value;
  };

  auto t0 = clock::now();
  const NegElboEstimate initial = negative_elbo_estimate(params, target, cfg.n_elbo_samples, elbo_seed, cfg.workers);
  elapsed += std::chrono::duration<double>(clock::now() - t0).count();
  result.trace.penalized_samples += initial.penalized;
  result.trace.records.push_back({0, elapsed, initial.value, jsd_of(init)});
  result.best_neg_elbo = initial.value;
  const double divergence_level = 1e6 * std::max(std::abs(initial.value), 1.0);

  Vector flat = params.flatten();
  Vector m1 = Vector::Zero(flat.size());
  Vector m2 = Vector::Zero(flat.size());
  long step = 0;
  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    t0 = clock::now();
    bool broken = false;  // parameters left the representable range
    for (int s = 0; s < cfg.steps_per_epoch && !broken; ++s) {
      ++step;
      const GradientEstimate ge = score_function_gradient(
          params, target, cfg.n_mc_samples, derive_seed(cfg.seed, static_cast<std::uint64_t>(step)),
          cfg.baseline, cfg.workers);
      result.trace.penalized_samples += ge.objective.penalized;
      const Vector g = ge.gradient.flatten();
      m1 = cfg.beta1 * m1 + (1.0 - cfg.beta1) * g;
      m2 = cfg.beta2 * m2 + (1.0 - cfg.beta2) * g.cwiseAbs2();
      const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
      const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
      flat.array() -= cfg.step_size * (m1.array() / c1) / ((m2.array() / c2).sqrt() + 1e-8);
      params = VariationalParams::unflatten(flat, k, d);
      broken = !representable(params);
    }
    NegElboEstimate ne;
    ne.value = std::numeric_limits<double>::infinity();
    if (!broken) {
      ne = negative_elbo_estimate(params, target, cfg.n_elbo_samples, elbo_seed, cfg.workers);
      result.trace.penalized_samples += ne.penalized;
    }
    elapsed += std::chrono::duration<double>(clock::now() - t0).count();

    const bool diverged = broken || !std::isfinite(ne.value) || ne.value > divergence_level;
    if (diverged) {
      result.trace.records.push_back({epoch, elapsed, ne.value, std::nullopt});
      result.trace.diverged = true;
      break;
    }
    const MixtureModel current = params.to_mixture();
    if (ne.value < result.best_neg_elbo) {
      result.best_neg_elbo = ne.value;
      result.best_epoch = epoch;
      result.mixture = current;
    }
    if (epoch % cfg.report_interval == 0 || epoch == cfg.max_epochs)
      result.trace.records.push_back({epoch, elapsed, ne.value, jsd_of(current)});
  }
  return result;
}

MixtureModel random_cold_start(int dim, std::size_t k, const Box& box, std::uint64_t seed) {
  if (k < 1) throw ArgumentError("random_cold_start: k must be at least 1");
  if (box.dim() != dim) throw ArgumentError("random_cold_start: box dimension mismatch");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::vector<GaussianComponent> comps;
  const Vector width = box.width();
  for (std::size_t j = 0; j < k; ++j) {
    Vector mean(dim);
    for (int i = 0; i < dim; ++i) mean[i] = box.lower[i] + unif(rng) * width[i];
    Matrix chol = (width / 10.0).asDiagonal();
    comps.emplace_back(std::move(mean), std::move(chol));
  }
  return MixtureModel(std::move(comps), std::vector<double>(k, 1.0 / static_cast<double>(k)));
}

}  // namespace gola
