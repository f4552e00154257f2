// Apache License, Version 2.0, refer to LICENSE.txt

#include "gola/sensibench.hpp"

#include "gola/mathkit.hpp"
#include "gola/metrics.hpp"
#include "gola/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

namespace gola {

double Factor::from_unit(double u) const {
  if (!discrete) return lo + u * (hi - lo);
  const double v = lo + std::floor(u * (hi - lo + 1.0));
  return std::min(v, hi);
}

Vector FactorValues::to_vector() const {
  Vector x(5);
  x << d, M, omega, c, lambda;
  return x;
}

FactorValues FactorValues::from_vector(const Vector& x) {
  if (x.size() != 5) throw ArgumentError("FactorValues::from_vector: expected 5 entries");
  return {static_cast<int>(std::lround(x[0])), static_cast<int>(std::lround(x[1])), x[2], x[3], x[4]};
}

FactorSpec FactorSpec::standard() { return FactorSpec{}; }

FactorSpec FactorSpec::hard() {
  return FactorSpec{{8, 10}, {3, 4}, {1.3, 2.0}, {0.1, 0.7}, {1e-4, 1e-2}};
}

void FactorSpec::validate() const {
  if (d.lo < 1 || d.hi < d.lo) throw ConfigError("factor d needs 1 <= lo <= hi");
  if (M.lo < 1 || M.hi < M.lo) throw ConfigError("factor M needs 1 <= lo <= hi");
  if (!(omega.lo >= 1.0 && omega.hi >= omega.lo)) throw ConfigError("factor omega needs 1 <= lo <= hi");
  if (!(c.lo >= 0.0 && c.hi >= c.lo && c.hi < 1.0)) throw ConfigError("factor c must lie in [0, 1)");
  if (!(lambda.lo > 0.0 && lambda.hi >= lambda.lo && lambda.hi < 1.0))
    throw ConfigError("factor lambda must lie in (0, 1)");
}

std::vector<Factor> FactorSpec::factors() const {
  return {{"d", static_cast<double>(d.lo), static_cast<double>(d.hi), true},
          {"M", static_cast<double>(M.lo), static_cast<double>(M.hi), true},
          {"omega", omega.lo, omega.hi, false},
          {"c", c.lo, c.hi, false},
          {"lambda", lambda.lo, lambda.hi, false}};
}

FactorValues FactorSpec::sample(std::uint64_t seed) const {
  validate();
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const auto fs = factors();
  Vector x(5);
  for (int i = 0; i < 5; ++i) x[i] = fs[static_cast<std::size_t>(i)].from_unit(unif(rng));
  return FactorValues::from_vector(x);
}

namespace {

// Unit-spaced vertices, one per row, centered at the origin.
Matrix vertex_layout(int d, int m) {
  Matrix p = Matrix::Zero(m, d);
  if (m == 1) return p;
  if (m - 1 <= d) {
    // Regular simplex: centered basis vectors of R^m expressed in an
    // orthonormal basis of their (m-1)-dimensional span.
    const Matrix e = Matrix::Identity(m, m) - Matrix::Constant(m, m, 1.0 / m);
    const Matrix q = Eigen::HouseholderQR<Matrix>(e).householderQ();
    p.leftCols(m - 1) = e * q.leftCols(m - 1);
  } else {
    if (d < 2) throw GenerationError("generate_test_gmm: more than two components need d >= 2");
    for (int k = 0; k < m; ++k) {
      const double a = 2.0 * std::numbers::pi * k / m;
      p(k, 0) = std::cos(a);
      p(k, 1) = std::sin(a);
    }
  }
  return p;
}

Matrix haar_rotation(int d, std::mt19937_64& rng) {
  std::normal_distribution<double> normal;
  Matrix g(d, d);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) g(i, j) = normal(rng);
  Eigen::HouseholderQR<Matrix> qr(g);
  Matrix q = qr.householderQ();
  const Matrix r = qr.matrixQR();
  for (int j = 0; j < d; ++j)
    if (r(j, j) < 0.0) q.col(j) *= -1.0;
  return q;
}

std::vector<GaussianComponent> place(const Matrix& layout, double scale, const Matrix& chol) {
  std::vector<GaussianComponent> comps;
  for (Eigen::Index k = 0; k < layout.rows(); ++k)
    comps.emplace_back(Vector(scale * layout.row(k).transpose()), chol);
  return comps;
}

double max_overlap(const std::vector<GaussianComponent>& comps) {
  double best = 0.0;
  for (std::size_t i = 0; i < comps.size(); ++i)
    for (std::size_t j = i + 1; j < comps.size(); ++j) best = std::max(best, dice_overlap(comps[i], comps[j]));
  return best;
}

}  // namespace

MixtureModel generate_test_gmm(const FactorValues& f, std::uint64_t seed) {
  if (f.d < 1 || f.M < 1) throw ArgumentError("generate_test_gmm: d and M must be positive");
  if (!(f.omega > 0.0)) throw ArgumentError("generate_test_gmm: omega must be positive");
  if (!(f.c >= 0.0 && f.c < 1.0)) throw ArgumentError("generate_test_gmm: c must lie in [0, 1)");
  if (!(f.lambda > 0.0 && f.lambda < 1.0)) throw ArgumentError("generate_test_gmm: lambda must lie in (0, 1)");

  std::vector<double> weights(static_cast<std::size_t>(f.M));
  double w = 1.0, total = 0.0;
  for (auto& x : weights) {
    x = w;
    total += w;
    w /= f.omega;
  }
  for (auto& x : weights) x /= total;

  Matrix cov = Matrix::Constant(f.d, f.d, f.c);
  cov.diagonal().setOnes();
  Matrix chol;
  if (!cholesky_lower(cov, chol)) throw GenerationError("generate_test_gmm: correlation matrix is not positive definite");
  if (f.M == 1) return MixtureModel(place(Matrix::Zero(1, f.d), 0.0, chol), weights);

  std::mt19937_64 rng(seed);
  const Matrix layout = vertex_layout(f.d, f.M) * haar_rotation(f.d, rng).transpose();

  // Overlap falls monotonically with the scale; bracket, then bisect.
  double lo = 0.0, hi = 1.0;
  int doublings = 0;
  while (max_overlap(place(layout, hi, chol)) > f.lambda) {
    lo = hi;
    hi *= 2.0;
    if (++doublings > 60) throw GenerationError("generate_test_gmm: could not bracket the separation for lambda");
  }
  for (int it = 0; it < 200 && hi - lo > 1e-13 * hi; ++it) {
    const double mid = 0.5 * (lo + hi);
    (max_overlap(place(layout, mid, chol)) > f.lambda ? lo : hi) = mid;
  }
  return MixtureModel(place(layout, hi, chol), weights);
}

double max_pairwise_overlap(const MixtureModel& m) { return max_overlap(m.components()); }

Box test_gmm_box(const MixtureModel& m, double margin) {
  const Eigen::Index d = m.dim();
  Vector lower = Vector::Constant(d, std::numeric_limits<double>::infinity());
  Vector upper = -lower;
  for (const auto& c : m.components()) {
    const Vector sd = c.covariance().diagonal().cwiseSqrt();
    lower = lower.cwiseMin(c.mean() - margin * sd);
    upper = upper.cwiseMax(c.mean() + margin * sd);
  }
  return Box{lower, upper};
}

SobolDesign sobol_design(const std::vector<Factor>& factors, std::size_t n, std::uint64_t seed,
                         const SobolModel& model, int workers) {
  const int k = static_cast<int>(factors.size());
  if (n < 2) throw ArgumentError("sobol_design: N must be at least 2");
  if (k < 1) throw ArgumentError("sobol_design: no factors");
  if (2 * k > kMaxSobolDimension) throw ArgumentError("sobol_design: too many factors for the Sobol generator");
  for (const auto& f : factors)
    if (!(f.hi >= f.lo)) throw ArgumentError("sobol_design: factor " + f.name + " has hi < lo");

  // Cranley-Patterson shift makes each seed an independent randomized design.
  std::mt19937_64 rng(derive_seed(seed, 0));
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  Vector shift(2 * k);
  for (int j = 0; j < 2 * k; ++j) shift[j] = unif(rng);
  Matrix u = sobol_points(2 * k, n);
  for (Eigen::Index r = 0; r < u.rows(); ++r)
    for (int j = 0; j < 2 * k; ++j) u(r, j) = std::fmod(u(r, j) + shift[j], 1.0);

  SobolDesign out;
  out.factors = factors;
  const auto nn = static_cast<Eigen::Index>(n);
  out.A.resize(nn, k);
  out.B.resize(nn, k);
  auto fill_row = [&](Eigen::Index r, const Vector& unit) {
    for (int j = 0; j < k; ++j) {
      out.A(r, j) = factors[static_cast<std::size_t>(j)].from_unit(unit[j]);
      out.B(r, j) = factors[static_cast<std::size_t>(j)].from_unit(unit[k + j]);
    }
  };
  for (Eigen::Index r = 0; r < nn; ++r) fill_row(r, u.row(r).transpose());

  auto build_ab = [&]() {
    out.AB.assign(static_cast<std::size_t>(k), out.A);
    for (int i = 0; i < k; ++i) out.AB[static_cast<std::size_t>(i)].col(i) = out.B.col(i);
  };
  build_ab();

  // Evaluation e of row r: 0 -> A, 1 -> B, 2 + i -> AB_i.
  const std::size_t per_row = static_cast<std::size_t>(k) + 2;
  auto point = [&](std::size_t r, std::size_t e) -> Vector {
    const auto row = static_cast<Eigen::Index>(r);
    if (e == 0) return out.A.row(row).transpose();
    if (e == 1) return out.B.row(row).transpose();
    return out.AB[e - 2].row(row).transpose();
  };
  std::vector<double> values(n * per_row, 0.0);
  std::vector<char> failed(n * per_row, 0);
  auto evaluate = [&](std::size_t idx, std::uint64_t stream) {
    const std::size_t r = idx / per_row, e = idx % per_row;
    try {
      values[idx] = model(point(r, e), derive_seed(seed, stream));
      failed[idx] = std::isfinite(values[idx]) ? 0 : 1;
    } catch (const std::exception&) {
      failed[idx] = 1;
    }
  };
  parallel_for(n * per_row, workers, [&](std::size_t idx) { evaluate(idx, 1 + idx); });

  std::vector<std::size_t> bad_rows;
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t e = 0; e < per_row; ++e)
      if (failed[r * per_row + e]) {
        bad_rows.push_back(r);
        break;
      }
  if (!bad_rows.empty()) {
    for (std::size_t r : bad_rows) {
      std::mt19937_64 redraw(derive_seed(seed, 0xfa11ULL + r));
      Vector unit(2 * k);
      for (int j = 0; j < 2 * k; ++j) unit[j] = unif(redraw);
      fill_row(static_cast<Eigen::Index>(r), unit);
    }
    build_ab();
    const std::uint64_t retry_base = 1 + n * per_row;
    parallel_for(bad_rows.size() * per_row, workers, [&](std::size_t t) {
      const std::size_t idx = bad_rows[t / per_row] * per_row + t % per_row;
      evaluate(idx, retry_base + idx);
    });
    for (std::size_t r : bad_rows)
      for (std::size_t e = 0; e < per_row; ++e)
        if (failed[r * per_row + e]) {
          std::ostringstream msg;
          msg << "sobol_design: model failed twice on row " << r;
          throw EvaluationError(msg.str());
        }
    out.resampled_rows = bad_rows;
  }

  out.fA.resize(nn);
  out.fB.resize(nn);
  out.fAB.assign(static_cast<std::size_t>(k), Vector(nn));
  for (std::size_t r = 0; r < n; ++r) {
    const auto row = static_cast<Eigen::Index>(r);
    out.fA[row] = values[r * per_row];
    out.fB[row] = values[r * per_row + 1];
    for (int i = 0; i < k; ++i) out.fAB[static_cast<std::size_t>(i)][row] = values[r * per_row + 2 + static_cast<std::size_t>(i)];
  }
  return out;
}

SobolDesign sobol_design(const FactorSpec& spec, std::size_t n, std::uint64_t seed, const SobolModel& model,
                         int workers) {
  spec.validate();
  return sobol_design(spec.factors(), n, seed, model, workers);
}

namespace {

// Estimators over the rows listed in idx. Returns false when V == 0.
bool indices_on(const SobolDesign& d, const std::vector<Eigen::Index>& idx, Vector& s, Vector& st) {
  const std::size_t k = d.factors.size();
  const double nn = static_cast<double>(idx.size());
  double f0 = 0.0;
  for (auto r : idx) f0 += d.fA[r];
  f0 /= nn;
  double v = 0.0;
  for (auto r : idx) v += (d.fA[r] - f0) * (d.fA[r] - f0);
  v /= nn;
  if (!(v > 0.0)) return false;
  s.resize(static_cast<Eigen::Index>(k));
  st.resize(static_cast<Eigen::Index>(k));
  for (std::size_t i = 0; i < k; ++i) {
    double a = 0.0, b = 0.0;
    for (auto r : idx) {
      const double diff = d.fAB[i][r] - d.fA[r];
      a += d.fB[r] * diff;
      b += diff * diff;
    }
    s[static_cast<Eigen::Index>(i)] = a / nn / v;
    st[static_cast<Eigen::Index>(i)] = b / (2.0 * nn) / v;
  }
  return true;
}

double percentile(std::vector<double> xs, double q) {
  std::sort(xs.begin(), xs.end());
  const double pos = q * static_cast<double>(xs.size() - 1);
  const auto i = static_cast<std::size_t>(std::floor(pos));
  const std::size_t j = std::min(i + 1, xs.size() - 1);
  return xs[i] + (pos - static_cast<double>(i)) * (xs[j] - xs[i]);
}

}  // namespace

SensitivityResult estimate_indices(const SobolDesign& design) {
  SensitivityResult out;
  for (const auto& f : design.factors) out.names.push_back(f.name);
  out.n = design.rows();
  std::vector<Eigen::Index> idx(design.rows());
  for (std::size_t r = 0; r < idx.size(); ++r) idx[r] = static_cast<Eigen::Index>(r);
  if (!indices_on(design, idx, out.S, out.ST))
    throw DegenerateOutputError("estimate_indices: model output has zero variance");
  out.S_lo = out.S_hi = out.S;
  out.ST_lo = out.ST_hi = out.ST;
  return out;
}

SensitivityResult bootstrap_ci(const SobolDesign& design, std::size_t replicates, double level,
                               std::uint64_t seed) {
  if (replicates < 100) throw ArgumentError("bootstrap_ci: at least 100 replicates are needed");
  if (!(level > 0.0 && level < 1.0)) throw ArgumentError("bootstrap_ci: level must lie in (0, 1)");
  SensitivityResult out = estimate_indices(design);
  const std::size_t k = design.factors.size();
  const std::size_t n = design.rows();
  std::vector<std::vector<double>> s_reps(k), st_reps(k);
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<Eigen::Index> pick(0, static_cast<Eigen::Index>(n) - 1);
  std::vector<Eigen::Index> idx(n);
  Vector s, st;
  for (std::size_t b = 0; b < replicates; ++b) {
    for (auto& r : idx) r = pick(rng);
    if (!indices_on(design, idx, s, st)) {
      ++out.skipped_replicates;
      continue;
    }
    for (std::size_t i = 0; i < k; ++i) {
      s_reps[i].push_back(s[static_cast<Eigen::Index>(i)]);
      st_reps[i].push_back(st[static_cast<Eigen::Index>(i)]);
    }
  }
  out.replicates = replicates - out.skipped_replicates;
  if (out.replicates == 0) throw DegenerateOutputError("bootstrap_ci: every resample had zero variance");
  const double alpha = 0.5 * (1.0 - level);
  for (std::size_t i = 0; i < k; ++i) {
    const auto e = static_cast<Eigen::Index>(i);
    out.S_lo[e] = percentile(s_reps[i], alpha);
    out.S_hi[e] = percentile(s_reps[i], 1.0 - alpha);
    out.ST_lo[e] = percentile(st_reps[i], alpha);
    out.ST_hi[e] = percentile(st_reps[i], 1.0 - alpha);
  }
  return out;
}

double RobustnessTable::fraction_within() const {
  if (cases.empty()) return 0.0;
  std::size_t good = 0;
  for (const auto& c : cases) good += c.Y <= threshold ? 1 : 0;
  return static_cast<double>(good) / static_cast<double>(cases.size());
}

double RobustnessTable::mean_Y() const {
  if (cases.empty()) return 0.0;
  double s = 0.0;
  for (const auto& c : cases) s += c.Y;
  return s / static_cast<double>(cases.size());
}

double robustness_response(const FactorValues& f, const GolaConfig& gola_cfg, std::size_t jsd_samples,
                           std::uint64_t seed, std::string* status) {
  try {
    const MixtureModel truth = generate_test_gmm(f, derive_seed(seed, 0));
    const UnnormalizedTarget target = make_mixture_target(truth, test_gmm_box(truth));
    GolaConfig cfg = gola_cfg;
    cfg.master_seed = derive_seed(seed, 1);
    const GolaReport report = run_gola(target, cfg);
    const double y =
        jsd_normalized(as_density(truth), as_density(report.mixture), jsd_samples, derive_seed(seed, 2)).value;
    if (status) *status = "ok";
    return y;
  } catch (const Error& e) {
    if (status) *status = e.kind();
    return 1.0;
  }
}

RobustnessTable robustness_study(const FactorSpec& spec, std::size_t n_cases, const GolaConfig& gola_cfg,
                                 std::size_t jsd_samples, std::uint64_t seed, int workers) {
  spec.validate();
  gola_cfg.validate();
  RobustnessTable table;
  table.cases.resize(n_cases);
  GolaConfig cfg = gola_cfg;
  if (workers > 1) cfg.workers = 1;  // parallelism goes across cases instead
  parallel_for(n_cases, workers, [&](std::size_t i) {
    RobustnessCase& c = table.cases[i];
    c.index = i;
    c.factors = spec.sample(derive_seed(seed, 2 * i));
    c.Y = robustness_response(c.factors, cfg, jsd_samples, derive_seed(seed, 2 * i + 1), &c.status);
  });
  return table;
}

}  // namespace gola
