// Apache License, Version 2.0, refer to LICENSE.txt

#include "gola/io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

namespace gola {

namespace {

json vector_json(const Vector& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

Vector json_vector(const json& a, const std::string& what) {
  if (!a.is_array()) throw ArgumentError(what + " must be an array of numbers");
  Vector v(static_cast<Eigen::Index>(a.size()));
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!a[i].is_number()) throw ArgumentError(what + " must be an array of numbers");
    v[static_cast<Eigen::Index>(i)] = a[i].get<double>();
  }
  return v;
}

const json& field(const json& j, const char* key, const std::string& where) {
  if (!j.is_object() || !j.contains(key)) throw ArgumentError(where + ": missing \"" + key + "\"");
  return j.at(key);
}

}  // namespace

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

json mixture_to_json(const MixtureModel& m) {
  json j;
  j["dim"] = m.dim();
  j["weights"] = m.weights();
  json comps = json::array();
  for (const auto& c : m.components()) {
    json cj;
    cj["mean"] = vector_json(c.mean());
    json tri = json::array();
    const Matrix& l = c.chol_cov();
    for (Eigen::Index r = 0; r < l.rows(); ++r)
      for (Eigen::Index col = 0; col <= r; ++col) tri.push_back(l(r, col));
    cj["chol_cov_rowmajor_lower"] = tri;
    comps.push_back(cj);
  }
  j["components"] = comps;
  return j;
}

MixtureModel mixture_from_json(const json& j) {
  const std::string where = "mixture JSON";
  const json& dim_j = field(j, "dim", where);
  if (!dim_j.is_number_integer() || dim_j.get<long>() < 1) throw ArgumentError(where + ": \"dim\" must be a positive integer");
  const auto d = static_cast<Eigen::Index>(dim_j.get<long>());
  const Vector w = json_vector(field(j, "weights", where), where + " \"weights\"");
  const json& comps = field(j, "components", where);
  if (!comps.is_array() || comps.size() != static_cast<std::size_t>(w.size()) || comps.empty())
    throw ArgumentError(where + ": \"components\" must be a nonempty array matching \"weights\"");
  std::vector<GaussianComponent> out;
  for (const auto& cj : comps) {
    const Vector mean = json_vector(field(cj, "mean", where), where + " component \"mean\"");
    const Vector tri = json_vector(field(cj, "chol_cov_rowmajor_lower", where), where + " component factor");
    if (mean.size() != d || tri.size() != d * (d + 1) / 2)
      throw ArgumentError(where + ": component sizes do not match \"dim\"");
    Matrix l = Matrix::Zero(d, d);
    Eigen::Index pos = 0;
    for (Eigen::Index r = 0; r < d; ++r)
      for (Eigen::Index c = 0; c <= r; ++c) l(r, c) = tri[pos++];
    try {
      out.emplace_back(mean, l);
    } catch (const ConstructionError& e) {
      throw ArgumentError(where + ": " + e.what());
    }
  }
  try {
    return MixtureModel(std::move(out), std::vector<double>(w.data(), w.data() + w.size()));
  } catch (const ConstructionError& e) {
    throw ArgumentError(where + ": " + e.what());
  }
}

json gola_report_to_json(const GolaReport& r) {
  json j;
  j["mixture"] = mixture_to_json(r.mixture);
  j["evidence"] = r.evidence;
  j["log_evidence"] = r.log_evidence;
  j["weight_residual"] = r.weight_residual;
  j["n_weight_samples"] = r.n_weight_samples;
  j["stats"] = {{"n_starts", r.stats.n_starts},
                {"n_rejected_starts", r.stats.n_rejected_starts},
                {"n_unconverged", r.stats.n_unconverged},
                {"n_non_minima", r.stats.n_non_minima}};
  json minima = json::array();
  for (const auto& m : r.raw_minima)
    minima.push_back({{"location", vector_json(m.location)},
                      {"objective", m.objective},
                      {"gradient_norm", m.gradient_norm},
                      {"converged", m.converged},
                      {"start_index", m.start_index},
                      {"iterations", m.iterations}});
  j["raw_minima"] = minima;
  json dedup = json::array();
  for (const auto& d : r.dedup_log)
    dedup.push_back({{"candidate", d.candidate},
                     {"min_p_value", d.min_p_value},
                     {"max_p_value", d.max_p_value},
                     {"accepted", d.accepted}});
  j["dedup_log"] = dedup;
  return j;
}

json divergence_to_json(const DivergenceEstimate& e) {
  return {{"value", e.value}, {"std_error", e.std_error}, {"n_samples", e.n_samples},
          {"support_violations", e.support_violations}};
}

json gola_config_to_json(const GolaConfig& c) {
  return {{"n_starts", c.n_starts},
          {"max_local_iters", c.max_local_iters},
          {"gradient_tol", c.gradient_tol},
          {"dedup_threshold", c.dedup_threshold},
          {"n_weight_samples", c.n_weight_samples},
          {"quasi_newton", c.quasi_newton}};
}

json vi_config_to_json(const ViConfig& c) {
  return {{"n_mc_samples", c.n_mc_samples},   {"step_size", c.step_size},
          {"beta1", c.beta1},                 {"beta2", c.beta2},
          {"max_epochs", c.max_epochs},       {"steps_per_epoch", c.steps_per_epoch},
          {"report_interval", c.report_interval}, {"n_elbo_samples", c.n_elbo_samples},
          {"jsd_samples", c.jsd_samples},     {"baseline", c.baseline}};
}

std::string vi_trace_csv(const ViTrace& t) {
  std::ostringstream os;
  os << "epoch,elapsed_seconds,neg_elbo,jsd\n";
  for (const auto& r : t.records)
    os << r.epoch << ',' << format_double(r.elapsed_seconds) << ',' << format_double(r.neg_elbo) << ','
       << (r.jsd ? format_double(*r.jsd) : "") << '\n';
  return os.str();
}

std::string robustness_csv(const RobustnessTable& t) {
  std::ostringstream os;
  os << "case,d,M,omega,c,lambda,Y,status\n";
  for (const auto& c : t.cases)
    os << c.index << ',' << c.factors.d << ',' << c.factors.M << ',' << format_double(c.factors.omega) << ','
       << format_double(c.factors.c) << ',' << format_double(c.factors.lambda) << ',' << format_double(c.Y) << ','
       << c.status << '\n';
  return os.str();
}

std::string sensitivity_csv(const SensitivityResult& r) {
  std::ostringstream os;
  os << "factor,S,S_lo,S_hi,ST,ST_lo,ST_hi\n";
  for (std::size_t i = 0; i < r.names.size(); ++i) {
    const auto e = static_cast<Eigen::Index>(i);
    os << r.names[i] << ',' << format_double(r.S[e]) << ',' << format_double(r.S_lo[e]) << ','
       << format_double(r.S_hi[e]) << ',' << format_double(r.ST[e]) << ',' << format_double(r.ST_lo[e]) << ','
       << format_double(r.ST_hi[e]) << '\n';
  }
  return os.str();
}

std::string pushforward_csv(const PushforwardSummary& p) {
  std::ostringstream os;
  os << "time,floor,mean,lo95,hi95\n";
  for (std::size_t t = 0; t < p.times.size(); ++t)
    for (Eigen::Index f = 0; f < 2; ++f) {
      const auto r = static_cast<Eigen::Index>(t);
      os << format_double(p.times[t]) << ',' << f + 1 << ',' << format_double(p.mean(r, f)) << ','
         << format_double(p.lo95(r, f)) << ',' << format_double(p.hi95(r, f)) << '\n';
    }
  return os.str();
}

std::string observations_csv(const ObservationSet& o) {
  std::ostringstream os;
  os << "t,y\n";
  for (std::size_t i = 0; i < o.times.size(); ++i)
    os << format_double(o.times[i]) << ',' << format_double(o.values[static_cast<Eigen::Index>(i)]) << '\n';
  return os.str();
}

json observations_sidecar(const ObservationSet& o, const ShearFrame& constants) {
  return {{"sigma", o.sigma},
          {"u0", vector_json(o.u0)},
          {"observed_index", o.observed_index},
          {"n_obs", o.times.size()},
          {"constants",
           {{"m1", constants.m1}, {"m2", constants.m2}, {"k1", constants.k1}, {"k2", constants.k2}}},
          {"true_damping", {constants.c1, constants.c2}}};
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ArgumentError("cannot read " + path);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ArgumentError("cannot write " + path);
  out << text;
  if (!out) throw ArgumentError("failed writing " + path);
}

json read_json_file(const std::string& path) {
  const std::string text = read_text_file(path);
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    // Translate the byte offset into a line number.
    const std::size_t upto = std::min<std::size_t>(e.byte, text.size());
    const auto line = 1 + std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(upto), '\n');
    throw ConfigError(path + ": parse error at line " + std::to_string(line) + ": " + e.what());
  }
}

void write_json_file(const std::string& path, const json& j) { write_text_file(path, j.dump(2) + "\n"); }

MixtureModel read_mixture_file(const std::string& path) {
  try {
    return mixture_from_json(read_json_file(path));
  } catch (const ArgumentError& e) {
    throw ArgumentError(path + ": " + e.what());
  }
}

}  // namespace gola
