// Apache License, Version 2.0, refer to LICENSE.txt

#include "gola/cli.hpp"

#include "CLI11.hpp"

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>

#ifndef GOLA_VERSION
#define GOLA_VERSION "0.0.0"
#endif

namespace gola {

namespace fs = std::filesystem;

json default_config() {
  const FactorSpec f = FactorSpec::standard();
  const ExemplarScenario e;
  json j;
  j["command"] = "";
  j["seed"] = 0;
  j["out"] = "gola_out";
  j["workers"] = 1;
  j["reference"] = "";
  j["target"] = {{"builtin", "gauss2d"},
                 {"mixture", ""},
                 {"box_lower", json::array()},
                 {"box_upper", json::array()},
                 {"scale", 1.0}};
  j["gola"] = gola_config_to_json(GolaConfig{});
  j["vi"] = vi_config_to_json(ViConfig{});
  j["vi"]["init"] = "gola";
  j["vi"]["components"] = 2;
  j["factors"] = {{"preset", ""},
                  {"d", {f.d.lo, f.d.hi}},
                  {"M", {f.M.lo, f.M.hi}},
                  {"omega", {f.omega.lo, f.omega.hi}},
                  {"c", {f.c.lo, f.c.hi}},
                  {"lambda", {f.lambda.lo, f.lambda.hi}}};
  j["robustness"] = {{"n_cases", 100}, {"jsd_samples", 4000}};
  j["sensitivity"] = {{"n", 64}, {"bootstrap", 1000}, {"jsd_samples", 2000}};
  j["exemplar"] = {{"m1", e.truth.m1},
                   {"m2", e.truth.m2},
                   {"k1", e.truth.k1},
                   {"k2", e.truth.k2},
                   {"c1", e.truth.c1},
                   {"c2", e.truth.c2},
                   {"u0", {e.u0[0], e.u0[1], e.u0[2], e.u0[3]}},
                   {"horizon", e.horizon},
                   {"n_obs", e.n_obs},
                   {"sigma", e.sigma},
                   {"box_lower", {e.box.lower[0], e.box.lower[1]}},
                   {"box_upper", {e.box.upper[0], e.box.upper[1]}},
                   {"data_seed", e.data_seed},
                   {"pushforward_samples", 2000},
                   {"pushforward_dt", 0.5},
                   {"grid", 512}};
  j["eval"] = {{"p", ""}, {"q", ""}, {"n", 10000}};
  j["generate"] = {{"d", 2}, {"M", 2}, {"omega", 1.0}, {"c", 0.0}, {"lambda", 1e-3}};
  return j;
}

namespace {

std::size_t edit_distance(const std::string& a, const std::string& b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j)
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1)});
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

[[noreturn]] void unknown_key(const std::string& path, const std::string& key, const json& siblings) {
  std::string best;
  std::size_t best_d = std::string::npos;
  for (const auto& [k, _] : siblings.items()) {
    const std::size_t d = edit_distance(key, k);
    if (d < best_d) best_d = d, best = k;
  }
  std::string msg = "unknown config key \"" + path + key + "\"";
  if (!best.empty() && best_d <= std::max<std::size_t>(2, key.size() / 3))
    msg += "; did you mean \"" + path + best + "\"?";
  throw ConfigError(msg);
}

bool compatible(const json& value, const json& def) {
  if (def.is_number_integer()) return value.is_number_integer();
  if (def.is_number()) return value.is_number();
  if (def.is_array()) return value.is_array();
  return value.type() == def.type();
}

std::string type_name(const json& def) {
  if (def.is_number_integer()) return "an integer";
  if (def.is_number()) return "a number";
  if (def.is_boolean()) return "a boolean";
  if (def.is_array()) return "an array";
  if (def.is_string()) return "a string";
  return "an object";
}

void check_tree(const json& user, const json& defaults, const std::string& path) {
  if (!user.is_object()) throw ConfigError("config section \"" + path + "\" must be an object");
  for (const auto& [key, value] : user.items()) {
    if (!defaults.contains(key)) unknown_key(path, key, defaults);
    const json& def = defaults.at(key);
    if (def.is_object()) {
      check_tree(value, def, path + key + ".");
    } else if (!compatible(value, def)) {
      throw ConfigError("config key \"" + path + key + "\" must be " + type_name(def));
    }
  }
}

void merge_into(json& base, const json& patch) {
  for (const auto& [key, value] : patch.items()) {
    if (value.is_object() && base.contains(key) && base[key].is_object())
      merge_into(base[key], value);
    else
      base[key] = value;
  }
}

const json* find_path(const json& root, const std::vector<std::string>& parts) {
  const json* node = &root;
  for (const auto& p : parts) {
    if (!node->is_object() || !node->contains(p)) return nullptr;
    node = &node->at(p);
  }
  return node;
}

std::vector<std::string> split_path(const std::string& s) {
  std::vector<std::string> parts;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, '.')) parts.push_back(item);
  return parts;
}

bool user_has(const json& user, const std::string& section, const std::string& key) {
  return user.contains(section) && user[section].is_object() && user[section].contains(key);
}

std::pair<double, double> pair_of(const json& a, const std::string& key) {
  if (!a.is_array() || a.size() != 2 || !a[0].is_number() || !a[1].is_number())
    throw ConfigError("config key \"factors." + key + "\" must be a [lo, hi] pair of numbers");
  return {a[0].get<double>(), a[1].get<double>()};
}

Vector vector_of(const json& a, const std::string& key) {
  Vector v(static_cast<Eigen::Index>(a.size()));
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!a[i].is_number()) throw ConfigError("config key \"" + key + "\" must be an array of numbers");
    v[static_cast<Eigen::Index>(i)] = a[i].get<double>();
  }
  return v;
}

void apply_gola(GolaConfig& c, const json& s) {
  if (s.contains("n_starts")) c.n_starts = s["n_starts"].get<std::size_t>();
  if (s.contains("max_local_iters")) c.max_local_iters = s["max_local_iters"].get<int>();
  if (s.contains("gradient_tol")) c.gradient_tol = s["gradient_tol"].get<double>();
  if (s.contains("dedup_threshold")) c.dedup_threshold = s["dedup_threshold"].get<double>();
  if (s.contains("n_weight_samples")) c.n_weight_samples = s["n_weight_samples"].get<std::size_t>();
  if (s.contains("quasi_newton")) c.quasi_newton = s["quasi_newton"].get<bool>();
}

ViConfig vi_from(const json& s) {
  ViConfig c;
  c.n_mc_samples = s["n_mc_samples"].get<std::size_t>();
  c.step_size = s["step_size"].get<double>();
  c.beta1 = s["beta1"].get<double>();
  c.beta2 = s["beta2"].get<double>();
  c.max_epochs = s["max_epochs"].get<int>();
  c.steps_per_epoch = s["steps_per_epoch"].get<int>();
  c.report_interval = s["report_interval"].get<int>();
  c.n_elbo_samples = s["n_elbo_samples"].get<std::size_t>();
  c.jsd_samples = s["jsd_samples"].get<std::size_t>();
  c.baseline = s["baseline"].get<bool>();
  return c;
}

FactorSpec factors_from(const json& eff, const json& user) {
  const std::string preset = eff["factors"]["preset"].get<std::string>();
  FactorSpec spec;
  if (preset == "hard")
    spec = FactorSpec::hard();
  else if (preset.empty() || preset == "standard")
    spec = FactorSpec::standard();
  else
    throw ConfigError("factors.preset must be \"standard\", \"hard\" or empty");
  // Ranges the user set explicitly refine the preset.
  auto take = [&](const std::string& key, auto setter) {
    if (preset.empty() || user_has(user, "factors", key)) setter(pair_of(eff["factors"][key], key));
  };
  take("d", [&](auto p) { spec.d = {static_cast<int>(p.first), static_cast<int>(p.second)}; });
  take("M", [&](auto p) { spec.M = {static_cast<int>(p.first), static_cast<int>(p.second)}; });
  take("omega", [&](auto p) { spec.omega = {p.first, p.second}; });
  take("c", [&](auto p) { spec.c = {p.first, p.second}; });
  take("lambda", [&](auto p) { spec.lambda = {p.first, p.second}; });
  spec.validate();
  return spec;
}

ExemplarScenario scenario_from(const json& e) {
  ExemplarScenario sc;
  sc.truth = {e["m1"].get<double>(), e["m2"].get<double>(), e["k1"].get<double>(),
              e["k2"].get<double>(), e["c1"].get<double>(), e["c2"].get<double>()};
  sc.truth.validate();
  sc.u0 = vector_of(e["u0"], "exemplar.u0");
  if (sc.u0.size() != 4) throw ConfigError("exemplar.u0 must have 4 entries");
  sc.horizon = e["horizon"].get<double>();
  sc.n_obs = e["n_obs"].get<std::size_t>();
  sc.sigma = e["sigma"].get<double>();
  sc.box = Box{vector_of(e["box_lower"], "exemplar.box_lower"), vector_of(e["box_upper"], "exemplar.box_upper")};
  if (sc.box.dim() != 2 || sc.box.upper.size() != 2) throw ConfigError("exemplar box must be 2-D");
  sc.data_seed = e["data_seed"].get<std::uint64_t>();
  if (!(sc.horizon > 0.0) || sc.n_obs < 2 || !(sc.sigma > 0.0))
    throw ConfigError("exemplar needs horizon > 0, n_obs >= 2 and sigma > 0");
  return sc;
}

void require_file(const std::string& path, const std::string& key) {
  if (!path.empty() && !fs::exists(path)) throw ConfigError("config key \"" + key + "\": file not found: " + path);
}

// Validates everything that does not require running a module.
void validate_effective(const RunConfig& cfg) {
  const json& e = cfg.effective;
  GolaConfig g;
  apply_gola(g, e["gola"]);
  g.validate();
  vi_from(e["vi"]).validate();
  factors_from(e, cfg.user);
  scenario_from(e["exemplar"]);
  if (cfg.workers < 1) throw ConfigError("workers must be at least 1");
  const auto boot = e["sensitivity"]["bootstrap"].get<std::size_t>();
  if (boot != 0 && boot < 100) throw ConfigError("sensitivity.bootstrap must be 0 (no intervals) or at least 100");
  if (e["sensitivity"]["n"].get<std::size_t>() < 2) throw ConfigError("sensitivity.n must be at least 2");
  if (e["vi"]["components"].get<int>() < 1) throw ConfigError("vi.components must be at least 1");
  require_file(e["target"]["mixture"].get<std::string>(), "target.mixture");
  require_file(e["reference"].get<std::string>(), "reference");
  require_file(e["eval"]["p"].get<std::string>(), "eval.p");
  require_file(e["eval"]["q"].get<std::string>(), "eval.q");
  const std::string init = e["vi"]["init"].get<std::string>();
  if (init != "gola" && init != "cold") require_file(init, "vi.init");
  if (cfg.command == "eval" && (e["eval"]["p"].get<std::string>().empty() || e["eval"]["q"].get<std::string>().empty()))
    throw ConfigError("eval needs eval.p and eval.q mixture files");
  if (user_has(cfg.user, "target", "mixture") && user_has(cfg.user, "target", "builtin"))
    throw ConfigError("set either target.builtin or target.mixture, not both");
}

}  // namespace

RunConfig parse_config(const json& file, const std::vector<std::pair<std::string, std::string>>& flags,
                       const std::string& command_override) {
  const json defaults = default_config();
  if (!file.is_null()) check_tree(file, defaults, "");

  RunConfig cfg;
  cfg.user = file.is_null() ? json::object() : file;
  bool out_flag = false;
  for (const auto& [path, raw] : flags) {
    const auto parts = split_path(path);
    json* def_parent = nullptr;
    json defaults_copy = defaults;
    const json* node = &defaults_copy;
    std::string prefix;
    for (std::size_t i = 0; i < parts.size(); ++i) {
      if (!node->is_object() || !node->contains(parts[i])) unknown_key(prefix, parts[i], *node);
      node = &node->at(parts[i]);
      if (i + 1 < parts.size()) prefix += parts[i] + ".";
    }
    (void)def_parent;
    if (node->is_object()) throw ConfigError("flag --" + path + " names a section, not a key");
    json value;
    if (node->is_string()) {
      value = raw;
    } else {
      try {
        value = json::parse(raw);
      } catch (const json::parse_error&) {
        throw ConfigError("flag --" + path + ": cannot parse value \"" + raw + "\"");
      }
      if (!compatible(value, *node)) throw ConfigError("flag --" + path + " must be " + type_name(*node));
    }
    if (const json* old = find_path(cfg.user, parts); old && *old != value)
      cfg.notices.push_back("flag --" + path + "=" + raw + " overrides config value " + old->dump());
    json* target = &cfg.user;
    for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
      if (!target->contains(parts[i])) (*target)[parts[i]] = json::object();
      target = &(*target)[parts[i]];
    }
    (*target)[parts.back()] = value;
    if (path == "out") out_flag = true;
  }

  if (const char* env = std::getenv(kOutDirEnv); env && *env && !out_flag) {
    if (cfg.user.contains("out")) cfg.notices.push_back(std::string(kOutDirEnv) + " overrides config value out=" + cfg.user["out"].dump());
    cfg.user["out"] = std::string(env);
  }

  cfg.effective = defaults;
  merge_into(cfg.effective, cfg.user);
  cfg.command = command_override.empty() ? cfg.effective["command"].get<std::string>() : command_override;
  if (!command_override.empty() && cfg.user.contains("command") && cfg.user["command"] != command_override)
    cfg.notices.push_back("command line command \"" + command_override + "\" overrides config value " +
                          cfg.user["command"].dump());
  if (std::find(kCommands.begin(), kCommands.end(), cfg.command) == kCommands.end()) {
    std::string list;
    for (const auto& c : kCommands) list += (list.empty() ? "" : ", ") + c;
    throw ConfigError("missing or unknown command \"" + cfg.command + "\"; expected one of " + list);
  }
  cfg.effective["command"] = cfg.command;
  cfg.seed = cfg.effective["seed"].get<std::uint64_t>();
  cfg.out_dir = cfg.effective["out"].get<std::string>();
  cfg.workers = cfg.effective["workers"].get<int>();
  try {
    validate_effective(cfg);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("invalid config value: ") + e.what());
  }
  return cfg;
}

namespace {

struct BuiltTarget {
  UnnormalizedTarget target;
  std::optional<MixtureModel> truth;
};

MixtureModel builtin_gauss2d() {
  Matrix cov(2, 2);
  cov << 1.0, 0.3, 0.3, 0.5;
  return MixtureModel({GaussianComponent::from_covariance((Vector(2) << 1.0, -0.5).finished(), cov)}, {1.0});
}

MixtureModel builtin_bimodal2d() {
  Matrix c2(2, 2);
  c2 << 0.6, 0.2, 0.2, 0.4;
  return MixtureModel({GaussianComponent::from_covariance((Vector(2) << -2.0, 0.0).finished(),
                                                          0.5 * Matrix::Identity(2, 2)),
                       GaussianComponent::from_covariance((Vector(2) << 2.0, 1.0).finished(), c2)},
                      {0.4, 0.6});
}

BuiltTarget build_target(const RunConfig& cfg) {
  const json& t = cfg.effective["target"];
  const double scale = t["scale"].get<double>();
  if (!(scale > 0.0)) throw ConfigError("target.scale must be positive");
  std::optional<Box> box;
  if (!t["box_lower"].empty() || !t["box_upper"].empty()) {
    box = Box{vector_of(t["box_lower"], "target.box_lower"), vector_of(t["box_upper"], "target.box_upper")};
    if (box->lower.size() != box->upper.size()) throw ConfigError("target box bounds differ in length");
  }
  const std::string path = t["mixture"].get<std::string>();
  const std::string name = t["builtin"].get<std::string>();
  MixtureModel truth = path.empty() ? builtin_gauss2d() : read_mixture_file(path);
  Box fallback = Box{Vector::Constant(2, -10.0), Vector::Constant(2, 10.0)};
  if (path.empty()) {
    if (name == "exemplar") {
      const ExemplarScenario sc = scenario_from(cfg.effective["exemplar"]);
      return {damping_log_likelihood(sc.observations(), sc.truth, box.value_or(sc.box)), std::nullopt};
    }
    if (name == "bimodal2d") {
      truth = builtin_bimodal2d();
      fallback = Box{Vector::Constant(2, -8.0), Vector::Constant(2, 8.0)};
    } else if (name != "gauss2d") {
      throw ConfigError("unknown target.builtin \"" + name + "\"; expected gauss2d, bimodal2d or exemplar");
    }
  } else {
    fallback = test_gmm_box(truth);
  }
  const Box b = box.value_or(fallback);
  if (b.dim() != truth.dim()) throw ConfigError("target box dimension does not match the target");
  return {make_mixture_target(truth, b, scale), truth};
}

GolaConfig gola_for(const RunConfig& cfg, GolaConfig base, bool only_user_keys) {
  apply_gola(base, only_user_keys ? (cfg.user.contains("gola") ? cfg.user["gola"] : json::object())
                                  : cfg.effective["gola"]);
  base.master_seed = cfg.seed;
  base.workers = cfg.workers;
  base.validate();
  return base;
}

std::string iso_utc_now() {
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::vector<double> time_grid(double horizon, double dt) {
  if (!(dt > 0.0)) throw ConfigError("exemplar.pushforward_dt must be positive");
  std::vector<double> t;
  const auto n = static_cast<long>(std::floor(horizon / dt + 1e-9));
  for (long i = 0; i <= n; ++i) t.push_back(static_cast<double>(i) * dt);
  return t;
}

class Runner {
 public:
  Runner(const RunConfig& cfg, std::ostream& out) : cfg_(cfg), out_(out) {}

  json execute() {
    const std::string& c = cfg_.command;
    if (c == "fit") return fit();
    if (c == "refine") return refine_cmd();
    if (c == "eval") return eval();
    if (c == "robustness") return robustness();
    if (c == "sensitivity") return sensitivity();
    if (c == "exemplar") return exemplar();
    return generate();
  }

  const std::vector<std::string>& artifacts() const { return artifacts_; }

 private:
  std::string path(const std::string& name) { return (fs::path(cfg_.out_dir) / name).string(); }

  void emit_json(const std::string& name, const json& j) {
    write_json_file(path(name), j);
    artifacts_.push_back(name);
  }

  void emit_text(const std::string& name, const std::string& text) {
    write_text_file(path(name), text);
    artifacts_.push_back(name);
  }

  json fit() {
    const BuiltTarget t = build_target(cfg_);
    const GolaReport r = run_gola(t.target, gola_for(cfg_, GolaConfig{}, false));
    emit_json("mixture.json", mixture_to_json(r.mixture));
    emit_json("report.json", gola_report_to_json(r));
    return {{"components", r.mixture.size()}, {"log_evidence", r.log_evidence}};
  }

  json refine_cmd() {
    const BuiltTarget t = build_target(cfg_);
    const json& v = cfg_.effective["vi"];
    ViConfig vc = vi_from(v);
    vc.seed = derive_seed(cfg_.seed, 2);
    vc.workers = cfg_.workers;
    const std::string init_kind = v["init"].get<std::string>();
    std::optional<MixtureModel> init;
    if (init_kind == "gola") {
      const GolaReport r = run_gola(t.target, gola_for(cfg_, GolaConfig{}, false));
      emit_json("report.json", gola_report_to_json(r));
      init = r.mixture;
    } else if (init_kind == "cold") {
      init = random_cold_start(t.target.dim(), v["components"].get<std::size_t>(), t.target.search_box(),
                               derive_seed(cfg_.seed, 3));
    } else {
      init = read_mixture_file(init_kind);
    }
    emit_json("init_mixture.json", mixture_to_json(*init));
    std::optional<Density> reference;
    if (const std::string ref = cfg_.effective["reference"].get<std::string>(); !ref.empty())
      reference = as_density(read_mixture_file(ref));
    const ViResult res = refine(*init, t.target, vc, reference);
    emit_json("mixture.json", mixture_to_json(res.mixture));
    emit_text("vi_trace.csv", vi_trace_csv(res.trace));
    return {{"best_neg_elbo", res.best_neg_elbo},
            {"best_epoch", res.best_epoch},
            {"diverged", res.trace.diverged},
            {"penalized_samples", res.trace.penalized_samples}};
  }

  json eval() {
    const json& e = cfg_.effective["eval"];
    const MixtureModel p = read_mixture_file(e["p"].get<std::string>());
    const MixtureModel q = read_mixture_file(e["q"].get<std::string>());
    if (p.dim() != q.dim()) throw ArgumentError("eval: mixtures differ in dimension");
    const std::size_t n = e["n"].get<std::size_t>();
    const DivergenceEstimate est = jsd_normalized(as_density(p), as_density(q), n, cfg_.seed);
    const json doc = {{"jsd", est.value}, {"std_error", est.std_error}, {"n", est.n_samples}};
    out_ << doc.dump() << "\n";
    emit_json("eval.json", doc);
    return doc;
  }

  json robustness() {
    const FactorSpec spec = factors_from(cfg_.effective, cfg_.user);
    const json& r = cfg_.effective["robustness"];
    GolaConfig g = gola_for(cfg_, GolaConfig{}, false);
    const RobustnessTable table = robustness_study(spec, r["n_cases"].get<std::size_t>(), g,
                                                   r["jsd_samples"].get<std::size_t>(), cfg_.seed, cfg_.workers);
    emit_text("robustness.csv", robustness_csv(table));
    return {{"threshold", table.threshold},
            {"fraction_within", table.fraction_within()},
            {"mean_Y", table.mean_Y()},
            {"n_cases", table.cases.size()}};
  }

  json sensitivity() {
    const FactorSpec spec = factors_from(cfg_.effective, cfg_.user);
    const json& s = cfg_.effective["sensitivity"];
    GolaConfig g = gola_for(cfg_, GolaConfig{}, false);
    g.workers = 1;
    const std::size_t jsd_samples = s["jsd_samples"].get<std::size_t>();
    const SobolDesign design = sobol_design(
        spec, s["n"].get<std::size_t>(), cfg_.seed,
        [&](const Vector& x, std::uint64_t seed) {
          return robustness_response(FactorValues::from_vector(x), g, jsd_samples, seed);
        },
        cfg_.workers);
    const std::size_t boot = s["bootstrap"].get<std::size_t>();
    const SensitivityResult res =
        boot == 0 ? estimate_indices(design) : bootstrap_ci(design, boot, 0.95, derive_seed(cfg_.seed, 7));
    emit_text("sensitivity.csv", sensitivity_csv(res));
    return {{"n", res.n},
            {"evaluations", design.evaluations()},
            {"replicates", res.replicates},
            {"skipped_replicates", res.skipped_replicates},
            {"resampled_rows", design.resampled_rows.size()}};
  }

  json exemplar() {
    const json& e = cfg_.effective["exemplar"];
    const ExemplarScenario sc = scenario_from(e);
    const ObservationSet obs = sc.observations();
    emit_text("observations.csv", observations_csv(obs));
    emit_json("observations.json", observations_sidecar(obs, sc.truth));
    const UnnormalizedTarget target = damping_log_likelihood(obs, sc.truth, sc.box);
    const GolaReport r = run_gola(target, gola_for(cfg_, sc.gola_config(), true));
    emit_json("mixture.json", mixture_to_json(r.mixture));
    emit_json("report.json", gola_report_to_json(r));
    const auto times = time_grid(sc.horizon, e["pushforward_dt"].get<double>());
    const std::size_t n = e["pushforward_samples"].get<std::size_t>();
    const PushforwardSummary pf = pushforward(r.mixture, sc.truth, sc.u0, times, n, derive_seed(cfg_.seed, 4), cfg_.workers);
    emit_text("pushforward.csv", pushforward_csv(pf));
    json summary = {{"components", r.mixture.size()},
                    {"pushforward_rejected", pf.n_rejected},
                    {"pushforward_high_rejection", pf.high_rejection}};
    if (const int grid = e["grid"].get<int>(); grid > 0) {
      const GridPosterior gp(target, sc.box, grid);
      const DivergenceEstimate jsd =
          jsd_normalized(gp.density(), as_density(r.mixture), 20000, derive_seed(cfg_.seed, 5));
      const PushforwardSummary pg = pushforward(gp.density(), sc.truth, sc.u0, times, n, derive_seed(cfg_.seed, 6),
                                                cfg_.workers);
      emit_text("pushforward_grid.csv", pushforward_csv(pg));
      summary["grid_jsd"] = divergence_to_json(jsd);
    }
    return summary;
  }

  json generate() {
    const json& g = cfg_.effective["generate"];
    const FactorValues f{g["d"].get<int>(), g["M"].get<int>(), g["omega"].get<double>(), g["c"].get<double>(),
                         g["lambda"].get<double>()};
    const MixtureModel m = generate_test_gmm(f, cfg_.seed);
    emit_json("mixture.json", mixture_to_json(m));
    return {{"max_pairwise_overlap", max_pairwise_overlap(m)}};
  }

  const RunConfig& cfg_;
  std::ostream& out_;
  std::vector<std::string> artifacts_;
};

json error_document(const std::string& kind, const std::string& message, const std::string& command) {
  return {{"error", kind}, {"message", message}, {"command", command}};
}

}  // namespace

int run(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  const auto start = std::chrono::steady_clock::now();
  const std::string started = iso_utc_now();
  for (const auto& n : cfg.notices) err << "notice: " << n << "\n";
  json doc;
  try {
    fs::create_directories(cfg.out_dir);
    Runner runner(cfg, out);
    const json summary = runner.execute();
    json manifest;
    manifest["command"] = cfg.command;
    manifest["seed"] = cfg.seed;
    manifest["config"] = cfg.effective;
    manifest["notices"] = cfg.notices;
    manifest["versions"] = {{"gola", GOLA_VERSION},
                            {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) +
                                          "." + std::to_string(EIGEN_MINOR_VERSION)},
                            {"compiler", __VERSION__}};
    manifest["started_at"] = started;
    manifest["wall_clock_seconds"] =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    manifest["artifacts"] = runner.artifacts();
    manifest["summary"] = summary;
    write_json_file((fs::path(cfg.out_dir) / "manifest.json").string(), manifest);
    return 0;
  } catch (const Error& e) {
    doc = error_document(e.kind(), e.what(), cfg.command);
  } catch (const std::exception& e) {
    doc = error_document("internal", e.what(), cfg.command);
  }
  err << doc.dump() << "\n";
  try {
    fs::create_directories(cfg.out_dir);
    write_json_file((fs::path(cfg.out_dir) / "error.json").string(), doc);
  } catch (const std::exception&) {
    // The error document already went to the error stream.
  }
  return 1;
}

int cli_main(int argc, char** argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Gaussian-mixture posterior approximation by global optimization and Laplace approximation"};
  std::string command, config_path;
  app.add_option("command", command, "fit, refine, eval, robustness, sensitivity, exemplar or generate");
  app.add_option("--config", config_path, "JSON config file");

  // Every config leaf is also a flag; the common ones get short names.
  std::vector<std::pair<std::string, std::string>> leaf_values;
  std::vector<std::pair<std::string, CLI::Option*>> leaf_options;
  std::vector<std::string> storage;
  const json defaults = default_config();
  std::vector<std::string> leaves;
  for (const auto& [key, value] : defaults.items()) {
    if (key == "command") continue;
    if (value.is_object())
      for (const auto& [sub, _] : value.items()) leaves.push_back(key + "." + sub);
    else
      leaves.push_back(key);
  }
  storage.resize(leaves.size());
  for (std::size_t i = 0; i < leaves.size(); ++i)
    leaf_options.emplace_back(leaves[i], app.add_option("--" + leaves[i], storage[i], "config key " + leaves[i]));

  std::string cmd_for_errors;
  try {
    app.parse(argc, argv);
    cmd_for_errors = command;
    json file;
    if (!config_path.empty()) {
      if (!fs::exists(config_path)) throw ConfigError("config file not found: " + config_path);
      file = read_json_file(config_path);
    }
    for (std::size_t i = 0; i < leaf_options.size(); ++i)
      if (leaf_options[i].second->count() > 0) leaf_values.emplace_back(leaf_options[i].first, storage[i]);
    const RunConfig cfg = parse_config(file, leaf_values, command);
    return run(cfg, out, err);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << error_document("config", e.what(), cmd_for_errors).dump() << "\n";
    return 2;
  } catch (const Error& e) {
    err << error_document(e.kind(), e.what(), cmd_for_errors).dump() << "\n";
    return 2;
  }
}

}  // namespace gola
