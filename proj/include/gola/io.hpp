// Apache License, Version 2.0, refer to LICENSE.txt

#ifndef GOLA_IO_HPP
#define GOLA_IO_HPP

#include "gola/density.hpp"
#include "gola/exemplar.hpp"
#include "gola/metrics.hpp"
#include "gola/pipeline.hpp"
#include "gola/sensibench.hpp"
#include "gola/vi.hpp"

#include "json.hpp"

#include <string>

namespace gola {

using json = nlohmann::ordered_json;

// Mixture document:
//   {"dim": d, "weights": [...],
//    "components": [{"mean": [...], "chol_cov_rowmajor_lower": [...]}]}
// The factor is stored as its d(d+1)/2 lower-triangle entries row by row.
json mixture_to_json(const MixtureModel& m);
MixtureModel mixture_from_json(const json& j);  // throws ArgumentError

json gola_report_to_json(const GolaReport& r);
json divergence_to_json(const DivergenceEstimate& e);
json gola_config_to_json(const GolaConfig& c);
json vi_config_to_json(const ViConfig& c);

std::string vi_trace_csv(const ViTrace& t);                   // epoch,elapsed_seconds,neg_elbo,jsd
std::string robustness_csv(const RobustnessTable& t);         // case,d,M,omega,c,lambda,Y,status
std::string sensitivity_csv(const SensitivityResult& r);      // factor,S,S_lo,S_hi,ST,ST_lo,ST_hi
std::string pushforward_csv(const PushforwardSummary& p);     // time,floor,mean,lo95,hi95
std::string observations_csv(const ObservationSet& o);        // t,y
json observations_sidecar(const ObservationSet& o, const ShearFrame& constants);

/// Shortest decimal text that reads back to the same double.
std::string format_double(double v);

std::string read_text_file(const std::string& path);  // throws ArgumentError
void write_text_file(const std::string& path, const std::string& text);
json read_json_file(const std::string& path);  // throws ConfigError with position on parse failure
void write_json_file(const std::string& path, const json& j);
MixtureModel read_mixture_file(const std::string& path);

}  // namespace gola

#endif  // GOLA_IO_HPP
