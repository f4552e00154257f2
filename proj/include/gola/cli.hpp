// Apache License, Version 2.0, refer to LICENSE.txt

#ifndef GOLA_CLI_HPP
#define GOLA_CLI_HPP

#include "gola/io.hpp"

#include <iosfwd>
#include <string>
#include <vector>

namespace gola {

inline constexpr const char* kOutDirEnv = "GOLA_OUT_DIR";
inline const std::vector<std::string> kCommands = {"fit",         "refine",   "eval",    "robustness",
                                                   "sensitivity", "exemplar", "generate"};

/// Every accepted configuration key with its default value. Config files and
/// flags may only use keys present here.
json default_config();

// Fully validated run description. `effective` is the merged config echoed
// into the run manifest; `user` holds only keys the user set (file + flags).
struct RunConfig {
  std::string command;
  std::uint64_t seed = 0;
  std::string out_dir;
  int workers = 1;
  json effective;
  json user;
  std::vector<std::string> notices;  // flag-over-file and environment overrides
};

/// Merges defaults, the config file and flag overrides (flags win), rejects
/// unknown keys with a closest-key suggestion, and type-checks values.
/// `flags` maps dotted key paths (e.g. "gola.n_starts") to raw flag text.
/// Throws ConfigError.
RunConfig parse_config(const json& file, const std::vector<std::pair<std::string, std::string>>& flags,
                       const std::string& command_override = "");

/// Executes the command, writing artifacts and a run manifest into
/// cfg.out_dir. Returns 0 on success; on failure writes error.json, prints
/// the same document to `err` and returns 1.
int run(const RunConfig& cfg, std::ostream& out, std::ostream& err);

/// Command-line entry point: `gola <command> [--config PATH] [--seed N]
/// [--out DIR] [--workers N] [--reference PATH] [--<section>.<key> VALUE]`.
int cli_main(int argc, char** argv, std::ostream& out, std::ostream& err);

}  // namespace gola

#endif  // GOLA_CLI_HPP
