#pragma once

#include "dkge/evaluator.hpp"
#include "dkge/trainer.hpp"

#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>

namespace dkge::cli {

struct RunConfig {
  TrainConfig train;
  FilterMode filter = FilterMode::train;
  TieMode tie = TieMode::optimistic;
};

// Built-in defaults, with threads set to the machine's parallelism.
RunConfig default_run_config();

// Sets one key (flag name without dashes, e.g. "max-epochs") from text.
// Throws ConfigError for unknown keys and malformed values.
void apply_setting(RunConfig& config, const std::string& key, const std::string& value);

// Flat `key = value` lines; '#' starts a comment.
std::map<std::string, std::string> read_config_file(const std::filesystem::path& path);

// Entry point of the `dkge` binary. Returns the process exit status:
// 0 on success, 1 on a runtime error, 2 on a usage error.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace dkge::cli
