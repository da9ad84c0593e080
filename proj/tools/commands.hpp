#pragma once

#include <string>
#include <vector>

#include "run_config.hpp"

namespace spectrumfm::cli {

// Subcommand implementations. Each validates its inputs up front, never
// mutates them, writes its outputs plus a run_record.json under out_dir, and
// throws (ConfigError/DataError/...) on failure; main() maps those to the
// exit-code contract.
void cmd_generate(const RunConfig& cfg);
void cmd_pretrain(const RunConfig& cfg);
void cmd_finetune(const RunConfig& cfg);
void cmd_eval(const RunConfig& cfg);
void cmd_report(const std::vector<std::string>& run_dirs, const std::string& out_dir);

// Builds the scenario list the generate command synthesizes from.
std::vector<signals::ScenarioSpec> build_scenarios(const RunConfig& cfg);

}  // namespace spectrumfm::cli
