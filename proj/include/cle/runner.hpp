#pragma once

#include <string>

#include "cle/config.hpp"

namespace cle {

// Exit codes shared with the CLI: 0 success, 2 config error, 3 numeric failure.
constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitNumeric = 3;

// Applies the output-root override (CLE_OUTPUT_ROOT) to a relative output dir.
std::string resolve_output_dir(const std::string& dir);

int run_experiment(ExperimentConfig cfg);
int resume_experiment(const std::string& checkpoint_path);
int report_run(const std::string& run_dir);

}  // namespace cle
