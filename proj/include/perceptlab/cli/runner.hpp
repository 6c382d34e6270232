#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "perceptlab/cli/config.hpp"

namespace perceptlab::cli {

inline constexpr const char* kVersion = "0.1.0";

struct RunOptions {
    std::string subcommand;
    std::filesystem::path config_path;
    std::optional<std::string> setting; // overrides sr.setting (P/RP/PA/RPA)
    std::optional<std::filesystem::path> out_dir; // exact run directory
};

const std::vector<std::string>& subcommand_names();

// <output_dir>/<subcommand>, with $PERCEPTLAB_OUTPUT_ROOT prefixed when the
// configured output_dir is relative; --out wins verbatim
std::filesystem::path resolve_run_dir(const ExperimentConfig& cfg,
                                      const RunOptions& opt);

// parses + validates the config before any computation, then writes
// manifest.json, config.json, and the subcommand's artifacts into the run
// directory; throws on failure
void run_subcommand(const RunOptions& opt);

// run_subcommand with errors mapped to exit codes: 0 ok, 2 validation,
// 3 divergence, 4 I/O, 1 anything else
int dispatch(const RunOptions& opt);

} // namespace perceptlab::cli
