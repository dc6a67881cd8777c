#pragma once

#include <ostream>

namespace siflow {

/// Exit codes shared by every subcommand.
inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitNumeric = 3;

/// Entry point of the `siflow` tool: train, sample, likelihood, diagnose,
/// validate-schedule and oracle-compare. Each run writes into a fresh
/// directory <output_dir>/<timestamp>-<config hash> and prints
/// `run_dir=<path>` followed by key=value result lines on `out`.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace siflow
