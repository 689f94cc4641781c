/// @file cli.hpp
/// @brief Command-line driver: simulate a configuration, sweep a limit axis,
///        sample the constitutive battery, or report mesh statistics.

#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace implicitflow {

constexpr int kExitOk = 0;      ///< command succeeded
constexpr int kExitUsage = 1;   ///< unknown subcommand / malformed arguments
constexpr int kExitConfig = 2;  ///< configuration failed validation
constexpr int kExitSolver = 3;  ///< solver did not converge or model checks failed
constexpr int kExitIo = 4;      ///< file could not be read or written

/// Execute one command. args holds the words after the program name, e.g.
/// {"run", "flow.cfg"}. Subcommands:
///   run <config>                                  simulate, audit, write CSVs + VTK fields
///   converge <config> --axis {k|ln|m} --levels v...  convergence sweep, write sweep.csv
///   check-model <config> [--samples N] [--seed S]    constitutive assumption battery
///   mesh-info <meshfile>                             vertex/cell counts, h, shape regularity
/// Human-readable results go to out, diagnostics and errors to err. Everything
/// written to out and to the CSV/VTK artifacts is deterministic for a fixed
/// configuration; timing lines go to err. Returns one of the kExit* codes.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace implicitflow
