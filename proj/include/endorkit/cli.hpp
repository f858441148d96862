#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "endorkit/calibration.hpp"
#include "endorkit/config.hpp"

namespace endorkit::cli {

enum ExitCode : int { kOk = 0, kFailure = 1, kInputError = 2, kNotConverged = 3 };

/// Runs one command line (args excludes the program name) and returns the
/// process exit code. Progress goes to out, diagnostics to err.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

std::string esr_fit_report(const EsrPeakSet& set, bool converged);
std::string nmr_fit_report(const NmrPeakSet& set, bool converged);
/// Parameters, iteration history and per-stage residual tables.
std::string calibration_report(const CalibrationResult& result, const RunConfig& cfg,
                               const std::vector<std::string>& esr_files, const std::vector<std::string>& nmr_files);
/// cfg with the calibrated g_e_z, A_z, kappa, b_tip and phi written in.
RunConfig calibrated_config(const RunConfig& cfg, const CalibrationResult& result);

}  // namespace endorkit::cli
