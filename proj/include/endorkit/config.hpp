#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>

#include "endorkit/calibration.hpp"
#include "endorkit/lineshapes.hpp"

namespace endorkit {

/// Invalid configuration; the message starts with the dotted key path.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct LineshapeDefaults {
  double esr_fwhm_mhz = 8.0;
  double esr_q = 3.0;
  double esr_amplitude = 1.0;
  double esr_beta = 0.3;  // Boltzmann exponent per m_I step for simulated ESR
  double nmr_fwhm_mhz = 4.0;
  double esr_window_fwhm = 5.0;
  EndorObservable observable = EndorObservable::nuclear_marginal;
};

struct CalibrationDefaults {
  double a_z_init_mhz = 130.0;
  double kappa_init_mhz = -53.0;
  double g_n = 0.315;
  int nmr_peaks = 2;
  double tolerance = 1e-4;
  int max_iterations = 10;
  bool refine_g_e_z = true;
};

/// Everything a command needs besides its flags. Defaults reproduce the
/// fitted 47Ti parameter set at 450 mT.
struct RunConfig {
  SpinSystem spin_system = SpinSystem::titanium47();
  FieldConfig field = FieldConfig::fitted_tip(0.45);
  PumpConfig pump = default_pump();
  LineshapeDefaults lineshape;
  CalibrationDefaults calibration;
  std::optional<std::filesystem::path> transfer_table;
  std::filesystem::path output_dir = ".";
  std::uint64_t seed = 2024;

  /// ESR drive on, NMR drive in the linear-response range at 450 mT.
  static PumpConfig default_pump();
  void validate() const;
  CalibrationOptions calibration_options() const;
};

/// JSON text; keys carry their units (b_tip_tesla, a_hyperfine_mhz, ...).
/// Missing keys keep their defaults, unknown keys are rejected.
RunConfig parse_config(const std::string& json_text, const std::string& source = "config");
RunConfig load_config(const std::filesystem::path& path);
std::string config_to_json(const RunConfig& cfg);

/// Explicit path if given, otherwise $ENDORKIT_CONFIG, otherwise defaults.
RunConfig resolve_config(const std::optional<std::filesystem::path>& explicit_path);
inline constexpr const char* kConfigEnvVar = "ENDORKIT_CONFIG";

}  // namespace endorkit
