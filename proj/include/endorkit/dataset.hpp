#pragma once

#include <cstdint>
#include <vector>

#include "endorkit/lineshapes.hpp"

namespace endorkit {

/// Settings for the synthetic replica dataset: ESR spectra with Boltzmann
/// peak heights and ENDOR spectra read out on the lowest ESR line, one pair
/// per field.
struct DatasetOptions {
  std::vector<double> fields{0.2, 0.4, 0.6, 0.8, 1.0, 1.2, 1.4};  // Tesla
  SpinSystem sys = SpinSystem::titanium47();
  FieldConfig field = FieldConfig::fitted_tip(0.45);  // b_z is replaced per field
  double noise_fraction = 0.05;                      // of the largest feature in each spectrum
  std::uint64_t seed = 2024;

  double esr_fwhm_mhz = 8.0;
  double esr_q = 3.0;
  double esr_beta = 0.3;  // Boltzmann exponent per m_I step
  double esr_margin_mhz = 100.0;
  double esr_step_mhz = 0.5;

  double nmr_start_mhz = 30.0;
  double nmr_stop_mhz = 110.0;
  double nmr_step_mhz = 0.1;
  double nmr_fwhm_mhz = 4.0;
  PumpConfig pump = default_pump();
  /// NMR drive at the reference field; it scales as (reference / b_z)^2,
  /// following the flip-flop rates, so every field stays in linear response.
  double omega_nmr_reference = 3e-3;
  double reference_field = 0.45;

  static PumpConfig default_pump() {
    PumpConfig p;
    p.omega_esr = 1e5;
    return p;
  }
};

struct Dataset {
  std::vector<Spectrum> esr;
  std::vector<Spectrum> nmr;
};

Dataset make_dataset(const DatasetOptions& options = {});

/// Largest |signal - median(signal)|.
double largest_feature(const Spectrum& spec);

}  // namespace endorkit
