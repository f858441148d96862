#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "endorkit/pumping.hpp"
#include "endorkit/spinmodel.hpp"

namespace endorkit {

/// Fano resonance; width is the full width, q the asymmetry parameter.
struct FanoParams {
  double center = 0.0;
  double width = 1.0;
  double asymmetry_q = 0.0;
  double amplitude = 1.0;
};

/// Signed Lorentzian: dips have negative amplitude.
struct LorentzianParams {
  double center = 0.0;
  double fwhm = 1.0;
  double amplitude = 1.0;
};

/// amplitude * ((q + e)^2 / (1 + e^2) - 1) with e = 2 (f - center) / width.
/// Vanishes far from resonance; q = 0 is a Lorentzian dip of depth amplitude,
/// and the maximum amplitude * q^2 sits at f = center + width / (2 q).
double fano(double f, const FanoParams& p);
double lorentzian(double f, const LorentzianParams& p);

/// Frequency axis in MHz plus signal and free-form metadata.
struct Spectrum {
  std::vector<double> frequencies;
  std::vector<double> signal;
  std::map<std::string, std::string> meta;

  std::size_t size() const { return frequencies.size(); }
  /// Throws std::invalid_argument on length mismatch or a non-ascending axis.
  void validate() const;
  void set_meta(const std::string& key, double value);
  void set_meta(const std::string& key, const std::string& value) { meta[key] = value; }
  std::optional<double> meta_number(const std::string& key) const;
};

namespace meta_keys {
inline constexpr const char* kBz = "b_z_tesla";
inline constexpr const char* kFesr = "f_esr_fixed_mhz";
inline constexpr const char* kVesr = "v_esr_mv";
inline constexpr const char* kVnmr = "v_nmr_mv";
inline constexpr const char* kSeed = "seed";
inline constexpr const char* kNoiseSigma = "noise_sigma";
inline constexpr const char* kKind = "kind";
inline constexpr const char* kWarning = "warning";
}  // namespace meta_keys

std::vector<double> linear_grid(double start, double stop, std::size_t points);

/// Voltage-ratio knots (frequency MHz, delivered / requested), ascending.
struct TransferTable {
  std::vector<std::pair<double, double>> knots;

  void validate() const;
  /// Two numeric columns per line; '#' comments and one non-numeric header
  /// line are skipped.
  static TransferTable parse_csv(const std::string& text);
  static TransferTable load_csv(const std::string& path);
};

/// Linear interpolation of the ratio table, clamped outside the knot range.
double apply_transfer(double requested_amplitude, double frequency, const TransferTable& table);

/// p(m) proportional to exp(-beta (m + I)) for m = -I ... I (ascending m).
std::vector<double> boltzmann_populations(SpinQuantumNumber i_nuclear, double beta);
/// beta for sublevels spaced by level_spacing_mhz at an effective temperature.
double boltzmann_beta(double temperature_k, double level_spacing_mhz);

enum class LineShape { fano, lorentzian };

struct EsrSynthOptions {
  double line_fwhm = 8.0;  // MHz
  LineShape shape = LineShape::fano;
  double asymmetry_q = 0.0;
  double amplitude = 1.0;
  double background_offset = 0.0;
  double background_slope = 0.0;  // per MHz, about the grid midpoint
};

/// Sum of 2I+1 ESR lines with amplitudes amplitude * populations[k], where
/// populations are ordered by ascending m_I. Lines outside the grid are
/// reported in the "warning" metadata entry.
Spectrum synth_esr_spectrum(const SpinSystem& sys, const FieldConfig& field, std::span<const double> populations,
                            std::span<const double> grid, const EsrSynthOptions& options = {});

enum class EndorObservable { nuclear_marginal, population_difference };

struct EndorSynthOptions {
  double esr_fwhm = 8.0;        // MHz
  double nmr_fwhm = 4.0;        // MHz
  double esr_window_fwhm = 5.0; // ESR lines farther than this many widths are not driven
  EndorObservable observable = EndorObservable::nuclear_marginal;
};

/// For every NMR frequency the steady state is recomputed with the ESR drive
/// at f_esr_fixed and Lorentzian-weighted NMR drives on all Delta m_I = 1
/// lines. The signal is the Lorentzian-weighted observable of the ESR lines in
/// the window; with no line in the window the spectrum is identically zero
/// and meta "off_resonant" is 1.
Spectrum synth_endor_spectrum(const SpinSystem& sys, const FieldConfig& field, double f_esr_fixed,
                              std::span<const double> f_nmr_grid, const PumpConfig& pump,
                              const EndorSynthOptions& options = {});

/// Adds N(0, sigma^2) noise; point k draws from a generator keyed by
/// (seed, k), so the result does not depend on evaluation order.
Spectrum add_noise(const Spectrum& spec, double sigma, std::uint64_t seed);
double gaussian_deviate(std::uint64_t seed, std::uint64_t index);

}  // namespace endorkit
