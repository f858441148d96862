#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "endorkit/lineshapes.hpp"

namespace endorkit {

/// A fitted value with its one-sigma uncertainty.
struct Estimate {
  double value = 0.0;
  double sigma = 0.0;
};

/// A fit that stopped without meeting its convergence criteria.
class NotConvergedError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Carries the best-effort result of the failed fit.
template <typename Result>
class FitNotConverged : public NotConvergedError {
 public:
  FitNotConverged(const std::string& what, Result best) : NotConvergedError(what), best_effort(std::move(best)) {}
  Result best_effort;
};

/// Too few independent observations for the requested parameters.
class RankDeficiencyError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Robust per-point noise level: 1.4826 * MAD of first differences / sqrt(2).
double estimate_noise(std::span<const double> signal);

// ---------------------------------------------------------------------------
// ESR peaks

enum class EsrConstraint { equal_spacing_boltzmann, free };

struct EsrFitOptions {
  EsrConstraint constraint = EsrConstraint::equal_spacing_boltzmann;
  double expected_spacing_mhz = 130.0;  // peak candidates closer than half this are merged
  bool shared_width = true;             // false gives every peak its own width (free mode only)
  double smoothing_mhz = 2.0;           // boxcar used only for locating candidates
};

struct EsrPeakSet {
  double b_z = 0.0;
  std::vector<double> centers;  // ascending
  std::vector<double> center_sigmas;
  Estimate center_f0;
  Estimate spacing;
  Estimate beta;  // Boltzmann exponent per m_I step (constrained mode)
  std::vector<FanoParams> fano_params;
  double background_offset = 0.0;
  double background_slope = 0.0;  // per MHz about the grid midpoint
  double fit_quality = 0.0;       // rms residual in signal units
  double noise_estimate = 0.0;
  bool converged = false;
  std::vector<std::string> warnings;
};

/// Fits n_peaks Fano lines plus a linear background. The constrained model
/// places the lines at f0 + spacing * (k - (n - 1) / 2) with amplitudes
/// A exp(-beta k), one shared width and a q per peak. Free mode starts from
/// the constrained solution and releases every center and amplitude; f0,
/// spacing and beta then still come from the constrained stage.
/// Throws FitNotConverged<EsrPeakSet> when no signal is found or the
/// optimizer stops early.
EsrPeakSet fit_esr_peaks(const Spectrum& spec, int n_peaks, const EsrFitOptions& options = {});

// ---------------------------------------------------------------------------
// Electron Zeeman line

struct FieldPoint {
  double b_z = 0.0;
  double value = 0.0;  // MHz
  double sigma = 0.0;  // MHz; nonpositive means unknown
};

struct ZeemanFit {
  Estimate g_e_z;
  Estimate b_tip_z;  // Tesla
  double residual_rms = 0.0;
};

/// Regression of f0 = mu_B g_e_z (b_z + b_tip_z). Points are weighted by
/// 1/sigma^2 when every sigma is positive and uniformly otherwise;
/// uncertainties are scaled by the reduced chi-square.
ZeemanFit fit_f0_linear(std::span<const FieldPoint> points);

// ---------------------------------------------------------------------------
// Tip field

struct TipFitOptions {
  double g_e_z = 0.56;
  double a_z = 130.0;
  SpinSystem base = SpinSystem::titanium47();  // supplies spins and in-plane hyperfine
  double b_tip_init = 0.065;                   // Tesla
  double phi_init = 5.0 * constants::kPi / 180.0;
  double phi_lower = 0.1 * constants::kPi / 180.0;
  double phi_upper = 20.0 * constants::kPi / 180.0;
  bool fit_g_e_z = false;  // refine g_e_z (starting from the value above) together with the tip field
  /// Compare only the mean line position per field. The hyperfine spacing
  /// then drops out to first order, so a_z barely affects the result.
  bool line_mean_only = false;
};

struct TipFieldResult {
  Estimate b_tip;
  Estimate phi;
  std::optional<Estimate> g_e_z;  // set when fit_g_e_z is on
  double residual_rms = 0.0;      // MHz
  bool at_bound = false;
  std::vector<std::string> warnings;
};

/// Least squares of full-Hamiltonian ESR frequencies (quadrupole switched
/// off) against the measured peak centers of every set.
TipFieldResult fit_tip_field(std::span<const EsrPeakSet> peak_sets, const TipFitOptions& options);

// ---------------------------------------------------------------------------
// NMR peaks

struct NmrFitOptions {
  double min_separation_mhz = 3.0;
  double smoothing_mhz = 1.0;
  /// With a model the peaks are labeled by the nearest predicted transition
  /// among I..IV; without one they are numbered in frequency order.
  std::optional<SpinSystem> model;
  std::optional<FieldConfig> model_field;
};

struct NmrPeak {
  int label = 0;  // transition number
  LorentzianParams params;
  double center_sigma = 0.0;
};

struct NmrPeakSet {
  double b_z = 0.0;
  std::vector<NmrPeak> peaks;  // ascending label
  double background_offset = 0.0;
  double background_slope = 0.0;
  double fit_quality = 0.0;
  double noise_estimate = 0.0;
  bool converged = false;
  std::vector<std::string> warnings;

  const NmrPeak* find(int label) const;
};

/// Sum of n_peaks (1..4) signed Lorentzians with individual widths plus a
/// linear background.
NmrPeakSet fit_nmr_peaks(const Spectrum& spec, int n_peaks, const NmrFitOptions& options = {});

/// Re-labels the peaks of a set against predictions for transitions I..IV
/// by minimizing the summed distance over all assignments.
void assign_nmr_labels(NmrPeakSet& set, const SpinSystem& sys, const FieldConfig& field);

/// Model frequency of numbered transition n.
double predicted_nmr_frequency(const SpinEigensystem& eig, int numeral);

// ---------------------------------------------------------------------------
// Hyperfine and quadrupole

struct HyperfineFitOptions {
  double g_e_z = 0.56;
  double b_tip = 0.0679;
  double phi = 5.0 * constants::kPi / 180.0;
  double g_n = 0.315;
  SpinSystem base = SpinSystem::titanium47();
  double a_z_init = 130.0;
  double kappa_init = -53.0;
};

struct HyperfineFit {
  Estimate a_z;
  Estimate kappa;
  double q_derived = 0.0;  // kappa / (2I(2I-1))
  double residual_rms = 0.0;
  std::size_t n_observations = 0;
};

/// Least squares of full-Hamiltonian NMR frequencies (eta = 0) against the
/// labeled peak centers. Throws RankDeficiencyError unless some field has at
/// least two distinct labeled transitions.
HyperfineFit fit_hyperfine_quadrupole(std::span<const NmrPeakSet> nmr_sets, const HyperfineFitOptions& options);

// ---------------------------------------------------------------------------
// Nuclear g-factor

struct NuclearGFit {
  Estimate g_n;        // |slope| / mu_N
  Estimate slope;      // MHz/T, signed
  Estimate intercept;  // MHz
  double residual_rms = 0.0;
};

NuclearGFit fit_nuclear_g(std::span<const FieldPoint> points);

// ---------------------------------------------------------------------------
// Recursive procedure

struct CalibrationOptions {
  SpinSystem base = SpinSystem::titanium47();
  /// Refits g_e_z inside the tip-field stage, seeded by the Zeeman regression.
  /// g_e_z and b_tip_z are then reported from the full model instead of the
  /// straight-line fit, which ignores the in-plane tip field and second-order
  /// hyperfine shifts.
  bool refine_g_e_z = true;
  double a_z_init = 130.0;
  double kappa_init = -53.0;
  double g_n = 0.315;
  int nmr_peaks = 2;
  double tolerance = 1e-4;
  int max_iterations = 10;
  EsrFitOptions esr = free_peaks();
  NmrFitOptions nmr;

  static EsrFitOptions free_peaks() {
    EsrFitOptions o;
    o.constraint = EsrConstraint::free;
    return o;
  }
};

struct IterationRecord {
  int iteration = 0;
  double g_e_z = 0.0, b_tip_z = 0.0, b_tip = 0.0, phi = 0.0, a_z = 0.0, kappa = 0.0;
  double max_relative_change = 0.0;  // against the previous iteration; infinite for the first
  double zeeman_rms = 0.0, tip_rms = 0.0, hyperfine_rms = 0.0;
};

struct CalibrationResult {
  Estimate g_e_z, b_tip_z, b_tip, phi, a_z, kappa;
  ZeemanFit zeeman;  // straight-line stage
  double q_derived = 0.0;
  Estimate g_n;                         // value used in the Hamiltonian
  std::optional<NuclearGFit> g_n_slope;  // from transition I versus field
  int iterations = 0;
  bool converged = false;
  bool partial = false;
  std::vector<std::string> warnings;
  std::vector<IterationRecord> history;
  std::vector<EsrPeakSet> esr_peaks;
  std::vector<NmrPeakSet> nmr_peaks;
};

/// A stage of the recursive procedure failed.
class CalibrationStageError : public std::runtime_error {
 public:
  CalibrationStageError(std::string stage, const std::string& what)
      : std::runtime_error(stage + ": " + what), stage(std::move(stage)) {}
  std::string stage;
};

/// Alternates the tip-field fit and the hyperfine/quadrupole fit until the
/// largest relative parameter change drops below the tolerance. The Zeeman
/// regression of the mean fitted line position against field runs once and
/// seeds g_e_z.
CalibrationResult recursive_calibration(std::span<const Spectrum> esr_data, std::span<const Spectrum> nmr_data,
                                        const CalibrationOptions& options = {});

}  // namespace endorkit
