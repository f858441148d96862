#include <algorithm>
#include <cmath>
#include <sstream>

#include "endorkit/lineshapes.hpp"

namespace endorkit {

Spectrum synth_esr_spectrum(const SpinSystem& sys, const FieldConfig& field, std::span<const double> populations,
                            std::span<const double> grid, const EsrSynthOptions& options) {
  const auto n_lines = static_cast<std::size_t>(sys.i_nuclear.multiplicity());
  if (populations.size() != n_lines)
    throw std::invalid_argument("expected " + std::to_string(n_lines) + " populations, got " +
                                std::to_string(populations.size()));
  for (double p : populations)
    if (!(p >= 0.0)) throw std::invalid_argument("populations must be nonnegative");
  if (!(options.line_fwhm > 0.0)) throw std::invalid_argument("ESR line width must be positive");

  const auto lines = esr_frequencies(sys, field);  // ascending frequency
  // Populations are indexed by ascending m_I; match each line by its tag.
  std::vector<double> amp(lines.size());
  for (std::size_t k = 0; k < lines.size(); ++k) {
    const auto idx = static_cast<std::size_t>((lines[k].from_label.twice_mi + sys.i_nuclear.twice()) / 2);
    amp[k] = options.amplitude * populations[idx];
  }

  Spectrum spec;
  spec.frequencies.assign(grid.begin(), grid.end());
  spec.signal.assign(grid.size(), 0.0);
  spec.validate();
  const double mid = grid.empty() ? 0.0 : 0.5 * (grid.front() + grid.back());
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const double f = grid[i];
    double s = options.background_offset + options.background_slope * (f - mid);
    for (std::size_t k = 0; k < lines.size(); ++k) {
      if (options.shape == LineShape::fano)
        s += fano(f, FanoParams{lines[k].frequency, options.line_fwhm, options.asymmetry_q, amp[k]});
      else
        s += lorentzian(f, LorentzianParams{lines[k].frequency, options.line_fwhm, amp[k]});
    }
    spec.signal[i] = s;
  }

  spec.set_meta(meta_keys::kKind, "esr");
  spec.set_meta(meta_keys::kBz, field.b_ext[2]);
  if (!grid.empty()) {
    std::ostringstream outside;
    for (const auto& line : lines)
      if (line.frequency < grid.front() || line.frequency > grid.back())
        outside << (outside.tellp() > 0 ? " " : "") << format_double(line.frequency);
    if (outside.tellp() > 0) spec.set_meta(meta_keys::kWarning, "lines outside grid: " + outside.str());
  }
  return spec;
}

namespace {

struct Drive {
  StatePair pair;
  double center;
};

}  // namespace

Spectrum synth_endor_spectrum(const SpinSystem& sys, const FieldConfig& field, double f_esr_fixed,
                              std::span<const double> f_nmr_grid, const PumpConfig& pump,
                              const EndorSynthOptions& options) {
  if (!(options.esr_fwhm > 0.0) || !(options.nmr_fwhm > 0.0))
    throw std::invalid_argument("ENDOR line widths must be positive");
  pump.validate();
  const SpinEigensystem eig = solve(sys, field);
  const auto esr_lines = esr_frequencies(eig);

  // ESR readout: lines near the fixed ESR frequency.
  std::vector<std::pair<double, double>> probes;  // (m_I, Lorentzian weight)
  PumpConfig base = pump;
  base.esr_pair.reset();
  base.nmr_pair.reset();
  std::vector<std::pair<StatePair, double>> esr_drives;
  for (const auto& line : esr_lines) {
    if (std::abs(f_esr_fixed - line.frequency) > options.esr_window_fwhm * options.esr_fwhm) continue;
    const double w = lorentzian(f_esr_fixed, LorentzianParams{line.frequency, options.esr_fwhm, 1.0});
    probes.emplace_back(line.from_label.mi(), w);
    esr_drives.emplace_back(StatePair{line.from_label, line.to_label}, pump.omega_esr * w);
  }

  std::vector<Drive> nmr_drives;
  for (const auto& line : transition_catalog(eig, Channel::nmr))
    if (line.numeral) nmr_drives.push_back({StatePair{line.from_label, line.to_label}, line.frequency});

  Spectrum spec;
  spec.frequencies.assign(f_nmr_grid.begin(), f_nmr_grid.end());
  spec.signal.assign(f_nmr_grid.size(), 0.0);
  spec.validate();
  spec.set_meta(meta_keys::kKind, "endor");
  spec.set_meta(meta_keys::kBz, field.b_ext[2]);
  spec.set_meta(meta_keys::kFesr, f_esr_fixed);
  spec.set_meta("off_resonant", probes.empty() ? 1.0 : 0.0);
  if (probes.empty()) return spec;

  const auto ff = flip_flop_coefficients(sys, field);
  RateMatrix undriven = build_rate_matrix(sys, ff, base);
  for (const auto& [pair, rate] : esr_drives) undriven.add_symmetric(pair, rate);

  for (std::size_t i = 0; i < f_nmr_grid.size(); ++i) {
    RateMatrix m = undriven;
    for (const auto& d : nmr_drives)
      m.add_symmetric(d.pair, pump.omega_nmr * lorentzian(f_nmr_grid[i], LorentzianParams{d.center, options.nmr_fwhm, 1.0}));
    const Populations pop = steady_state(m);
    double s = 0.0;
    for (const auto& [mi, w] : probes)
      s += w * (options.observable == EndorObservable::nuclear_marginal ? endor_signal(pop, mi)
                                                                        : endor_population_difference(pop, mi));
    spec.signal[i] = s;
  }
  return spec;
}

}  // namespace endorkit
