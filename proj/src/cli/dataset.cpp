#include <algorithm>
#include <cmath>

#include "endorkit/dataset.hpp"

namespace endorkit {

double largest_feature(const Spectrum& spec) {
  if (spec.signal.empty()) return 0.0;
  std::vector<double> v = spec.signal;
  const auto mid = v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2);
  std::nth_element(v.begin(), mid, v.end());
  const double med = *mid;
  double out = 0.0;
  for (double s : spec.signal) out = std::max(out, std::abs(s - med));
  return out;
}

Dataset make_dataset(const DatasetOptions& options) {
  if (options.fields.empty()) throw std::invalid_argument("the dataset needs at least one field");
  if (!(options.noise_fraction >= 0.0)) throw std::invalid_argument("noise_fraction must be nonnegative");
  Dataset out;
  const auto populations = boltzmann_populations(options.sys.i_nuclear, options.esr_beta);
  for (std::size_t k = 0; k < options.fields.size(); ++k) {
    const double bz = options.fields[k];
    const FieldConfig field = options.field.with_b_z(bz);
    const auto lines = esr_frequencies(options.sys, field);

    const double lo = lines.front().frequency - options.esr_margin_mhz;
    const double hi = lines.back().frequency + options.esr_margin_mhz;
    const auto esr_grid = linear_grid(lo, hi, static_cast<std::size_t>(std::round((hi - lo) / options.esr_step_mhz)) + 1);
    EsrSynthOptions eo;
    eo.line_fwhm = options.esr_fwhm_mhz;
    eo.asymmetry_q = options.esr_q;
    Spectrum esr = synth_esr_spectrum(options.sys, field, populations, esr_grid, eo);
    const std::uint64_t esr_seed = options.seed + 2 * k;
    if (options.noise_fraction > 0.0) esr = add_noise(esr, options.noise_fraction * largest_feature(esr), esr_seed);
    out.esr.push_back(std::move(esr));

    const auto nmr_points = static_cast<std::size_t>(
        std::round((options.nmr_stop_mhz - options.nmr_start_mhz) / options.nmr_step_mhz)) + 1;
    const auto nmr_grid = linear_grid(options.nmr_start_mhz, options.nmr_stop_mhz, nmr_points);
    PumpConfig pump = options.pump;
    const double scale = options.reference_field / bz;
    pump.omega_nmr = options.omega_nmr_reference * scale * scale;
    EndorSynthOptions no;
    no.esr_fwhm = options.esr_fwhm_mhz;
    no.nmr_fwhm = options.nmr_fwhm_mhz;
    Spectrum nmr = synth_endor_spectrum(options.sys, field, lines.front().frequency, nmr_grid, pump, no);
    nmr.set_meta("omega_nmr_per_s", pump.omega_nmr);
    nmr.set_meta("omega_esr_per_s", pump.omega_esr);
    if (options.noise_fraction > 0.0)
      nmr = add_noise(nmr, options.noise_fraction * largest_feature(nmr), esr_seed + 1);
    out.nmr.push_back(std::move(nmr));
  }
  return out;
}

}  // namespace endorkit
