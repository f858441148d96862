#include <cmath>

#include <json.hpp>

#include "endorkit/cli.hpp"

namespace endorkit::cli {

namespace {

using ordered_json = nlohmann::ordered_json;

constexpr double kDeg = constants::kPi / 180.0;

ordered_json estimate(const Estimate& e, double scale = 1.0) {
  return {{"value", e.value * scale}, {"sigma", e.sigma * scale}};
}

FieldConfig fitted_field(const RunConfig& cfg, const CalibrationResult& r, double b_z) {
  FieldConfig f = cfg.field.with_b_z(b_z);
  f.b_ext = {0.0, 0.0, b_z};
  f.b_tip = r.b_tip.value;
  f.phi = r.phi.value;
  f.theta = 0.0;
  return f;
}

double mean_center(const EsrPeakSet& s) {
  double m = 0.0;
  for (double c : s.centers) m += c;
  return s.centers.empty() ? 0.0 : m / static_cast<double>(s.centers.size());
}

}  // namespace

std::string esr_fit_report(const EsrPeakSet& set, bool converged) {
  ordered_json j;
  j["kind"] = "esr";
  j["converged"] = converged;
  j["b_z_tesla"] = std::isfinite(set.b_z) ? ordered_json(set.b_z) : ordered_json(nullptr);
  j["center_f0_mhz"] = estimate(set.center_f0);
  j["spacing_mhz"] = estimate(set.spacing);
  j["beta"] = estimate(set.beta);
  ordered_json peaks = ordered_json::array();
  for (std::size_t k = 0; k < set.centers.size(); ++k) {
    const FanoParams& p = set.fano_params.at(k);
    peaks.push_back({{"center_mhz", set.centers[k]},
                     {"center_sigma_mhz", set.center_sigmas.at(k)},
                     {"width_mhz", p.width},
                     {"q", p.asymmetry_q},
                     {"amplitude", p.amplitude}});
  }
  j["peaks"] = peaks;
  j["background"] = {{"offset", set.background_offset}, {"slope_per_mhz", set.background_slope}};
  j["residual_rms"] = set.fit_quality;
  j["noise_estimate"] = set.noise_estimate;
  j["warnings"] = set.warnings;
  return j.dump(2) + "\n";
}

std::string nmr_fit_report(const NmrPeakSet& set, bool converged) {
  ordered_json j;
  j["kind"] = "nmr";
  j["converged"] = converged;
  j["b_z_tesla"] = std::isfinite(set.b_z) ? ordered_json(set.b_z) : ordered_json(nullptr);
  ordered_json peaks = ordered_json::array();
  for (const auto& p : set.peaks) {
    peaks.push_back({{"label", p.label > 0 ? roman_numeral(p.label) : std::string("?")},
                     {"center_mhz", p.params.center},
                     {"center_sigma_mhz", p.center_sigma},
                     {"fwhm_mhz", p.params.fwhm},
                     {"amplitude", p.params.amplitude}});
  }
  j["peaks"] = peaks;
  j["background"] = {{"offset", set.background_offset}, {"slope_per_mhz", set.background_slope}};
  j["residual_rms"] = set.fit_quality;
  j["noise_estimate"] = set.noise_estimate;
  j["warnings"] = set.warnings;
  return j.dump(2) + "\n";
}

RunConfig calibrated_config(const RunConfig& cfg, const CalibrationResult& r) {
  RunConfig out = cfg;
  out.spin_system.g_e[2] = r.g_e_z.value;
  out.spin_system.a_hyperfine[2] = r.a_z.value;
  out.spin_system.kappa = r.kappa.value;
  out.spin_system.eta = 0.0;
  out.spin_system.g_n = r.g_n.value;
  out.field.b_tip = r.b_tip.value;
  out.field.phi = r.phi.value;
  out.field.theta = 0.0;
  return out;
}

std::string calibration_report(const CalibrationResult& r, const RunConfig& cfg,
                               const std::vector<std::string>& esr_files, const std::vector<std::string>& nmr_files) {
  ordered_json j;
  j["converged"] = r.converged;
  j["partial"] = r.partial;
  j["iterations"] = r.iterations;
  j["parameters"] = {{"g_e_z", estimate(r.g_e_z)},
                     {"b_tip_z_tesla", estimate(r.b_tip_z)},
                     {"b_tip_tesla", estimate(r.b_tip)},
                     {"phi_deg", estimate(r.phi, 1.0 / kDeg)},
                     {"a_z_mhz", estimate(r.a_z)},
                     {"kappa_mhz", estimate(r.kappa)},
                     {"q_derived_mhz", r.q_derived},
                     {"g_n", estimate(r.g_n)}};
  if (r.g_n_slope) {
    j["g_n_from_transition_I"] = {{"g_n", estimate(r.g_n_slope->g_n)},
                                  {"slope_mhz_per_tesla", estimate(r.g_n_slope->slope)},
                                  {"intercept_mhz", estimate(r.g_n_slope->intercept)},
                                  {"residual_rms_mhz", r.g_n_slope->residual_rms}};
  } else {
    j["g_n_from_transition_I"] = nullptr;
  }
  j["zeeman_linear_fit"] = {{"g_e_z", estimate(r.zeeman.g_e_z)},
                            {"b_tip_z_tesla", estimate(r.zeeman.b_tip_z)},
                            {"residual_rms_mhz", r.zeeman.residual_rms}};
  ordered_json history = ordered_json::array();
  for (const auto& h : r.history) {
    history.push_back({{"iteration", h.iteration},
                       {"g_e_z", h.g_e_z},
                       {"b_tip_z_tesla", h.b_tip_z},
                       {"b_tip_tesla", h.b_tip},
                       {"phi_deg", h.phi / kDeg},
                       {"a_z_mhz", h.a_z},
                       {"kappa_mhz", h.kappa},
                       {"max_relative_change",
                        std::isfinite(h.max_relative_change) ? ordered_json(h.max_relative_change) : ordered_json(nullptr)},
                       {"zeeman_rms_mhz", h.zeeman_rms},
                       {"tip_rms_mhz", h.tip_rms},
                       {"hyperfine_rms_mhz", h.hyperfine_rms}});
  }
  j["history"] = history;
  j["warnings"] = r.warnings;
  j["inputs"] = {{"esr_files", esr_files}, {"nmr_files", nmr_files}};

  // Residual tables against the final parameter set.
  ordered_json zeeman = ordered_json::array(), tip = ordered_json::array(), hyperfine = ordered_json::array();
  const double mu = constants::kBohrMagnetonMHzPerT;
  SpinSystem model = cfg.spin_system;
  model.g_e = {r.g_e_z.value, r.g_e_z.value, r.g_e_z.value};
  model.a_hyperfine[2] = r.a_z.value;
  model.kappa = r.kappa.value;
  model.eta = 0.0;
  model.g_n = r.g_n.value;
  const bool have_tip = !r.history.empty();
  for (const auto& s : r.esr_peaks) {
    const double f0 = mean_center(s);
    const double line = mu * r.zeeman.g_e_z.value * (s.b_z + r.zeeman.b_tip_z.value);
    zeeman.push_back({{"b_z_tesla", s.b_z}, {"f0_mhz", f0}, {"model_mhz", line}, {"residual_mhz", f0 - line}});
    if (!have_tip) continue;
    const auto lines = esr_frequencies(model, fitted_field(cfg, r, s.b_z));
    for (std::size_t k = 0; k < s.centers.size() && k < lines.size(); ++k) {
      tip.push_back({{"b_z_tesla", s.b_z},
                     {"m_i", lines[k].from_label.mi()},
                     {"center_mhz", s.centers[k]},
                     {"model_mhz", lines[k].frequency},
                     {"residual_mhz", s.centers[k] - lines[k].frequency}});
    }
  }
  for (const auto& s : r.nmr_peaks) {
    const SpinEigensystem eig = solve(model, fitted_field(cfg, r, s.b_z));
    for (const auto& p : s.peaks) {
      if (p.label <= 0) continue;
      const double m = predicted_nmr_frequency(eig, p.label);
      hyperfine.push_back({{"b_z_tesla", s.b_z},
                           {"label", roman_numeral(p.label)},
                           {"center_mhz", p.params.center},
                           {"model_mhz", m},
                           {"residual_mhz", p.params.center - m}});
    }
  }
  j["residuals"] = {{"zeeman", zeeman}, {"tip_field", tip}, {"hyperfine", hyperfine}};
  return j.dump(2) + "\n";
}

}  // namespace endorkit::cli
