#include <algorithm>
#include <cmath>
#include <set>

#include "endorkit/calibration.hpp"

namespace endorkit {

namespace {

struct LineFit {
  double slope = 0.0, intercept = 0.0;
  double var_slope = 0.0, var_intercept = 0.0, covariance = 0.0;
  double rms = 0.0;
};

LineFit weighted_line(std::span<const FieldPoint> pts) {
  std::set<double> distinct;
  for (const auto& p : pts) {
    if (!std::isfinite(p.b_z) || !std::isfinite(p.value)) throw std::invalid_argument("field points must be finite");
    distinct.insert(p.b_z);
  }
  if (distinct.size() < 2) throw std::invalid_argument("a linear fit needs at least two distinct fields");
  const bool weighted = std::all_of(pts.begin(), pts.end(), [](const FieldPoint& p) { return p.sigma > 0.0; });

  double s = 0, sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (const auto& p : pts) {
    const double w = weighted ? 1.0 / (p.sigma * p.sigma) : 1.0;
    s += w, sx += w * p.b_z, sy += w * p.value, sxx += w * p.b_z * p.b_z, sxy += w * p.b_z * p.value;
  }
  const double d = s * sxx - sx * sx;
  LineFit out;
  out.slope = (s * sxy - sx * sy) / d;
  out.intercept = (sxx * sy - sx * sxy) / d;

  double chi2 = 0.0, ss = 0.0;
  for (const auto& p : pts) {
    const double r = p.value - (out.intercept + out.slope * p.b_z);
    chi2 += (weighted ? 1.0 / (p.sigma * p.sigma) : 1.0) * r * r;
    ss += r * r;
  }
  out.rms = std::sqrt(ss / static_cast<double>(pts.size()));
  const std::size_t dof = pts.size() - 2;
  const double scale = dof > 0 ? chi2 / static_cast<double>(dof) : (weighted ? 1.0 : 0.0);
  out.var_slope = scale * s / d;
  out.var_intercept = scale * sxx / d;
  out.covariance = -scale * sx / d;
  return out;
}

SpinSystem model_system(const SpinSystem& base, double g_e_z, double a_z, double kappa, double g_n) {
  SpinSystem sys = base;
  sys.g_e = {g_e_z, g_e_z, g_e_z};
  sys.a_hyperfine[2] = a_z;
  sys.kappa = kappa;
  sys.eta = 0.0;
  sys.g_n = g_n;
  return sys;
}

FieldConfig model_field(double b_z, double b_tip, double phi) {
  FieldConfig f;
  f.b_ext = {0.0, 0.0, b_z};
  f.b_tip = b_tip;
  f.phi = phi;
  f.theta = 0.0;
  return f;
}

double relative_change(double now, double before) {
  return std::abs(now - before) / std::max(std::abs(before), 1e-300);
}

}  // namespace

ZeemanFit fit_f0_linear(std::span<const FieldPoint> points) {
  const LineFit lf = weighted_line(points);
  if (lf.slope == 0.0) throw std::invalid_argument("f0 does not depend on the field; g_e_z would be zero");
  const double mu = constants::kBohrMagnetonMHzPerT;
  ZeemanFit out;
  out.g_e_z = {lf.slope / mu, std::sqrt(lf.var_slope) / mu};
  // b_tip_z = intercept / slope, first-order error propagation.
  const double s = lf.slope, i = lf.intercept;
  const double var = lf.var_intercept / (s * s) + i * i * lf.var_slope / (s * s * s * s) -
                     2.0 * i * lf.covariance / (s * s * s);
  out.b_tip_z = {i / s, std::sqrt(std::max(0.0, var))};
  out.residual_rms = lf.rms;
  return out;
}

NuclearGFit fit_nuclear_g(std::span<const FieldPoint> points) {
  const LineFit lf = weighted_line(points);
  NuclearGFit out;
  out.slope = {lf.slope, std::sqrt(lf.var_slope)};
  out.intercept = {lf.intercept, std::sqrt(lf.var_intercept)};
  out.g_n = {std::abs(lf.slope) / constants::kNuclearMagnetonMHzPerT,
             std::sqrt(lf.var_slope) / constants::kNuclearMagnetonMHzPerT};
  out.residual_rms = lf.rms;
  return out;
}

TipFieldResult fit_tip_field(std::span<const EsrPeakSet> peak_sets, const TipFitOptions& options) {
  std::set<double> fields;
  for (const auto& s : peak_sets) {
    if (!std::isfinite(s.b_z)) throw std::invalid_argument("ESR peak set without a field value");
    fields.insert(s.b_z);
  }
  if (fields.size() < 2) throw std::invalid_argument("the tip-field fit needs peak sets at two or more fields");
  if (!(options.phi_lower <= options.phi_upper)) throw std::invalid_argument("phi bounds are inverted");

  SpinSystem sys = model_system(options.base, options.g_e_z, options.a_z, 0.0, options.base.g_n);
  const std::size_t n_lines = static_cast<std::size_t>(sys.i_nuclear.multiplicity());
  bool weighted = true;
  for (const auto& s : peak_sets) {
    if (s.centers.size() != n_lines)
      throw std::invalid_argument("peak set at " + format_double(s.b_z) + " T has " + std::to_string(s.centers.size()) +
                                  " centers; the model has " + std::to_string(n_lines) + " ESR lines");
    for (double sg : s.center_sigmas) weighted = weighted && sg > 0.0;
    weighted = weighted && s.center_sigmas.size() == n_lines;
  }

  // Parameters: b_tip, phi and optionally g_e_z.
  auto model_at = [&](std::span<const double> p) {
    SpinSystem m = sys;
    if (p.size() > 2) m.g_e = {p[2], p[2], p[2]};
    return m;
  };
  auto residual = [&](std::span<const double> p) {
    const SpinSystem m = model_at(p);
    std::vector<double> r;
    for (const auto& s : peak_sets) {
      const auto lines = esr_frequencies(m, model_field(s.b_z, p[0], p[1]));
      if (options.line_mean_only) {
        double diff = 0.0, var = 0.0;
        for (std::size_t k = 0; k < n_lines; ++k) {
          diff += lines[k].frequency - s.centers[k];
          var += weighted ? s.center_sigmas[k] * s.center_sigmas[k] : 1.0;
        }
        r.push_back(diff / std::sqrt(var));
        continue;
      }
      for (std::size_t k = 0; k < n_lines; ++k)
        r.push_back((lines[k].frequency - s.centers[k]) / (weighted ? s.center_sigmas[k] : 1.0));
    }
    return r;
  };
  std::vector<ParameterBounds> bounds{{0.0, std::numeric_limits<double>::infinity()},
                                      {options.phi_lower, options.phi_upper}};
  std::vector<double> init{std::max(0.0, options.b_tip_init),
                           std::clamp(options.phi_init, options.phi_lower, options.phi_upper)};
  if (options.fit_g_e_z) {
    bounds.push_back({0.0, std::numeric_limits<double>::infinity()});
    init.push_back(options.g_e_z);
  }
  const LeastSquaresResult fit = least_squares(residual, init, bounds);

  TipFieldResult out;
  out.b_tip = {fit.params[0], fit.sigma(0)};
  out.phi = {fit.params[1], fit.sigma(1)};
  if (options.fit_g_e_z) out.g_e_z = Estimate{fit.params[2], fit.sigma(2)};
  sys = model_at(fit.params);
  // Unweighted MHz residual.
  double ss = 0.0;
  std::size_t count = 0;
  for (const auto& s : peak_sets) {
    const auto lines = esr_frequencies(sys, model_field(s.b_z, fit.params[0], fit.params[1]));
    for (std::size_t k = 0; k < n_lines; ++k, ++count) ss += std::pow(lines[k].frequency - s.centers[k], 2);
  }
  out.residual_rms = std::sqrt(ss / static_cast<double>(count));
  // phi enters through sin^2 near zero, so the optimizer may stop short of
  // the bound; within one standard error of it counts as pinned.
  const double tol = std::max(1e-6 * (options.phi_upper - options.phi_lower), out.phi.sigma);
  if (fit.params[1] - options.phi_lower <= tol || options.phi_upper - fit.params[1] <= tol) {
    out.at_bound = true;
    out.warnings.push_back("phi = " + format_double(fit.params[1] * 180.0 / constants::kPi) +
                           " deg is within one sigma of a bound of its interval");
  }
  if (!fit.converged) out.warnings.push_back("tip-field fit reached its iteration limit");
  return out;
}

HyperfineFit fit_hyperfine_quadrupole(std::span<const NmrPeakSet> nmr_sets, const HyperfineFitOptions& options) {
  bool identifiable = false;
  std::size_t n_obs = 0;
  bool weighted = true;
  for (const auto& s : nmr_sets) {
    std::set<int> labels;
    for (const auto& p : s.peaks)
      if (p.label > 0) labels.insert(p.label), ++n_obs, weighted = weighted && p.center_sigma > 0.0;
    if (labels.size() >= 2) identifiable = true;
    if (!labels.empty() && !std::isfinite(s.b_z)) throw std::invalid_argument("NMR peak set without a field value");
  }
  if (!identifiable)
    throw RankDeficiencyError("A_z and kappa need at least two distinct labeled transitions at one field");

  struct Observation {
    double predicted, measured, sigma;
  };
  auto observe = [&](std::span<const double> p) {
    const SpinSystem sys = model_system(options.base, options.g_e_z, p[0], p[1], options.g_n);
    std::vector<Observation> obs;
    for (const auto& s : nmr_sets) {
      if (std::none_of(s.peaks.begin(), s.peaks.end(), [](const NmrPeak& pk) { return pk.label > 0; })) continue;
      const SpinEigensystem eig = solve(sys, model_field(s.b_z, options.b_tip, options.phi));
      for (const auto& pk : s.peaks)
        if (pk.label > 0)
          obs.push_back({predicted_nmr_frequency(eig, pk.label), pk.params.center, weighted ? pk.center_sigma : 1.0});
    }
    return obs;
  };
  auto residual = [&](std::span<const double> p) {
    std::vector<double> r;
    for (const auto& o : observe(p)) r.push_back((o.predicted - o.measured) / o.sigma);
    return r;
  };
  const LeastSquaresResult fit = least_squares(residual, {options.a_z_init, options.kappa_init}, {});
  if (fit.rank < 2) throw RankDeficiencyError("A_z and kappa are not separately determined by these transitions");

  HyperfineFit out;
  out.a_z = {fit.params[0], fit.sigma(0)};
  out.kappa = {fit.params[1], fit.sigma(1)};
  out.q_derived = model_system(options.base, options.g_e_z, fit.params[0], fit.params[1], options.g_n).quadrupole_q();
  out.n_observations = n_obs;
  double ss = 0.0;
  const auto obs = observe(fit.params);
  for (const auto& o : obs) ss += (o.predicted - o.measured) * (o.predicted - o.measured);
  out.residual_rms = std::sqrt(ss / static_cast<double>(obs.size()));
  if (!fit.converged) throw NotConvergedError("hyperfine/quadrupole fit reached its iteration limit");
  return out;
}

CalibrationResult recursive_calibration(std::span<const Spectrum> esr_data, std::span<const Spectrum> nmr_data,
                                        const CalibrationOptions& options) {
  if (esr_data.empty()) throw std::invalid_argument("calibration needs ESR spectra");
  if (options.max_iterations < 1) throw std::invalid_argument("max_iterations must be at least 1");
  CalibrationResult result;
  const int n_esr = options.base.i_nuclear.multiplicity();

  // Stage 1: ESR peaks per field.
  for (std::size_t k = 0; k < esr_data.size(); ++k) {
    const auto bz = esr_data[k].meta_number(meta_keys::kBz);
    if (!bz) throw CalibrationStageError("esr_peaks", "ESR spectrum " + std::to_string(k) + " has no b_z_tesla");
    try {
      result.esr_peaks.push_back(fit_esr_peaks(esr_data[k], n_esr, options.esr));
    } catch (const std::exception& e) {
      throw CalibrationStageError("esr_peaks", "field " + format_double(*bz) + " T: " + e.what());
    }
    for (const auto& w : result.esr_peaks.back().warnings)
      result.warnings.push_back("ESR " + format_double(*bz) + " T: " + w);
  }
  std::sort(result.esr_peaks.begin(), result.esr_peaks.end(),
            [](const EsrPeakSet& a, const EsrPeakSet& b) { return a.b_z < b.b_z; });

  std::set<double> fields;
  for (const auto& s : result.esr_peaks) fields.insert(s.b_z);
  result.g_n = {options.g_n, 0.0};
  result.a_z = {options.a_z_init, 0.0};
  result.kappa = {options.kappa_init, 0.0};
  if (fields.size() < 2) {
    result.partial = true;
    result.warnings.push_back("the Zeeman regression needs ESR spectra at two or more fields");
    return result;
  }

  // f0 is the mean fitted line position.
  std::vector<FieldPoint> f0_points;
  for (const auto& s : result.esr_peaks) {
    double mean = 0.0, var = 0.0;
    for (std::size_t j = 0; j < s.centers.size(); ++j) {
      mean += s.centers[j];
      var += s.center_sigmas[j] * s.center_sigmas[j];
    }
    const double n = static_cast<double>(s.centers.size());
    f0_points.push_back({s.b_z, mean / n, std::sqrt(var) / n});
  }

  // Stage 4 fits are repeated per iteration because the labels follow the iterate.
  auto fit_nmr_sets = [&](const SpinSystem& sys, double b_tip, double phi) {
    std::vector<NmrPeakSet> sets;
    for (std::size_t k = 0; k < nmr_data.size(); ++k) {
      const auto bz = nmr_data[k].meta_number(meta_keys::kBz);
      if (!bz) throw CalibrationStageError("nmr_peaks", "NMR spectrum " + std::to_string(k) + " has no b_z_tesla");
      NmrFitOptions no = options.nmr;
      no.model = sys;
      no.model_field = model_field(*bz, b_tip, phi);
      try {
        sets.push_back(fit_nmr_peaks(nmr_data[k], options.nmr_peaks, no));
      } catch (const std::exception& e) {
        throw CalibrationStageError("nmr_peaks", "field " + format_double(*bz) + " T: " + e.what());
      }
    }
    return sets;
  };

  // Stage 2: Zeeman regression, once.
  ZeemanFit zeeman;
  try {
    zeeman = fit_f0_linear(f0_points);
  } catch (const std::exception& e) {
    throw CalibrationStageError("zeeman", e.what());
  }

  double a_z = options.a_z_init, kappa = options.kappa_init;
  Estimate g = zeeman.g_e_z;
  std::optional<TipFieldResult> tip;
  std::optional<HyperfineFit> hf;
  for (int it = 1; it <= options.max_iterations; ++it) {
    // Stage 3: tip field at the current hyperfine constant.
    TipFitOptions to;
    to.g_e_z = g.value;
    to.fit_g_e_z = options.refine_g_e_z;
    to.line_mean_only = options.refine_g_e_z;
    to.a_z = a_z;
    to.base = options.base;
    to.b_tip_init = tip ? tip->b_tip.value : zeeman.b_tip_z.value;
    if (tip) to.phi_init = tip->phi.value;
    try {
      tip = fit_tip_field(result.esr_peaks, to);
    } catch (const std::exception& e) {
      throw CalibrationStageError("tip_field", e.what());
    }
    if (tip->g_e_z) g = *tip->g_e_z;

    IterationRecord rec;
    rec.iteration = it;
    rec.g_e_z = g.value;
    rec.b_tip_z = tip->b_tip.value * std::cos(tip->phi.value);
    rec.b_tip = tip->b_tip.value;
    rec.phi = tip->phi.value;
    rec.zeeman_rms = zeeman.residual_rms;
    rec.tip_rms = tip->residual_rms;

    if (nmr_data.empty()) {
      rec.a_z = a_z;
      rec.kappa = kappa;
      rec.max_relative_change = std::numeric_limits<double>::infinity();
      result.history.push_back(rec);
      result.iterations = it;
      result.partial = true;
      result.warnings.push_back("no NMR spectra: A_z and kappa keep their initial values");
      break;
    }

    // Stages 4 and 5.
    const SpinSystem current = model_system(options.base, g.value, a_z, kappa, options.g_n);
    result.nmr_peaks = fit_nmr_sets(current, tip->b_tip.value, tip->phi.value);
    HyperfineFitOptions ho;
    ho.g_e_z = g.value;
    ho.b_tip = tip->b_tip.value;
    ho.phi = tip->phi.value;
    ho.g_n = options.g_n;
    ho.base = options.base;
    ho.a_z_init = a_z;
    ho.kappa_init = kappa;
    try {
      hf = fit_hyperfine_quadrupole(result.nmr_peaks, ho);
    } catch (const std::exception& e) {
      throw CalibrationStageError("hyperfine_quadrupole", e.what());
    }
    a_z = hf->a_z.value;
    kappa = hf->kappa.value;
    rec.a_z = a_z;
    rec.kappa = kappa;
    rec.hyperfine_rms = hf->residual_rms;

    if (result.history.empty()) {
      rec.max_relative_change = std::numeric_limits<double>::infinity();
    } else {
      const auto& prev = result.history.back();
      rec.max_relative_change = std::max({relative_change(rec.g_e_z, prev.g_e_z),
                                          relative_change(rec.b_tip, prev.b_tip), relative_change(rec.phi, prev.phi),
                                          relative_change(rec.a_z, prev.a_z), relative_change(rec.kappa, prev.kappa)});
    }
    result.history.push_back(rec);
    result.iterations = it;
    if (rec.max_relative_change < options.tolerance) {
      result.converged = true;
      break;
    }
    const std::size_t h = result.history.size();
    if (h >= 4 && result.history[h - 1].max_relative_change >= result.history[h - 2].max_relative_change &&
        result.history[h - 2].max_relative_change >= result.history[h - 3].max_relative_change) {
      result.warnings.push_back("parameter changes stopped decreasing over three iterations");
      break;
    }
  }
  if (!result.converged && !result.partial && result.iterations == options.max_iterations)
    result.warnings.push_back("iteration limit reached before convergence");

  result.zeeman = zeeman;
  result.b_tip = tip->b_tip;
  result.phi = tip->phi;
  if (options.refine_g_e_z) {
    result.g_e_z = g;
    const double c = std::cos(tip->phi.value), sn = std::sin(tip->phi.value);
    result.b_tip_z = {tip->b_tip.value * c, std::hypot(c * tip->b_tip.sigma, tip->b_tip.value * sn * tip->phi.sigma)};
  } else {
    result.g_e_z = zeeman.g_e_z;
    result.b_tip_z = zeeman.b_tip_z;
  }
  for (const auto& w : tip->warnings) result.warnings.push_back("tip field: " + w);
  if (hf) {
    result.a_z = hf->a_z;
    result.kappa = hf->kappa;
  }
  result.q_derived = model_system(options.base, result.g_e_z.value, result.a_z.value, result.kappa.value, options.g_n)
                         .quadrupole_q();

  std::vector<FieldPoint> transition_one;
  for (const auto& s : result.nmr_peaks)
    if (const NmrPeak* p = s.find(1)) transition_one.push_back({s.b_z, p->params.center, p->center_sigma});
  std::set<double> one_fields;
  for (const auto& p : transition_one) one_fields.insert(p.b_z);
  if (one_fields.size() >= 2) result.g_n_slope = fit_nuclear_g(transition_one);
  return result;
}

}  // namespace endorkit
