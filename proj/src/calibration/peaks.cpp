#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <sstream>

#include "endorkit/calibration.hpp"

namespace endorkit {

namespace {

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  const auto mid = v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2);
  std::nth_element(v.begin(), mid, v.end());
  if (v.size() % 2 == 1) return *mid;
  return 0.5 * (*mid + *std::max_element(v.begin(), mid));
}

std::vector<double> boxcar(std::span<const double> s, std::size_t half) {
  std::vector<double> out(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    const std::size_t lo = i >= half ? i - half : 0;
    const std::size_t hi = std::min(s.size() - 1, i + half);
    double sum = 0.0;
    for (std::size_t k = lo; k <= hi; ++k) sum += s[k];
    out[i] = sum / static_cast<double>(hi - lo + 1);
  }
  return out;
}

struct Candidate {
  std::size_t index;
  double height;  // signed, relative to the baseline
  double width;   // full width at half height, MHz
};

// Up to n features of the smoothed, baseline-subtracted signal, strongest
// first. Each pick is removed as a Lorentzian of its half-height width
// before the next search so that the flanks of a strong line are not
// mistaken for a weak neighbour. Picks closer than min_sep to an earlier one
// are skipped.
std::vector<Candidate> find_candidates(const Spectrum& spec, std::size_t n, double min_sep, double smoothing_mhz,
                                       double noise, double& baseline) {
  const std::size_t size = spec.size();
  const double step = (spec.frequencies.back() - spec.frequencies.front()) / static_cast<double>(size - 1);
  const auto half = static_cast<std::size_t>(std::max(0.0, std::round(0.5 * smoothing_mhz / step)));
  std::vector<double> rest = boxcar(spec.signal, half);
  baseline = median(rest);
  for (double& x : rest) x -= baseline;

  // Smoothing lowers the noise by roughly the square root of the window.
  const double threshold = 4.0 * noise / std::sqrt(static_cast<double>(2 * half + 1));
  std::vector<Candidate> picked;
  while (picked.size() < n) {
    std::optional<std::size_t> best;
    for (std::size_t i = 0; i < size; ++i) {
      const bool clear = std::none_of(picked.begin(), picked.end(), [&](const Candidate& c) {
        return std::abs(spec.frequencies[c.index] - spec.frequencies[i]) < min_sep;
      });
      if (clear && (!best || std::abs(rest[i]) > std::abs(rest[*best]))) best = i;
    }
    if (!best || !(std::abs(rest[*best]) > threshold)) break;
    const std::size_t idx = *best;
    const double h = rest[idx];
    std::size_t lo = idx, hi = idx;
    while (lo > 0 && rest[lo] * h > 0.5 * h * h) --lo;
    while (hi + 1 < size && rest[hi] * h > 0.5 * h * h) ++hi;
    const double width = std::max(spec.frequencies[hi] - spec.frequencies[lo], 3.0 * step);
    for (std::size_t i = 0; i < size; ++i) {
      const double x = 2.0 * (spec.frequencies[i] - spec.frequencies[idx]) / width;
      rest[i] -= h / (1.0 + x * x);
    }
    picked.push_back({idx, h, width});
  }
  std::sort(picked.begin(), picked.end(), [](const Candidate& a, const Candidate& b) { return a.index < b.index; });
  return picked;
}

double rms(std::span<const double> r) {
  if (r.empty()) return 0.0;
  double s = 0.0;
  for (double x : r) s += x * x;
  return std::sqrt(s / static_cast<double>(r.size()));
}

void require_fit_input(const Spectrum& spec, std::size_t n_params) {
  spec.validate();
  if (spec.size() < n_params + 3)
    throw std::invalid_argument("spectrum has " + std::to_string(spec.size()) + " points, too few for " +
                                std::to_string(n_params) + " parameters");
}

const ParameterBounds kFree{};

}  // namespace

double estimate_noise(std::span<const double> signal) {
  if (signal.size() < 3) return 0.0;
  std::vector<double> d(signal.size() - 1);
  for (std::size_t k = 0; k + 1 < signal.size(); ++k) d[k] = signal[k + 1] - signal[k];
  const double m = median(d);
  for (double& x : d) x = std::abs(x - m);
  return 1.4826 * median(d) / std::sqrt(2.0);
}

// ---------------------------------------------------------------------------
// ESR

namespace {

struct EsrLayout {
  std::size_t n = 0;
  bool constrained = true;
  bool shared_width = true;
  double mid = 0.0;  // background pivot

  // Constrained: f0, spacing, log_amp, beta, width, bg0, bg1, q[n]. For a
  // single peak spacing and beta are dropped.
  // Free: center[n], amp[n], width[1 or n], bg0, bg1, q[n].
  std::size_t size() const {
    if (constrained) return (n > 1 ? 7 : 5) + n;
    return 2 * n + (shared_width ? 1 : n) + 2 + n;
  }

  std::vector<FanoParams> lines(std::span<const double> p) const {
    std::vector<FanoParams> out(n);
    if (constrained) {
      const bool multi = n > 1;
      const double f0 = p[0];
      const double spacing = multi ? p[1] : 0.0;
      const double amp = multi ? p[2] : p[1];
      const double beta = multi ? p[3] : 0.0;
      const double width = multi ? p[4] : p[2];
      const std::size_t q0 = multi ? 7 : 5;
      for (std::size_t k = 0; k < n; ++k) {
        const double pos = static_cast<double>(k) - 0.5 * static_cast<double>(n - 1);
        out[k] = FanoParams{f0 + spacing * pos, width, p[q0 + k], amp * std::exp(-beta * static_cast<double>(k))};
      }
    } else {
      const std::size_t w0 = 2 * n, nw = shared_width ? 1 : n, q0 = w0 + nw + 2;
      for (std::size_t k = 0; k < n; ++k)
        out[k] = FanoParams{p[k], p[w0 + (shared_width ? 0 : k)], p[q0 + k], p[n + k]};
    }
    return out;
  }

  std::pair<double, double> background(std::span<const double> p) const {
    if (constrained) return n > 1 ? std::pair{p[5], p[6]} : std::pair{p[3], p[4]};
    const std::size_t b0 = 2 * n + (shared_width ? 1 : n);
    return {p[b0], p[b0 + 1]};
  }

  std::vector<double> model(std::span<const double> f, std::span<const double> p) const {
    const auto ls = lines(p);
    const auto [b0, b1] = background(p);
    std::vector<double> y(f.size());
    for (std::size_t i = 0; i < f.size(); ++i) {
      double v = b0 + b1 * (f[i] - mid);
      for (const auto& l : ls) v += fano(f[i], l);
      y[i] = v;
    }
    return y;
  }
};

struct EsrAttempt {
  LeastSquaresResult fit;
  EsrLayout layout;
};

EsrAttempt run_esr_fit(const Spectrum& spec, const EsrLayout& layout, std::vector<double> init,
                       std::vector<ParameterBounds> bounds, double noise) {
  auto residual = [&](std::span<const double> p) {
    std::vector<double> r = layout.model(spec.frequencies, p);
    for (std::size_t i = 0; i < r.size(); ++i) r[i] = (r[i] - spec.signal[i]) / noise;
    return r;
  };
  return {least_squares(residual, std::move(init), bounds), layout};
}

EsrPeakSet summarize_esr(const Spectrum& spec, const EsrAttempt& a, double noise) {
  EsrPeakSet out;
  out.b_z = spec.meta_number(meta_keys::kBz).value_or(std::numeric_limits<double>::quiet_NaN());
  out.noise_estimate = noise;
  out.converged = a.fit.converged;
  const auto& p = a.fit.params;
  const auto& L = a.layout;
  out.fano_params = L.lines(p);
  // (q, A) and (-1/q, -A q^2) describe the same curve; report |q| >= 1.
  for (auto& fp : out.fano_params) {
    const double q = fp.asymmetry_q;
    if (q != 0.0 && std::abs(q) < 1.0) {
      fp.amplitude = -fp.amplitude * q * q;
      fp.asymmetry_q = -1.0 / q;
    }
  }
  std::tie(out.background_offset, out.background_slope) = L.background(p);
  const std::vector<double> y = L.model(spec.frequencies, p);
  std::vector<double> r(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) r[i] = y[i] - spec.signal[i];
  out.fit_quality = rms(r);

  const std::size_t n = L.n;
  for (const auto& fp : out.fano_params) out.centers.push_back(fp.center);
  out.center_sigmas.resize(n);
  if (L.constrained) {
    const bool multi = n > 1;
    out.center_f0 = {p[0], a.fit.sigma(0)};
    if (multi) {
      out.spacing = {p[1], a.fit.sigma(1)};
      out.beta = {p[3], a.fit.sigma(3)};
    }
    const auto& cov = a.fit.covariance;
    for (std::size_t k = 0; k < n; ++k) {
      const double pos = static_cast<double>(k) - 0.5 * static_cast<double>(n - 1);
      double var = cov.rows() > 0 ? cov(0, 0) : 0.0;
      if (multi && cov.rows() > 1) var += pos * pos * cov(1, 1) + 2.0 * pos * cov(0, 1);
      out.center_sigmas[k] = std::sqrt(std::max(0.0, var));
    }
  } else {
    double mean = 0.0, var = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      out.center_sigmas[k] = a.fit.sigma(k);
      mean += out.centers[k];
      for (std::size_t j = 0; j < n && j < a.fit.covariance.rows(); ++j) var += a.fit.covariance(k, j);
    }
    const double dn = static_cast<double>(n);
    out.center_f0 = {mean / dn, std::sqrt(std::max(0.0, var)) / dn};
    if (n > 1) {
      // Least-squares line through the centers.
      double sx = 0, sy = 0, sxx = 0, sxy = 0;
      for (std::size_t k = 0; k < n; ++k) {
        const double x = static_cast<double>(k);
        sx += x, sy += out.centers[k], sxx += x * x, sxy += x * out.centers[k];
      }
      out.spacing = {(dn * sxy - sx * sy) / (dn * sxx - sx * sx), 0.0};
    }
  }

  // Peaks may be emitted out of order in free mode.
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return out.centers[i] < out.centers[j]; });
  EsrPeakSet sorted = out;
  for (std::size_t k = 0; k < n; ++k) {
    sorted.centers[k] = out.centers[order[k]];
    sorted.center_sigmas[k] = out.center_sigmas[order[k]];
    sorted.fano_params[k] = out.fano_params[order[k]];
  }
  if (sorted.fit_quality > 3.0 * noise)
    sorted.warnings.push_back("residual rms " + format_double(sorted.fit_quality) + " exceeds 3x the noise estimate " +
                              format_double(noise) + "; check the number of peaks");
  return sorted;
}

}  // namespace

EsrPeakSet fit_esr_peaks(const Spectrum& spec, int n_peaks, const EsrFitOptions& options) {
  if (n_peaks < 1) throw std::invalid_argument("n_peaks must be at least 1");
  const auto n = static_cast<std::size_t>(n_peaks);
  EsrLayout constrained{n, true, true, 0.0};
  require_fit_input(spec, constrained.size());
  constrained.mid = 0.5 * (spec.frequencies.front() + spec.frequencies.back());

  const double raw_noise = estimate_noise(spec.signal);
  double peak_to_peak = 0.0;
  for (double s : spec.signal) peak_to_peak = std::max(peak_to_peak, std::abs(s - spec.signal.front()));
  const double noise = std::max(raw_noise, 1e-9 * peak_to_peak);

  double baseline = 0.0;
  const double min_sep = n > 1 ? 0.5 * options.expected_spacing_mhz : 0.0;
  const auto cand = find_candidates(spec, n, min_sep, options.smoothing_mhz, noise, baseline);
  EsrPeakSet empty;
  empty.b_z = spec.meta_number(meta_keys::kBz).value_or(std::numeric_limits<double>::quiet_NaN());
  empty.noise_estimate = noise;
  if (peak_to_peak == 0.0 || cand.size() < n)
    throw FitNotConverged<EsrPeakSet>("ESR fit: found " + std::to_string(cand.size()) + " of " +
                                          std::to_string(n) + " peaks above the noise",
                                      empty);

  // Stage 1: symmetric Lorentzians, used to seed the Fano model.
  const double w_init = std::max_element(cand.begin(), cand.end(), [](auto& a, auto& b) {
                          return std::abs(a.height) < std::abs(b.height);
                        })->width;
  const double span = spec.frequencies.back() - spec.frequencies.front();
  std::vector<double> lc, la;
  {
    std::vector<double> init;
    std::vector<ParameterBounds> bounds;
    for (const auto& c : cand) init.push_back(spec.frequencies[c.index]), bounds.push_back(kFree);
    for (const auto& c : cand) init.push_back(c.height), bounds.push_back(kFree);
    init.push_back(w_init), bounds.push_back({1e-6 * span, span});
    init.push_back(baseline), bounds.push_back(kFree);
    init.push_back(0.0), bounds.push_back(kFree);
    auto residual = [&](std::span<const double> p) {
      std::vector<double> r(spec.size());
      for (std::size_t i = 0; i < r.size(); ++i) {
        const double f = spec.frequencies[i];
        double v = p[2 * n + 1] + p[2 * n + 2] * (f - constrained.mid);
        for (std::size_t k = 0; k < n; ++k) v += lorentzian(f, {p[k], p[2 * n], p[n + k]});
        r[i] = (v - spec.signal[i]) / noise;
      }
      return r;
    };
    LeastSquaresOptions lo;
    lo.max_iterations = 200;
    const auto fit = least_squares(residual, init, bounds, lo);
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return fit.params[i] < fit.params[j]; });
    for (std::size_t k : order) lc.push_back(fit.params[k]), la.push_back(fit.params[n + k]);
    baseline = fit.params[2 * n + 1];
  }
  const double lw = w_init;

  // Stage 2: constrained Fano model from several starting asymmetries.
  std::optional<EsrAttempt> best;
  for (double q0 : {3.0, -3.0, 1.0, -1.0, 0.0}) {
    std::vector<double> init;
    std::vector<ParameterBounds> bounds;
    double f0 = 0.0;
    std::vector<double> amps(n);
    for (std::size_t k = 0; k < n; ++k) {
      // A Fano line with q != 0 peaks w/(2q) above its center at amplitude q^2.
      f0 += lc[k] - (q0 != 0.0 ? lw / (2.0 * q0) : 0.0);
      amps[k] = q0 != 0.0 ? la[k] / (q0 * q0) : -la[k];
    }
    f0 /= static_cast<double>(n);
    init.push_back(f0), bounds.push_back(kFree);
    if (n > 1) {
      const double spacing = (lc.back() - lc.front()) / static_cast<double>(n - 1);
      // Boltzmann exponent from a log-linear fit of |amplitude|.
      double sx = 0, sy = 0, sxx = 0, sxy = 0;
      for (std::size_t k = 0; k < n; ++k) {
        const double x = static_cast<double>(k), y = std::log(std::max(std::abs(amps[k]), 1e-300));
        sx += x, sy += y, sxx += x * x, sxy += x * y;
      }
      const double dn = static_cast<double>(n);
      const double beta = -(dn * sxy - sx * sy) / (dn * sxx - sx * sx);
      const double sign = std::accumulate(amps.begin(), amps.end(), 0.0) >= 0.0 ? 1.0 : -1.0;
      const double a0 = sign * std::exp((sy + beta * sx) / dn);
      init.push_back(spacing), bounds.push_back(kFree);
      init.push_back(a0), bounds.push_back(kFree);
      init.push_back(beta), bounds.push_back(kFree);
    } else {
      init.push_back(amps[0]), bounds.push_back(kFree);
    }
    init.push_back(lw), bounds.push_back({1e-6 * span, span});
    init.push_back(baseline), bounds.push_back(kFree);
    init.push_back(0.0), bounds.push_back(kFree);
    for (std::size_t k = 0; k < n; ++k) init.push_back(q0), bounds.push_back({-100.0, 100.0});
    try {
      EsrAttempt a = run_esr_fit(spec, constrained, init, bounds, noise);
      if (!best || a.fit.residual_norm < best->fit.residual_norm) best = std::move(a);
    } catch (const DivergedError&) {
    }
  }
  if (!best) throw FitNotConverged<EsrPeakSet>("ESR fit diverged from every starting point", empty);

  EsrPeakSet anchored = summarize_esr(spec, *best, noise);
  if (!anchored.converged) throw FitNotConverged<EsrPeakSet>("ESR fit reached its iteration limit", anchored);
  if (options.constraint == EsrConstraint::equal_spacing_boltzmann) return anchored;

  EsrLayout free{n, false, options.shared_width, constrained.mid};
  const auto lines = constrained.lines(best->fit.params);
  const auto [b0, b1] = constrained.background(best->fit.params);
  std::vector<double> init;
  std::vector<ParameterBounds> bounds;
  for (const auto& l : lines) init.push_back(l.center), bounds.push_back(kFree);
  for (const auto& l : lines) init.push_back(l.amplitude), bounds.push_back(kFree);
  for (std::size_t k = 0; k < (options.shared_width ? 1 : n); ++k)
    init.push_back(lines[0].width), bounds.push_back({1e-6 * span, span});
  init.push_back(b0), bounds.push_back(kFree);
  init.push_back(b1), bounds.push_back(kFree);
  for (const auto& l : lines) init.push_back(l.asymmetry_q), bounds.push_back({-100.0, 100.0});
  EsrPeakSet out;
  try {
    out = summarize_esr(spec, run_esr_fit(spec, free, init, bounds, noise), noise);
  } catch (const DivergedError& e) {
    throw FitNotConverged<EsrPeakSet>(std::string("free ESR refit diverged: ") + e.what(), anchored);
  }
  // The equal-spacing anchor stays the reference for f0.
  out.center_f0 = anchored.center_f0;
  out.spacing = anchored.spacing;
  out.beta = anchored.beta;
  if (!out.converged) throw FitNotConverged<EsrPeakSet>("free ESR refit reached its iteration limit", out);
  return out;
}

// ---------------------------------------------------------------------------
// NMR

const NmrPeak* NmrPeakSet::find(int label) const {
  for (const auto& p : peaks)
    if (p.label == label) return &p;
  return nullptr;
}

double predicted_nmr_frequency(const SpinEigensystem& eig, int numeral) {
  const auto [lo, hi] = nmr_pair_for_numeral(numeral, eig.i_nuclear);
  return std::abs(eig.energy(hi) - eig.energy(lo));
}

void assign_nmr_labels(NmrPeakSet& set, const SpinSystem& sys, const FieldConfig& field) {
  const SpinEigensystem eig = solve(sys, field);
  std::vector<int> labels{1, 2, 3, 4};
  std::vector<double> predicted;
  for (int n : labels) predicted.push_back(predicted_nmr_frequency(eig, n));
  const std::size_t n = set.peaks.size();
  if (n > labels.size()) throw std::invalid_argument("at most four NMR peaks can be labeled");

  // Exhaustive search over ordered choices of n labels out of four.
  std::vector<int> best;
  double best_cost = std::numeric_limits<double>::infinity();
  std::vector<int> perm = labels;
  std::sort(perm.begin(), perm.end());
  do {
    double cost = 0.0;
    for (std::size_t k = 0; k < n; ++k)
      cost += std::abs(set.peaks[k].params.center - predicted[static_cast<std::size_t>(perm[k] - 1)]);
    if (cost < best_cost - 1e-12) {
      best_cost = cost;
      best.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n));
    }
  } while (std::next_permutation(perm.begin(), perm.end()));
  for (std::size_t k = 0; k < n; ++k) set.peaks[k].label = best[k];
  std::sort(set.peaks.begin(), set.peaks.end(), [](const NmrPeak& a, const NmrPeak& b) { return a.label < b.label; });
}

NmrPeakSet fit_nmr_peaks(const Spectrum& spec, int n_peaks, const NmrFitOptions& options) {
  if (n_peaks < 1 || n_peaks > 4) throw std::invalid_argument("n_peaks must be between 1 and 4");
  const auto n = static_cast<std::size_t>(n_peaks);
  require_fit_input(spec, 3 * n + 2);
  const double mid = 0.5 * (spec.frequencies.front() + spec.frequencies.back());
  const double span = spec.frequencies.back() - spec.frequencies.front();
  const double step = span / static_cast<double>(spec.size() - 1);

  double peak_to_peak = 0.0;
  for (double s : spec.signal) peak_to_peak = std::max(peak_to_peak, std::abs(s - spec.signal.front()));
  const double noise = std::max(estimate_noise(spec.signal), 1e-9 * peak_to_peak);
  double baseline = 0.0;
  const auto cand = find_candidates(spec, n, options.min_separation_mhz, options.smoothing_mhz, noise, baseline);

  NmrPeakSet out;
  out.b_z = spec.meta_number(meta_keys::kBz).value_or(std::numeric_limits<double>::quiet_NaN());
  out.noise_estimate = noise;
  if (peak_to_peak == 0.0 || cand.size() < n)
    throw FitNotConverged<NmrPeakSet>("NMR fit: found " + std::to_string(cand.size()) + " of " + std::to_string(n) +
                                          " peaks above the noise",
                                      out);

  std::vector<double> init;
  std::vector<ParameterBounds> bounds;
  for (const auto& c : cand) {
    init.push_back(spec.frequencies[c.index]);
    bounds.push_back({spec.frequencies.front(), spec.frequencies.back()});
    init.push_back(c.width);
    bounds.push_back({step, span});
    init.push_back(c.height);
    bounds.push_back(kFree);
  }
  init.push_back(baseline), bounds.push_back(kFree);
  init.push_back(0.0), bounds.push_back(kFree);

  auto model = [&](std::span<const double> p, std::size_t i) {
    const double f = spec.frequencies[i];
    double v = p[3 * n] + p[3 * n + 1] * (f - mid);
    for (std::size_t k = 0; k < n; ++k) v += lorentzian(f, {p[3 * k], p[3 * k + 1], p[3 * k + 2]});
    return v;
  };
  auto residual = [&](std::span<const double> p) {
    std::vector<double> r(spec.size());
    for (std::size_t i = 0; i < r.size(); ++i) r[i] = (model(p, i) - spec.signal[i]) / noise;
    return r;
  };
  LeastSquaresResult fit;
  try {
    fit = least_squares(residual, init, bounds);
  } catch (const DivergedError& e) {
    throw FitNotConverged<NmrPeakSet>(std::string("NMR fit diverged: ") + e.what(), out);
  }

  for (std::size_t k = 0; k < n; ++k)
    out.peaks.push_back({0, {fit.params[3 * k], fit.params[3 * k + 1], fit.params[3 * k + 2]}, fit.sigma(3 * k)});
  std::sort(out.peaks.begin(), out.peaks.end(),
            [](const NmrPeak& a, const NmrPeak& b) { return a.params.center < b.params.center; });
  for (std::size_t k = 0; k < n; ++k) out.peaks[k].label = static_cast<int>(k + 1);
  out.background_offset = fit.params[3 * n];
  out.background_slope = fit.params[3 * n + 1];
  std::vector<double> r(spec.size());
  for (std::size_t i = 0; i < r.size(); ++i) r[i] = model(fit.params, i) - spec.signal[i];
  out.fit_quality = rms(r);
  out.converged = fit.converged;
  if (out.fit_quality > 3.0 * noise)
    out.warnings.push_back("residual rms " + format_double(out.fit_quality) + " exceeds 3x the noise estimate " +
                           format_double(noise) + "; check the number of peaks");
  if (options.model) {
    FieldConfig field = options.model_field.value_or(FieldConfig{});
    if (!options.model_field) field = field.with_b_z(out.b_z);
    assign_nmr_labels(out, *options.model, field);
  }
  if (!out.converged) throw FitNotConverged<NmrPeakSet>("NMR fit reached its iteration limit", out);
  return out;
}

}  // namespace endorkit
