#include <glob.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <ostream>
#include <set>

#include <CLI11.hpp>

#include "endorkit/cli.hpp"
#include "endorkit/dataset.hpp"
#include "endorkit/io.hpp"

namespace endorkit::cli {

namespace fs = std::filesystem;

namespace {

/// Bad flags or input files; mapped to exit code 2.
class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::vector<double> stepped_grid(double start, double stop, double step, const std::string& what) {
  if (!(step > 0.0) || !std::isfinite(step)) throw InputError(what + ": step must be positive");
  if (!(stop > start)) throw InputError(what + ": stop must exceed start");
  // The last point reaches or passes stop.
  const auto n = static_cast<std::size_t>(std::ceil((stop - start) / step - 1e-9)) + 1;
  if (n < 2) throw InputError(what + ": grid needs at least two points");
  std::vector<double> g(n);
  for (std::size_t k = 0; k < n; ++k) g[k] = start + step * static_cast<double>(k);
  return g;
}

std::vector<std::string> expand_glob(const std::string& pattern) {
  glob_t g{};
  const int rc = ::glob(pattern.c_str(), 0, nullptr, &g);
  std::vector<std::string> out;
  if (rc == 0)
    for (std::size_t k = 0; k < g.gl_pathc; ++k) out.emplace_back(g.gl_pathv[k]);
  ::globfree(&g);
  std::sort(out.begin(), out.end());
  return out;
}

fs::path output_path(const RunConfig& cfg, const std::string& flag, const std::string& fallback) {
  return flag.empty() ? cfg.output_dir / fallback : fs::path(flag);
}

void emit(const fs::path& path, const std::string& content, std::ostream& out) {
  if (path == "-") {
    out << content;
    return;
  }
  write_file_atomic(path, content);
  out << "wrote " << path.string() << "\n";
}

fs::path with_suffix(const fs::path& p, const std::string& suffix) {
  fs::path q = p;
  q.replace_filename(p.stem().string() + suffix + p.extension().string());
  return q;
}

std::optional<TransferTable> load_transfer(const RunConfig& cfg) {
  if (!cfg.transfer_table) return std::nullopt;
  try {
    return TransferTable::load_csv(cfg.transfer_table->string());
  } catch (const std::exception& e) {
    throw InputError("transfer_table: " + std::string(e.what()));
  }
}

FieldConfig field_at(const RunConfig& cfg, std::optional<double> b_z) {
  return b_z ? cfg.field.with_b_z(*b_z) : cfg.field;
}

Spectrum simulate_endor(const RunConfig& cfg, const FieldConfig& field, double f_esr, std::span<const double> grid,
                        const std::optional<TransferTable>& transfer) {
  EndorSynthOptions eo;
  eo.esr_fwhm = cfg.lineshape.esr_fwhm_mhz;
  eo.nmr_fwhm = cfg.lineshape.nmr_fwhm_mhz;
  eo.esr_window_fwhm = cfg.lineshape.esr_window_fwhm;
  eo.observable = cfg.lineshape.observable;
  if (!transfer) return synth_endor_spectrum(cfg.spin_system, field, f_esr, grid, cfg.pump, eo);
  // The drive rate follows the square of the delivered RF amplitude.
  Spectrum out;
  for (double f : grid) {
    PumpConfig pump = cfg.pump;
    const double ratio = apply_transfer(1.0, f, *transfer);
    pump.omega_nmr *= ratio * ratio;
    const double point[1] = {f};
    Spectrum one = synth_endor_spectrum(cfg.spin_system, field, f_esr, point, pump, eo);
    if (out.frequencies.empty()) out.meta = one.meta;
    out.frequencies.push_back(f);
    out.signal.push_back(one.signal.front());
  }
  return out;
}

struct Common {
  std::string config_path;
};

// ---------------------------------------------------------------------------

struct PredictFlags {
  std::string channel = "all";
  std::optional<double> b_z;
  double weight_floor = 1e-6;
  std::string output;
};

int cmd_predict(const RunConfig& cfg, const PredictFlags& f, std::ostream& out) {
  const SpinEigensystem eig = solve(cfg.spin_system, field_at(cfg, f.b_z));
  std::vector<TransitionLine> lines;
  if (f.channel == "dq") {
    for (const auto& l : double_quantum_frequencies(eig))
      if (l.weight >= f.weight_floor) lines.push_back(l);
  } else {
    const Channel ch = f.channel == "esr" ? Channel::esr : f.channel == "nmr" ? Channel::nmr : Channel::all;
    lines = transition_catalog(eig, ch, f.weight_floor);
  }
  std::stable_sort(lines.begin(), lines.end(),
                   [](const TransitionLine& a, const TransitionLine& b) { return a.frequency < b.frequency; });
  emit(output_path(cfg, f.output, "lines.csv"), format_lines_csv(lines), out);
  return kOk;
}

// ---------------------------------------------------------------------------

struct SweepFlags {
  double b_start = 0.2, b_end = 1.4;
  int steps = 25;
  std::string output;
};

int cmd_sweep(const RunConfig& cfg, const SweepFlags& f, std::ostream& out) {
  if (!(f.b_end > f.b_start)) throw InputError("--b-end must exceed --b-start");
  if (f.steps < 2) throw InputError("--steps must be at least 2");
  const auto grid = linear_grid(f.b_start, f.b_end, static_cast<std::size_t>(f.steps));
  const auto rows = field_sweep(cfg.spin_system, cfg.field, grid);

  std::set<int> numerals;
  std::set<double> esr_m;
  for (const auto& r : rows) {
    for (const auto& [n, freq] : r.nmr) numerals.insert(n);
    for (const auto& [m, freq] : r.esr) esr_m.insert(m);
  }
  const std::size_t dim = cfg.spin_system.dim();
  std::string csv = "b_z_tesla";
  for (std::size_t k = 0; k < dim; ++k) csv += ",E" + std::to_string(k) + "_MHz";
  for (int n : numerals) csv += ",nmr_" + roman_numeral(n) + "_MHz";
  for (double m : esr_m) csv += ",esr_mi_" + format_double(m) + "_MHz";
  csv += ",hybridization,min_overlap\n";
  const double nan = std::numeric_limits<double>::quiet_NaN();
  for (const auto& r : rows) {
    csv += format_double(r.b_z);
    for (double e : r.energies) csv += "," + format_double(e);
    std::map<int, double> nmr(r.nmr.begin(), r.nmr.end());
    std::map<double, double> esr(r.esr.begin(), r.esr.end());
    for (int n : numerals) csv += "," + format_double(nmr.count(n) ? nmr[n] : nan);
    for (double m : esr_m) csv += "," + format_double(esr.count(m) ? esr[m] : nan);
    csv += "," + format_double(r.hybridization.value_or(nan)) + "," + format_double(r.min_overlap) + "\n";
  }
  emit(output_path(cfg, f.output, "sweep.csv"), csv, out);
  return kOk;
}

// ---------------------------------------------------------------------------

struct SimulateFlags {
  std::string mode;
  std::optional<double> b_z;
  std::optional<double> f_start, f_stop;
  double f_step = 0.5;
  std::optional<double> f_esr;
  double nmr_start = 30.0, nmr_stop = 110.0, nmr_step = 0.1;
  std::optional<double> esr_start, esr_stop;
  double esr_step = 2.0;
  double noise_sigma = 0.0;
  std::optional<std::uint64_t> seed;
  std::string output;
};

int cmd_simulate(const RunConfig& cfg, const SimulateFlags& f, std::ostream& out) {
  if (f.noise_sigma < 0.0 || !std::isfinite(f.noise_sigma)) throw InputError("--noise-sigma must be nonnegative");
  const FieldConfig field = field_at(cfg, f.b_z);
  const std::uint64_t seed = f.seed.value_or(cfg.seed);
  const auto transfer = load_transfer(cfg);
  const auto lines = esr_frequencies(cfg.spin_system, field);

  if (f.mode == "esr") {
    const double lo = f.f_start.value_or(lines.front().frequency - 100.0);
    const double hi = f.f_stop.value_or(lines.back().frequency + 100.0);
    const auto grid = stepped_grid(lo, hi, f.f_step, "ESR grid");
    EsrSynthOptions so;
    so.line_fwhm = cfg.lineshape.esr_fwhm_mhz;
    so.asymmetry_q = cfg.lineshape.esr_q;
    so.amplitude = cfg.lineshape.esr_amplitude;
    Spectrum s = synth_esr_spectrum(cfg.spin_system, field,
                                    boltzmann_populations(cfg.spin_system.i_nuclear, cfg.lineshape.esr_beta), grid, so);
    if (transfer)
      for (std::size_t k = 0; k < s.size(); ++k) s.signal[k] *= apply_transfer(1.0, s.frequencies[k], *transfer);
    if (f.noise_sigma > 0.0) s = add_noise(s, f.noise_sigma, seed);
    emit(output_path(cfg, f.output, "esr.csv"), format_spectrum_csv(s), out);
    return kOk;
  }

  const auto nmr_grid = stepped_grid(f.nmr_start, f.nmr_stop, f.nmr_step, "NMR grid");
  if (f.mode == "endor") {
    const double f_esr = f.f_esr.value_or(lines.front().frequency);
    Spectrum s = simulate_endor(cfg, field, f_esr, nmr_grid, transfer);
    s.set_meta("omega_nmr_per_s", cfg.pump.omega_nmr);
    s.set_meta("omega_esr_per_s", cfg.pump.omega_esr);
    if (f.noise_sigma > 0.0) s = add_noise(s, f.noise_sigma, seed);
    emit(output_path(cfg, f.output, "endor.csv"), format_spectrum_csv(s), out);
    return kOk;
  }

  // endor-map: rows f_nmr, columns f_esr. The default columns cover the
  // first three ESR lines.
  const std::size_t third = std::min<std::size_t>(2, lines.size() - 1);
  const double lo = f.esr_start.value_or(lines.front().frequency - 2.0 * cfg.lineshape.esr_fwhm_mhz);
  const double hi = f.esr_stop.value_or(lines[third].frequency + 2.0 * cfg.lineshape.esr_fwhm_mhz);
  const auto esr_grid = stepped_grid(lo, hi, f.esr_step, "ESR map axis");
  std::vector<std::vector<double>> values(nmr_grid.size(), std::vector<double>(esr_grid.size()));
  for (std::size_t c = 0; c < esr_grid.size(); ++c) {
    const Spectrum col = simulate_endor(cfg, field, esr_grid[c], nmr_grid, transfer);
    for (std::size_t r = 0; r < nmr_grid.size(); ++r) {
      const auto index = static_cast<std::uint64_t>(c * nmr_grid.size() + r);
      values[r][c] = col.signal[r] + (f.noise_sigma > 0.0 ? f.noise_sigma * gaussian_deviate(seed, index) : 0.0);
    }
  }
  const fs::path path = output_path(cfg, f.output, "endor_map.csv");
  const std::string corner = "f_nmr_MHz\\f_esr_MHz";
  emit(path, format_map_csv(corner, nmr_grid, esr_grid, values), out);
  if (path != "-")
    emit(with_suffix(path, "_colmean"), format_map_csv(corner, nmr_grid, esr_grid, subtract_column_means(values)), out);
  return kOk;
}

// ---------------------------------------------------------------------------

struct FitFlags {
  std::string kind;
  std::string input;
  std::optional<int> n_peaks;
  std::string constraint = "equal";
  bool no_model = false;
  std::string output;
};

Spectrum read_input(const std::string& path) {
  try {
    return read_spectrum(path);
  } catch (const FormatError& e) {
    throw InputError(e.what());
  }
}

int cmd_fit(const RunConfig& cfg, const FitFlags& f, std::ostream& out, std::ostream& err) {
  const Spectrum spec = read_input(f.input);
  const fs::path path = output_path(cfg, f.output, "fit_" + f.kind + ".json");
  if (f.kind == "esr") {
    EsrFitOptions o;
    o.constraint = f.constraint == "free" ? EsrConstraint::free : EsrConstraint::equal_spacing_boltzmann;
    const int n = f.n_peaks.value_or(cfg.spin_system.i_nuclear.multiplicity());
    try {
      const EsrPeakSet set = fit_esr_peaks(spec, n, o);
      emit(path, esr_fit_report(set, set.converged), out);
      for (const auto& w : set.warnings) err << "warning: " << w << "\n";
      return set.converged ? kOk : kNotConverged;
    } catch (const FitNotConverged<EsrPeakSet>& e) {
      emit(path, esr_fit_report(e.best_effort, false), out);
      err << "not converged: " << e.what() << "\n";
      return kNotConverged;
    }
  }
  NmrFitOptions o;
  const auto b_z = spec.meta_number(meta_keys::kBz);
  if (!f.no_model && b_z) {
    o.model = cfg.spin_system;
    o.model_field = cfg.field.with_b_z(*b_z);
  }
  try {
    const NmrPeakSet set = fit_nmr_peaks(spec, f.n_peaks.value_or(2), o);
    emit(path, nmr_fit_report(set, set.converged), out);
    for (const auto& w : set.warnings) err << "warning: " << w << "\n";
    return set.converged ? kOk : kNotConverged;
  } catch (const FitNotConverged<NmrPeakSet>& e) {
    emit(path, nmr_fit_report(e.best_effort, false), out);
    err << "not converged: " << e.what() << "\n";
    return kNotConverged;
  }
}

// ---------------------------------------------------------------------------

struct CalibrateFlags {
  std::string esr_glob, nmr_glob;
  std::optional<double> a_z_init, kappa_init, g_n;
  std::string output, config_out;
};

std::vector<Spectrum> read_field_series(const std::vector<std::string>& files) {
  std::vector<Spectrum> out;
  for (const auto& path : files) {
    Spectrum s = read_input(path);
    if (!s.meta_number(meta_keys::kBz))
      throw InputError(path + ": metadata header has no numeric " + std::string(meta_keys::kBz));
    out.push_back(std::move(s));
  }
  return out;
}

int cmd_calibrate(RunConfig cfg, const CalibrateFlags& f, std::ostream& out, std::ostream& err) {
  if (f.a_z_init) cfg.calibration.a_z_init_mhz = *f.a_z_init;
  if (f.kappa_init) cfg.calibration.kappa_init_mhz = *f.kappa_init;
  if (f.g_n) cfg.calibration.g_n = *f.g_n;
  try {
    cfg.validate();
  } catch (const ConfigError& e) {
    throw InputError(e.what());
  }
  const auto esr_files = expand_glob(f.esr_glob);
  if (esr_files.empty()) throw InputError("no ESR files match '" + f.esr_glob + "'");
  std::vector<std::string> nmr_files;
  if (!f.nmr_glob.empty()) {
    nmr_files = expand_glob(f.nmr_glob);
    if (nmr_files.empty()) throw InputError("no NMR files match '" + f.nmr_glob + "'");
  }
  const auto esr = read_field_series(esr_files);
  const auto nmr = read_field_series(nmr_files);

  CalibrationResult result;
  try {
    result = recursive_calibration(esr, nmr, cfg.calibration_options());
  } catch (const CalibrationStageError& e) {
    err << "calibration failed in stage " << e.stage << ": " << e.what() << "\n";
    return kNotConverged;
  }
  emit(output_path(cfg, f.output, "calibration.json"), calibration_report(result, cfg, esr_files, nmr_files), out);
  if (!result.partial)
    emit(output_path(cfg, f.config_out, "calibrated_config.json"), config_to_json(calibrated_config(cfg, result)), out);
  for (const auto& w : result.warnings) err << "warning: " << w << "\n";
  out << "iterations " << result.iterations << ", converged " << (result.converged ? "yes" : "no")
      << (result.partial ? " (partial)" : "") << "\n";
  return result.converged ? kOk : kNotConverged;
}

// ---------------------------------------------------------------------------

struct DatasetFlags {
  std::string out_dir;
  double noise_fraction = 0.05;
  std::optional<std::uint64_t> seed;
  std::vector<double> fields{0.2, 0.4, 0.6, 0.8, 1.0, 1.2, 1.4};
};

int cmd_make_dataset(const RunConfig& cfg, const DatasetFlags& f, std::ostream& out) {
  if (f.noise_fraction < 0.0 || !std::isfinite(f.noise_fraction))
    throw InputError("--noise-fraction must be nonnegative");
  DatasetOptions o;
  o.fields = f.fields;
  o.sys = cfg.spin_system;
  o.field = cfg.field;
  o.noise_fraction = f.noise_fraction;
  o.seed = f.seed.value_or(cfg.seed);
  o.esr_fwhm_mhz = cfg.lineshape.esr_fwhm_mhz;
  o.esr_q = cfg.lineshape.esr_q;
  o.esr_beta = cfg.lineshape.esr_beta;
  o.nmr_fwhm_mhz = cfg.lineshape.nmr_fwhm_mhz;
  const Dataset d = make_dataset(o);
  const fs::path dir = f.out_dir.empty() ? cfg.output_dir / "dataset" : fs::path(f.out_dir);
  for (std::size_t k = 0; k < f.fields.size(); ++k) {
    const std::string tag = format_double(f.fields[k]) + "T.csv";
    emit(dir / ("esr_" + tag), format_spectrum_csv(d.esr[k]), out);
    emit(dir / ("endor_" + tag), format_spectrum_csv(d.nmr[k]), out);
  }
  return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Spin Hamiltonian, ENDOR simulation and calibration toolkit for S=1/2, I=5/2 atoms", "endorkit"};
  app.require_subcommand(1);
  std::string config_path;
  app.add_option("-c,--config", config_path, "JSON run configuration (default: $ENDORKIT_CONFIG)");

  PredictFlags pf;
  auto* predict = app.add_subcommand("predict", "Transition frequencies at one field");
  predict->add_option("--channel", pf.channel, "esr, nmr, dq (double quantum) or all")
      ->check(CLI::IsMember({"esr", "nmr", "dq", "all"}));
  predict->add_option("--b-z", pf.b_z, "External field along z, tesla");
  predict->add_option("--weight-floor", pf.weight_floor, "Smallest transition weight listed");
  predict->add_option("-o,--output", pf.output, "Output CSV ('-' for stdout)");

  SweepFlags sf;
  auto* sweep = app.add_subcommand("sweep", "Energies and transitions over a field range");
  sweep->add_option("--b-start", sf.b_start, "First field, tesla");
  sweep->add_option("--b-end", sf.b_end, "Last field, tesla");
  sweep->add_option("--steps", sf.steps, "Number of fields (>= 2)");
  sweep->add_option("-o,--output", sf.output, "Output CSV ('-' for stdout)");

  SimulateFlags mf;
  auto* simulate = app.add_subcommand("simulate", "Synthetic ESR, ENDOR or ENDOR-map data");
  simulate->add_option("mode", mf.mode, "esr, endor or endor-map")
      ->required()
      ->check(CLI::IsMember({"esr", "endor", "endor-map"}));
  simulate->add_option("--b-z", mf.b_z, "External field along z, tesla");
  simulate->add_option("--f-start", mf.f_start, "ESR grid start, MHz");
  simulate->add_option("--f-stop", mf.f_stop, "ESR grid stop, MHz");
  simulate->add_option("--f-step", mf.f_step, "ESR grid step, MHz");
  simulate->add_option("--f-esr", mf.f_esr, "Fixed ESR frequency for endor, MHz (default: first line)");
  simulate->add_option("--nmr-start", mf.nmr_start, "NMR grid start, MHz");
  simulate->add_option("--nmr-stop", mf.nmr_stop, "NMR grid stop, MHz");
  simulate->add_option("--nmr-step", mf.nmr_step, "NMR grid step, MHz");
  simulate->add_option("--esr-start", mf.esr_start, "Map ESR axis start, MHz");
  simulate->add_option("--esr-stop", mf.esr_stop, "Map ESR axis stop, MHz");
  simulate->add_option("--esr-step", mf.esr_step, "Map ESR axis step, MHz");
  simulate->add_option("--noise-sigma", mf.noise_sigma, "Gaussian noise, signal units");
  simulate->add_option("--seed", mf.seed, "Noise seed (default: config seed)");
  simulate->add_option("-o,--output", mf.output, "Output file ('-' for stdout)");

  FitFlags ff;
  auto* fit = app.add_subcommand("fit", "Peak fit of one spectrum file");
  fit->add_option("kind", ff.kind, "esr or nmr")->required()->check(CLI::IsMember({"esr", "nmr"}));
  fit->add_option("-i,--input", ff.input, "Spectrum CSV")->required();
  fit->add_option("-n,--n-peaks", ff.n_peaks, "Number of peaks (esr default 2I+1, nmr default 2)");
  fit->add_option("--constraint", ff.constraint, "ESR model: equal (spacing and Boltzmann heights) or free")
      ->check(CLI::IsMember({"equal", "free"}));
  fit->add_flag("--no-model", ff.no_model, "Label NMR peaks by frequency order instead of the model");
  fit->add_option("-o,--output", ff.output, "Report JSON ('-' for stdout)");

  CalibrateFlags cf;
  auto* calibrate = app.add_subcommand("calibrate", "Recursive calibration from ESR and ENDOR spectra");
  calibrate->add_option("--esr", cf.esr_glob, "Glob of ESR spectrum files")->required();
  calibrate->add_option("--nmr", cf.nmr_glob, "Glob of ENDOR spectrum files");
  calibrate->add_option("--a-z-init", cf.a_z_init, "Initial A_z, MHz");
  calibrate->add_option("--kappa-init", cf.kappa_init, "Initial kappa, MHz");
  calibrate->add_option("--g-n", cf.g_n, "Nuclear g-factor used in the Hamiltonian");
  calibrate->add_option("-o,--output", cf.output, "Report JSON");
  calibrate->add_option("--config-out", cf.config_out, "Run configuration with the fitted parameters");

  DatasetFlags df;
  auto* dataset = app.add_subcommand("make-dataset", "Write the synthetic multi-field ESR + ENDOR dataset");
  dataset->add_option("--out-dir", df.out_dir, "Target directory (default: <output_dir>/dataset)");
  dataset->add_option("--noise-fraction", df.noise_fraction, "Noise sigma as a fraction of the largest feature");
  dataset->add_option("--seed", df.seed, "Noise seed (default: config seed)");
  dataset->add_option("--fields", df.fields, "Fields in tesla")->expected(1, -1);

  std::vector<const char*> argv{"endorkit"};
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kInputError;
  }

  try {
    std::optional<fs::path> explicit_path;
    if (!config_path.empty()) explicit_path = config_path;
    const RunConfig cfg = resolve_config(explicit_path);
    if (predict->parsed()) return cmd_predict(cfg, pf, out);
    if (sweep->parsed()) return cmd_sweep(cfg, sf, out);
    if (simulate->parsed()) return cmd_simulate(cfg, mf, out);
    if (fit->parsed()) return cmd_fit(cfg, ff, out, err);
    if (calibrate->parsed()) return cmd_calibrate(cfg, cf, out, err);
    if (dataset->parsed()) return cmd_make_dataset(cfg, df, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kInputError;
  } catch (const InputError& e) {
    err << "input error: " << e.what() << "\n";
    return kInputError;
  } catch (const FormatError& e) {
    err << "input error: " << e.what() << "\n";
    return kInputError;
  } catch (const NotConvergedError& e) {
    err << "not converged: " << e.what() << "\n";
    return kNotConverged;
  } catch (const std::invalid_argument& e) {
    err << "input error: " << e.what() << "\n";
    return kInputError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kFailure;
  }
  return kFailure;
}

}  // namespace endorkit::cli
