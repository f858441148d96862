#include "endorkit/config.hpp"

#include <cmath>
#include <cstdlib>
#include <set>

#include <json.hpp>

#include "endorkit/io.hpp"

namespace endorkit {

namespace {

using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

constexpr double kDeg = constants::kPi / 180.0;

// Reads the keys of one JSON object and remembers which were used, so the
// leftovers can be reported as unknown.
class Section {
 public:
  Section(const json& node, std::string path) : node_(node), path_(std::move(path)) {
    if (!node_.is_object()) throw ConfigError(where() + "expected an object");
  }

  std::string key_path(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  const json* find(const std::string& key) {
    used_.insert(key);
    const auto it = node_.find(key);
    return it == node_.end() ? nullptr : &*it;
  }

  void number(const std::string& key, double& out) {
    if (const json* v = find(key)) out = as_number(*v, key_path(key));
  }

  void integer(const std::string& key, int& out) {
    if (const json* v = find(key)) {
      if (!v->is_number_integer()) throw ConfigError(key_path(key) + ": expected an integer");
      out = v->get<int>();
    }
  }

  void boolean(const std::string& key, bool& out) {
    if (const json* v = find(key)) {
      if (!v->is_boolean()) throw ConfigError(key_path(key) + ": expected true or false");
      out = v->get<bool>();
    }
  }

  void vec3(const std::string& key, Vec3& out) {
    if (const json* v = find(key)) {
      if (!v->is_array() || v->size() != 3) throw ConfigError(key_path(key) + ": expected an array of three numbers");
      for (std::size_t k = 0; k < 3; ++k) out[k] = as_number((*v)[k], key_path(key) + "[" + std::to_string(k) + "]");
    }
  }

  void finish() const {
    for (const auto& [key, value] : node_.items())
      if (!used_.count(key)) throw ConfigError(key_path(key) + ": unknown key");
  }

  static double as_number(const json& v, const std::string& path) {
    if (!v.is_number()) throw ConfigError(path + ": expected a number");
    return v.get<double>();
  }

 private:
  std::string where() const { return path_.empty() ? "" : path_ + ": "; }
  const json& node_;
  std::string path_;
  std::set<std::string> used_;
};

SpinQuantumNumber read_spin(Section& s, const std::string& key, SpinQuantumNumber current) {
  const json* v = s.find(key);
  if (!v) return current;
  const double j = Section::as_number(*v, s.key_path(key));
  try {
    return SpinQuantumNumber::from_double(j);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(s.key_path(key) + ": " + e.what());
  }
}

std::optional<StatePair> read_pair(Section& parent, const std::string& key, std::optional<StatePair> current) {
  const json* v = parent.find(key);
  if (!v) return current;
  if (v->is_null()) return std::nullopt;
  Section s(*v, parent.key_path(key));
  StatePair pair;
  for (const char* end : {"a", "b"}) {
    const json* node = s.find(end);
    if (!node) throw ConfigError(s.key_path(end) + ": missing");
    Section e(*node, s.key_path(end));
    double ms = 0.0, mi = 0.0;
    if (!e.find("m_s") || !e.find("m_i")) throw ConfigError(e.key_path("m_s/m_i") + ": both are required");
    e.number("m_s", ms);
    e.number("m_i", mi);
    e.finish();
    (std::string(end) == "a" ? pair.a : pair.b) = ProductLabel::of(ms, mi);
  }
  s.finish();
  return pair;
}

template <typename F>
void section(Section& parent, const std::string& key, F&& body) {
  if (const json* v = parent.find(key)) {
    Section s(*v, parent.key_path(key));
    body(s);
    s.finish();
  }
}

ordered_json pair_json(const std::optional<StatePair>& p) {
  if (!p) return nullptr;
  auto end = [](const ProductLabel& l) { return ordered_json{{"m_s", l.ms()}, {"m_i", l.mi()}}; };
  return ordered_json{{"a", end(p->a)}, {"b", end(p->b)}};
}

}  // namespace

PumpConfig RunConfig::default_pump() {
  PumpConfig p;
  p.omega_esr = 1e5;
  p.omega_nmr = 3e-3;
  return p;
}

void RunConfig::validate() const {
  auto wrap = [](const char* section, auto&& check) {
    try {
      check();
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string(section) + ": " + e.what());
    }
  };
  wrap("spin_system", [&] { spin_system.validate(); });
  wrap("field", [&] { field.validate(); });
  wrap("pump", [&] { pump.validate(); });
  auto positive = [](const char* key, double v) {
    if (!(v > 0.0) || !std::isfinite(v)) throw ConfigError(std::string(key) + ": must be positive and finite");
  };
  positive("lineshape.esr_fwhm_mhz", lineshape.esr_fwhm_mhz);
  positive("lineshape.nmr_fwhm_mhz", lineshape.nmr_fwhm_mhz);
  positive("lineshape.esr_window_fwhm", lineshape.esr_window_fwhm);
  if (!std::isfinite(lineshape.esr_q)) throw ConfigError("lineshape.esr_q: must be finite");
  if (!std::isfinite(lineshape.esr_beta)) throw ConfigError("lineshape.esr_beta: must be finite");
  if (!std::isfinite(lineshape.esr_amplitude)) throw ConfigError("lineshape.esr_amplitude: must be finite");
  positive("calibration.tolerance", calibration.tolerance);
  if (calibration.max_iterations < 1) throw ConfigError("calibration.max_iterations: must be at least 1");
  if (calibration.nmr_peaks < 2 || calibration.nmr_peaks > 4)
    throw ConfigError("calibration.nmr_peaks: must be between 2 and 4");
  if (!std::isfinite(calibration.a_z_init_mhz)) throw ConfigError("calibration.a_z_init_mhz: must be finite");
  if (!std::isfinite(calibration.kappa_init_mhz)) throw ConfigError("calibration.kappa_init_mhz: must be finite");
  if (!(calibration.g_n > 0.0)) throw ConfigError("calibration.g_n: must be positive");
}

CalibrationOptions RunConfig::calibration_options() const {
  CalibrationOptions o;
  o.base = spin_system;
  o.a_z_init = calibration.a_z_init_mhz;
  o.kappa_init = calibration.kappa_init_mhz;
  o.g_n = calibration.g_n;
  o.nmr_peaks = calibration.nmr_peaks;
  o.tolerance = calibration.tolerance;
  o.max_iterations = calibration.max_iterations;
  o.refine_g_e_z = calibration.refine_g_e_z;
  return o;
}

RunConfig parse_config(const std::string& json_text, const std::string& source) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(source + ": not valid JSON (" + e.what() + ")");
  }
  RunConfig cfg;
  try {
    Section top(root, "");
    section(top, "spin_system", [&](Section& s) {
      cfg.spin_system.s_electron = read_spin(s, "s_electron", cfg.spin_system.s_electron);
      cfg.spin_system.i_nuclear = read_spin(s, "i_nuclear", cfg.spin_system.i_nuclear);
      s.vec3("g_e", cfg.spin_system.g_e);
      s.number("g_n", cfg.spin_system.g_n);
      s.vec3("a_hyperfine_mhz", cfg.spin_system.a_hyperfine);
      s.number("kappa_mhz", cfg.spin_system.kappa);
      s.number("eta", cfg.spin_system.eta);
    });
    section(top, "field", [&](Section& s) {
      s.vec3("b_ext_tesla", cfg.field.b_ext);
      s.number("b_tip_tesla", cfg.field.b_tip);
      double phi = cfg.field.phi / kDeg, theta = cfg.field.theta / kDeg;
      s.number("phi_deg", phi);
      s.number("theta_deg", theta);
      cfg.field.phi = phi * kDeg;
      cfg.field.theta = theta * kDeg;
      s.boolean("tip_couples_nucleus", cfg.field.tip_couples_nucleus);
    });
    section(top, "pump", [&](Section& s) {
      s.number("gamma_e_down_per_s", cfg.pump.gamma_e_down);
      s.number("gamma_e_up_per_s", cfg.pump.gamma_e_up);
      s.number("gamma_ff_per_s", cfg.pump.gamma_ff);
      s.number("ff_asymmetry", cfg.pump.ff_asymmetry);
      s.number("omega_esr_per_s", cfg.pump.omega_esr);
      s.number("omega_nmr_per_s", cfg.pump.omega_nmr);
      cfg.pump.esr_pair = read_pair(s, "esr_pair", cfg.pump.esr_pair);
      cfg.pump.nmr_pair = read_pair(s, "nmr_pair", cfg.pump.nmr_pair);
    });
    section(top, "lineshape", [&](Section& s) {
      s.number("esr_fwhm_mhz", cfg.lineshape.esr_fwhm_mhz);
      s.number("esr_q", cfg.lineshape.esr_q);
      s.number("esr_amplitude", cfg.lineshape.esr_amplitude);
      s.number("esr_beta", cfg.lineshape.esr_beta);
      s.number("nmr_fwhm_mhz", cfg.lineshape.nmr_fwhm_mhz);
      s.number("esr_window_fwhm", cfg.lineshape.esr_window_fwhm);
      if (const json* v = s.find("observable")) {
        const std::string name = v->is_string() ? v->get<std::string>() : "";
        if (name == "nuclear_marginal") cfg.lineshape.observable = EndorObservable::nuclear_marginal;
        else if (name == "population_difference") cfg.lineshape.observable = EndorObservable::population_difference;
        else throw ConfigError("lineshape.observable: expected \"nuclear_marginal\" or \"population_difference\"");
      }
    });
    section(top, "calibration", [&](Section& s) {
      s.number("a_z_init_mhz", cfg.calibration.a_z_init_mhz);
      s.number("kappa_init_mhz", cfg.calibration.kappa_init_mhz);
      s.number("g_n", cfg.calibration.g_n);
      s.integer("nmr_peaks", cfg.calibration.nmr_peaks);
      s.number("tolerance", cfg.calibration.tolerance);
      s.integer("max_iterations", cfg.calibration.max_iterations);
      s.boolean("refine_g_e_z", cfg.calibration.refine_g_e_z);
    });
    if (const json* v = top.find("transfer_table")) {
      if (v->is_null()) cfg.transfer_table.reset();
      else if (v->is_string()) cfg.transfer_table = v->get<std::string>();
      else throw ConfigError("transfer_table: expected a path string or null");
    }
    if (const json* v = top.find("output_dir")) {
      if (!v->is_string()) throw ConfigError("output_dir: expected a path string");
      cfg.output_dir = v->get<std::string>();
    }
    if (const json* v = top.find("seed")) {
      if (!v->is_number_unsigned()) throw ConfigError("seed: expected a nonnegative integer");
      cfg.seed = v->get<std::uint64_t>();
    }
    top.finish();
    cfg.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(source + ": " + e.what());
  }
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::string text;
  try {
    text = read_text_file(path);
  } catch (const FormatError& e) {
    throw ConfigError(e.what());
  }
  RunConfig cfg = parse_config(text, path.string());
  // A relative transfer table is looked up next to the config file.
  if (cfg.transfer_table && cfg.transfer_table->is_relative() && path.has_parent_path())
    cfg.transfer_table = path.parent_path() / *cfg.transfer_table;
  return cfg;
}

std::string config_to_json(const RunConfig& cfg) {
  const auto& s = cfg.spin_system;
  const auto& f = cfg.field;
  const auto& p = cfg.pump;
  const auto& l = cfg.lineshape;
  const auto& c = cfg.calibration;
  ordered_json j;
  j["spin_system"] = {{"s_electron", s.s_electron.value()}, {"i_nuclear", s.i_nuclear.value()},
                      {"g_e", s.g_e},   {"g_n", s.g_n},
                      {"a_hyperfine_mhz", s.a_hyperfine}, {"kappa_mhz", s.kappa},
                      {"eta", s.eta}};
  j["field"] = {{"b_ext_tesla", f.b_ext},         {"b_tip_tesla", f.b_tip},
                {"phi_deg", f.phi / kDeg},        {"theta_deg", f.theta / kDeg},
                {"tip_couples_nucleus", f.tip_couples_nucleus}};
  j["pump"] = {{"gamma_e_down_per_s", p.gamma_e_down}, {"gamma_e_up_per_s", p.gamma_e_up},
               {"gamma_ff_per_s", p.gamma_ff},         {"ff_asymmetry", p.ff_asymmetry},
               {"omega_esr_per_s", p.omega_esr},       {"omega_nmr_per_s", p.omega_nmr},
               {"esr_pair", pair_json(p.esr_pair)},    {"nmr_pair", pair_json(p.nmr_pair)}};
  j["lineshape"] = {{"esr_fwhm_mhz", l.esr_fwhm_mhz},
                    {"esr_q", l.esr_q},
                    {"esr_amplitude", l.esr_amplitude},
                    {"esr_beta", l.esr_beta},
                    {"nmr_fwhm_mhz", l.nmr_fwhm_mhz},
                    {"esr_window_fwhm", l.esr_window_fwhm},
                    {"observable", l.observable == EndorObservable::nuclear_marginal ? "nuclear_marginal"
                                                                                     : "population_difference"}};
  j["calibration"] = {{"a_z_init_mhz", c.a_z_init_mhz}, {"kappa_init_mhz", c.kappa_init_mhz},
                      {"g_n", c.g_n},                   {"nmr_peaks", c.nmr_peaks},
                      {"tolerance", c.tolerance},       {"max_iterations", c.max_iterations},
                      {"refine_g_e_z", c.refine_g_e_z}};
  j["transfer_table"] = cfg.transfer_table ? ordered_json(cfg.transfer_table->string()) : ordered_json(nullptr);
  j["output_dir"] = cfg.output_dir.string();
  j["seed"] = cfg.seed;
  return j.dump(2) + "\n";
}

RunConfig resolve_config(const std::optional<std::filesystem::path>& explicit_path) {
  if (explicit_path) return load_config(*explicit_path);
  if (const char* env = std::getenv(kConfigEnvVar); env && *env) return load_config(env);
  return RunConfig{};
}

}  // namespace endorkit
