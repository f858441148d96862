#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "endorkit/pumping.hpp"

namespace endorkit {

namespace {

void require_rate(double value, const char* name) {
  if (!(value >= 0.0) || !std::isfinite(value))
    throw std::invalid_argument(std::string(name) + " must be a finite nonnegative rate");
}

}  // namespace

void PumpConfig::validate() const {
  require_rate(gamma_e_down, "gamma_e_down");
  require_rate(gamma_e_up, "gamma_e_up");
  require_rate(gamma_ff, "gamma_ff");
  require_rate(omega_esr, "omega_esr");
  require_rate(omega_nmr, "omega_nmr");
  if (!(ff_asymmetry >= 0.0 && ff_asymmetry <= 1.0)) throw std::invalid_argument("ff_asymmetry must lie in [0, 1]");
}

std::size_t RateMatrix::index_of(const ProductLabel& label) const {
  const auto it = std::find(labels.begin(), labels.end(), label);
  if (it == labels.end()) throw std::invalid_argument("state " + label.str() + " is not part of the rate model");
  return static_cast<std::size_t>(it - labels.begin());
}

void RateMatrix::add_directed(const ProductLabel& from, const ProductLabel& to, double rate) {
  const std::size_t i = index_of(from), j = index_of(to);
  if (i == j || rate == 0.0) return;
  generator(j, i) += rate;
  generator(i, i) -= rate;
}

void RateMatrix::add_symmetric(const StatePair& pair, double rate) {
  add_directed(pair.a, pair.b, rate);
  add_directed(pair.b, pair.a, rate);
}

double Populations::at(const ProductLabel& label) const {
  for (std::size_t k = 0; k < labels.size(); ++k)
    if (labels[k] == label) return probabilities[k];
  throw std::invalid_argument("state " + label.str() + " is not part of the population vector");
}

double Populations::nuclear_marginal(double m_i) const {
  const int twice = static_cast<int>(std::lround(2.0 * m_i));
  double sum = 0.0;
  for (std::size_t k = 0; k < labels.size(); ++k)
    if (labels[k].twice_mi == twice) sum += probabilities[k];
  return sum;
}

std::vector<std::pair<double, double>> flip_flop_coefficients(const SpinSystem& sys, const FieldConfig& field) {
  std::vector<std::pair<double, double>> out;
  if (sys.s_electron.twice() != 1 || sys.i_nuclear.twice() == 0) return out;
  const SpinEigensystem eig = solve(sys, field);
  for (double m : sys.i_nuclear.m_values()) {
    if (m + 1.0 > sys.i_nuclear.value()) continue;
    out.emplace_back(m, hybridization_coefficient(eig, field.b_ext[2], m + 1.0).coefficient);
  }
  std::sort(out.begin(), out.end());
  return out;
}

RateMatrix build_rate_matrix(const SpinSystem& sys, const std::vector<std::pair<double, double>>& flip_flop,
                             const PumpConfig& cfg) {
  cfg.validate();
  if (sys.s_electron.twice() != 1) throw std::invalid_argument("the pumping model requires S = 1/2");
  RateMatrix m;
  m.labels = product_basis(sys);
  m.generator = RealMatrix(m.size(), m.size());

  for (double mi : sys.i_nuclear.m_values()) {
    m.add_directed(ProductLabel::of(0.5, mi), ProductLabel::of(-0.5, mi), cfg.gamma_e_down);
    m.add_directed(ProductLabel::of(-0.5, mi), ProductLabel::of(0.5, mi), cfg.gamma_e_up);
  }
  // (down, m+1) -> (up, m) lowers m_I and is the favored direction.
  for (const auto& [mi, c] : flip_flop) {
    const double base = cfg.gamma_ff * c * c;
    const ProductLabel down = ProductLabel::of(-0.5, mi + 1.0);
    const ProductLabel up = ProductLabel::of(0.5, mi);
    m.add_directed(down, up, base * (1.0 + cfg.ff_asymmetry));
    m.add_directed(up, down, base * (1.0 - cfg.ff_asymmetry));
  }
  if (cfg.esr_pair) m.add_symmetric(*cfg.esr_pair, cfg.omega_esr);
  if (cfg.nmr_pair) m.add_symmetric(*cfg.nmr_pair, cfg.omega_nmr);
  return m;
}

RateMatrix build_rate_matrix(const SpinSystem& sys, const FieldConfig& field, const PumpConfig& cfg) {
  return build_rate_matrix(sys, flip_flop_coefficients(sys, field), cfg);
}

namespace {

// Closed communicating classes of the directed rate graph.
std::vector<std::vector<std::size_t>> closed_classes(const RealMatrix& g) {
  const std::size_t n = g.rows();
  std::vector<std::vector<bool>> reach(n, std::vector<bool>(n, false));
  for (std::size_t s = 0; s < n; ++s) {
    std::vector<std::size_t> stack{s};
    reach[s][s] = true;
    while (!stack.empty()) {
      const std::size_t i = stack.back();
      stack.pop_back();
      for (std::size_t j = 0; j < n; ++j)
        if (j != i && g(j, i) > 0.0 && !reach[s][j]) {
          reach[s][j] = true;
          stack.push_back(j);
        }
    }
  }
  std::vector<std::vector<std::size_t>> classes;
  std::vector<bool> seen(n, false);
  for (std::size_t i = 0; i < n; ++i) {
    if (seen[i]) continue;
    std::vector<std::size_t> cls;
    for (std::size_t j = 0; j < n; ++j)
      if (reach[i][j] && reach[j][i]) {
        cls.push_back(j);
        seen[j] = true;
      }
    // Closed when everything reachable from i is in the class.
    const bool closed = std::all_of(cls.begin(), cls.end(), [&](std::size_t a) {
      for (std::size_t j = 0; j < n; ++j)
        if (reach[a][j] && !reach[j][a]) return false;
      return true;
    });
    if (closed) classes.push_back(std::move(cls));
  }
  return classes;
}

// Grassmann-Taksar-Heyman state reduction on the irreducible sub-chain
// `states`. Only off-diagonal rates enter and no subtraction occurs, so the
// result is nonnegative and accurate across widely separated rate scales.
std::vector<double> gth_stationary(const RealMatrix& g, const std::vector<std::size_t>& states) {
  const std::size_t n = states.size();
  RealMatrix q(n, n);  // q(i, j) = rate i -> j
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (i != j) q(i, j) = g(states[j], states[i]);
  for (std::size_t k = n; k-- > 1;) {
    double s = 0.0;
    for (std::size_t j = 0; j < k; ++j) s += q(k, j);
    for (std::size_t i = 0; i < k; ++i) q(i, k) /= s;
    for (std::size_t i = 0; i < k; ++i)
      for (std::size_t j = 0; j < k; ++j)
        if (i != j) q(i, j) += q(i, k) * q(k, j);
  }
  std::vector<double> pi(n, 0.0);
  pi[0] = 1.0;
  for (std::size_t k = 1; k < n; ++k)
    for (std::size_t i = 0; i < k; ++i) pi[k] += pi[i] * q(i, k);
  double total = 0.0;
  for (double x : pi) total += x;
  for (double& x : pi) x /= total;
  return pi;
}

}  // namespace

Populations steady_state(const RateMatrix& m, const SteadyStateOptions& options) {
  const std::size_t n = m.size();
  if (n == 0) throw std::invalid_argument("steady_state: empty rate model");
  RealMatrix g = m.generator;
  if (options.allow_leak) {
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        if (i != j) {
          g(j, i) += options.leak_rate;
          g(i, i) -= options.leak_rate;
        }
  }
  const auto classes = closed_classes(g);
  if (classes.size() > 1) {
    std::vector<std::vector<ProductLabel>> components;
    std::ostringstream msg;
    msg << "steady state is not unique: " << classes.size() << " closed classes";
    for (const auto& cls : classes) {
      components.emplace_back();
      msg << " {";
      for (std::size_t k = 0; k < cls.size(); ++k) {
        components.back().push_back(m.labels[cls[k]]);
        msg << (k ? " " : "") << m.labels[cls[k]].str();
      }
      msg << "}";
    }
    throw DegenerateSteadyStateError(msg.str(), std::move(components));
  }

  // Transient states carry no weight; the single closed class is irreducible.
  std::vector<std::size_t> cls = classes.front();
  std::sort(cls.begin(), cls.end());
  std::vector<double> p(n, 0.0);
  const auto sub = gth_stationary(g, cls);
  for (std::size_t k = 0; k < cls.size(); ++k) p[cls[k]] = sub[k];
  return Populations{std::move(p), m.labels};
}

double endor_signal(const Populations& pop, double probed_mi) { return pop.nuclear_marginal(probed_mi); }

double endor_population_difference(const Populations& pop, double probed_mi) {
  return pop.at(ProductLabel::of(-0.5, probed_mi)) - pop.at(ProductLabel::of(0.5, probed_mi));
}

std::vector<DriveRatioRow> population_ratio_vs_drive(const SpinSystem& sys, const FieldConfig& field,
                                                     const PumpConfig& cfg, std::span<const double> omega_esr_grid) {
  if (!cfg.esr_pair) throw std::invalid_argument("population_ratio_vs_drive needs an ESR pair");
  for (std::size_t k = 0; k < omega_esr_grid.size(); ++k) {
    if (!(omega_esr_grid[k] >= 0.0)) throw std::invalid_argument("ESR drive rates must be nonnegative");
    if (k > 0 && !(omega_esr_grid[k] > omega_esr_grid[k - 1]))
      throw std::invalid_argument("ESR drive grid must be ascending");
  }
  const double probe = cfg.esr_pair->a.mi();
  const auto ff = flip_flop_coefficients(sys, field);
  std::vector<DriveRatioRow> rows;
  for (double omega : omega_esr_grid) {
    PumpConfig c = cfg;
    c.omega_esr = omega;
    const Populations pop = steady_state(build_rate_matrix(sys, ff, c));
    DriveRatioRow row;
    row.omega_esr = omega;
    row.p_up = pop.at(ProductLabel::of(0.5, probe));
    row.p_down = pop.at(ProductLabel::of(-0.5, probe));
    row.ratio = row.p_down > 0.0 ? row.p_up / row.p_down : std::numeric_limits<double>::quiet_NaN();
    rows.push_back(row);
  }
  return rows;
}

}  // namespace endorkit
