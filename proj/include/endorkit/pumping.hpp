#pragma once

#include <optional>
#include <stdexcept>
#include <vector>

#include "endorkit/spinmodel.hpp"

namespace endorkit {

/// Two product states coupled by a symmetric drive.
struct StatePair {
  ProductLabel a, b;
  friend bool operator==(const StatePair&, const StatePair&) = default;
};

/// Rates in 1/s. The flip-flop rate of each (down, m+1) <-> (up, m) pair is
/// gamma_ff times the squared hybridization coefficient of that pair.
struct PumpConfig {
  double gamma_e_down = 1e6;
  double gamma_e_up = 1e5;
  double gamma_ff = 1e4;
  double ff_asymmetry = 0.5;
  double omega_esr = 0.0;
  std::optional<StatePair> esr_pair;
  double omega_nmr = 0.0;
  std::optional<StatePair> nmr_pair;

  void validate() const;
};

/// Continuous-time generator over the product states: generator(j, i) is the
/// rate i -> j for i != j, and columns sum to zero.
struct RateMatrix {
  RealMatrix generator;
  std::vector<ProductLabel> labels;

  std::size_t size() const { return labels.size(); }
  std::size_t index_of(const ProductLabel& label) const;
  /// Adds rate to both directions of pair and keeps columns balanced.
  void add_symmetric(const StatePair& pair, double rate);
  void add_directed(const ProductLabel& from, const ProductLabel& to, double rate);
};

struct Populations {
  std::vector<double> probabilities;
  std::vector<ProductLabel> labels;

  double at(const ProductLabel& label) const;
  /// Sum over electron states with nuclear projection m_i.
  double nuclear_marginal(double m_i) const;
};

class DegenerateSteadyStateError : public std::runtime_error {
 public:
  DegenerateSteadyStateError(const std::string& what, std::vector<std::vector<ProductLabel>> components)
      : std::runtime_error(what), components_(std::move(components)) {}
  const std::vector<std::vector<ProductLabel>>& components() const { return components_; }

 private:
  std::vector<std::vector<ProductLabel>> components_;
};

/// Flip-flop coefficients for each (down, m+1) <-> (up, m) pair, keyed by m.
std::vector<std::pair<double, double>> flip_flop_coefficients(const SpinSystem& sys, const FieldConfig& field);

RateMatrix build_rate_matrix(const SpinSystem& sys, const FieldConfig& field, const PumpConfig& cfg);
/// Same, reusing precomputed flip-flop coefficients.
RateMatrix build_rate_matrix(const SpinSystem& sys, const std::vector<std::pair<double, double>>& flip_flop,
                             const PumpConfig& cfg);

struct SteadyStateOptions {
  bool allow_leak = false;
  double leak_rate = 1e-12;  // 1/s, added between every pair of states when allowed
};

/// Stationary distribution of the generator. More than one closed
/// communicating class raises DegenerateSteadyStateError unless a leak is
/// allowed.
Populations steady_state(const RateMatrix& m, const SteadyStateOptions& options = {});

/// Probed ESR-peak observable: total population with nuclear projection m_i.
double endor_signal(const Populations& pop, double probed_mi);
/// Alternative observable: P(down, m_i) - P(up, m_i).
double endor_population_difference(const Populations& pop, double probed_mi);

struct DriveRatioRow {
  double omega_esr = 0.0;
  double p_up = 0.0;
  double p_down = 0.0;
  double ratio = 0.0;  // p_up / p_down, NaN when p_down = 0
};

/// Steady-state P_up / P_down of the probed sublevel for each ESR drive rate.
/// The ESR drive acts on cfg.esr_pair, which must be set; its m_I is the probe.
std::vector<DriveRatioRow> population_ratio_vs_drive(const SpinSystem& sys, const FieldConfig& field,
                                                     const PumpConfig& cfg, std::span<const double> omega_esr_grid);

}  // namespace endorkit
