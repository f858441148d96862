#pragma once

#include <array>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "endorkit/numerics.hpp"

namespace endorkit {

using Vec3 = std::array<double, 3>;

/// Physical parameters of the coupled electron-nuclear spin pair.
/// Energies in MHz, g-factors dimensionless.
struct SpinSystem {
  SpinQuantumNumber s_electron = SpinQuantumNumber::from_twice(1);
  SpinQuantumNumber i_nuclear = SpinQuantumNumber::from_twice(5);
  Vec3 g_e{0.56, 0.56, 0.56};
  double g_n = 0.315;
  Vec3 a_hyperfine{10.0, 10.0, 132.1};
  double kappa = -56.7;
  double eta = 0.0;

  std::size_t dim() const {
    return static_cast<std::size_t>(s_electron.multiplicity() * i_nuclear.multiplicity());
  }
  /// kappa / (2I(2I-1)); zero when I < 1.
  double quadrupole_q() const;
  void validate() const;

  /// 47Ti on MgO with the fitted parameter set (g_e,z = 0.56, A_z = 132.1 MHz,
  /// kappa = -56.7 MHz, eta = 0, literature g_N = 0.315). A_x = A_y = 10 MHz is
  /// an assumption; the in-plane hyperfine is not identifiable from ENDOR data.
  static SpinSystem titanium47();
  /// Same electron but without nuclear spin (I = 0 isotope).
  static SpinSystem titanium_i0();
};

/// External field plus effective tip field. phi is the polar angle from z,
/// theta the azimuth; both in radians.
struct FieldConfig {
  Vec3 b_ext{0.0, 0.0, 0.45};
  double b_tip = 0.0679;
  double phi = 5.0 * constants::kPi / 180.0;
  double theta = 0.0;
  bool tip_couples_nucleus = false;

  Vec3 tip_vector() const;
  void validate() const;

  /// Field along z plus the fitted 47Ti tip field (67.9 mT at 5 degrees).
  static FieldConfig fitted_tip(double b_z);
  FieldConfig with_b_z(double b_z) const;
};

/// |m_s, m_I> product-basis label, stored as twice the quantum numbers.
struct ProductLabel {
  int twice_ms = 0;
  int twice_mi = 0;

  double ms() const { return 0.5 * twice_ms; }
  double mi() const { return 0.5 * twice_mi; }
  static ProductLabel of(double ms, double mi);
  std::string str() const;

  friend bool operator==(const ProductLabel&, const ProductLabel&) = default;
};

std::vector<ProductLabel> product_basis(const SpinSystem& sys);

/// Diagonalized Hamiltonian plus per-eigenstate product-basis bookkeeping.
struct SpinEigensystem {
  SpinQuantumNumber s_electron = SpinQuantumNumber::from_twice(1);
  SpinQuantumNumber i_nuclear = SpinQuantumNumber::from_twice(0);
  EigenSolution solution;
  std::vector<ProductLabel> basis_labels;  // m_s outer, m_I inner
  std::vector<ProductLabel> assigned;      // dominant label per eigenstate
  std::vector<double> assigned_weight;     // |<label|psi>|^2 of that label
  std::vector<double> sz_expect, iz_expect;

  std::size_t dim() const { return solution.dim(); }
  /// Eigenstate index whose assigned label is `label`.
  std::size_t index_of(const ProductLabel& label) const;
  double energy(const ProductLabel& label) const { return solution.values[index_of(label)]; }
  std::size_t basis_index(const ProductLabel& label) const;
};

enum class Channel { esr, nmr, all };

struct TransitionLine {
  std::size_t from_index = 0;  // lower-energy eigenstate
  std::size_t to_index = 0;
  double frequency = 0.0;      // MHz
  double weight = 0.0;         // squared matrix element of the drive operator
  double delta_ms = 0.0;
  double delta_mi = 0.0;
  ProductLabel from_label, to_label;
  std::optional<int> numeral;  // NMR transition number (I, II, ...)

  std::string label() const;
};

struct HybridizationReport {
  double b_z = 0.0;
  double m_i = 0.0;        // the |down, m_i> state ...
  double m_i_partner = 0.0;  // ... admixed with |up, m_i - 1>
  double coefficient = 0.0;
};

class DegenerateSpectrumError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class HybridizationTooStrongError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string roman_numeral(int n);
/// NMR transition number for the pair (m_s, m) <-> (m_s, m + 1): odd for the
/// m_s = down manifold, even for up, counted from m = -I upward.
std::optional<int> nmr_numeral(const ProductLabel& a, const ProductLabel& b, SpinQuantumNumber i_nuclear);
/// Inverse of nmr_numeral: the lower-m_I and upper-m_I states of transition n.
std::pair<ProductLabel, ProductLabel> nmr_pair_for_numeral(int n, SpinQuantumNumber i_nuclear);

ComplexMatrix build_hamiltonian(const SpinSystem& sys, const FieldConfig& field);
SpinEigensystem solve(const SpinSystem& sys, const FieldConfig& field);

/// All eigenstate pairs whose drive-operator weight reaches weight_floor.
/// esr drives S_x (x) 1, nmr drives 1 (x) I_x, all sums both weights.
std::vector<TransitionLine> transition_catalog(const SpinEigensystem& eig, Channel channel,
                                               double weight_floor = 1e-6);

/// The 2I+1 allowed ESR lines, ascending in frequency.
std::vector<TransitionLine> esr_frequencies(const SpinEigensystem& eig);
std::vector<TransitionLine> esr_frequencies(const SpinSystem& sys, const FieldConfig& field);

HybridizationReport hybridization_coefficient(const SpinEigensystem& eig, double b_z, double m_i);
HybridizationReport hybridization_coefficient(const SpinSystem& sys, const FieldConfig& field, double m_i);

/// Delta m_I = +-2 lines inside each electron manifold.
std::vector<TransitionLine> double_quantum_frequencies(const SpinEigensystem& eig);

struct SweepRow {
  double b_z = 0.0;
  std::vector<double> energies;          // ascending
  std::vector<ProductLabel> labels;      // tracked label of each ascending eigenstate
  std::vector<std::pair<int, double>> nmr;     // (numeral, frequency)
  std::vector<std::pair<double, double>> esr;  // (m_I, frequency)
  std::optional<double> hybridization;
  double min_overlap = 1.0;  // smallest |<prev|next>|^2 used for tracking
};

struct SweepOptions {
  std::optional<double> hybridization_m_i = -1.5;
};

std::vector<SweepRow> field_sweep(const SpinSystem& sys, const FieldConfig& field_template,
                                  std::span<const double> b_z_grid, const SweepOptions& options = {});

}  // namespace endorkit
