#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "endorkit/spinmodel.hpp"

using namespace endorkit;
using constants::kBohrMagnetonMHzPerT;
using constants::kNuclearMagnetonMHzPerT;

namespace {

SpinSystem bare_nucleus() {
  SpinSystem sys;
  sys.a_hyperfine = {0.0, 0.0, 0.0};
  sys.kappa = 0.0;
  return sys;
}

double nmr_frequency(const SpinEigensystem& eig, int numeral) {
  const auto [a, b] = nmr_pair_for_numeral(numeral, eig.i_nuclear);
  return std::abs(eig.energy(b) - eig.energy(a));
}

// First-order frequency of (m_s, m -> m+1).
double first_order_nmr(const SpinSystem& sys, double b_z, double ms, double m) {
  return kNuclearMagnetonMHzPerT * sys.g_n * b_z + sys.a_hyperfine[2] * ms +
         (3.0 * sys.kappa / 40.0) * ((m + 1) * (m + 1) - m * m);
}

}  // namespace

TEST(Hamiltonian, FreeElectronSplitting) {
  SpinSystem sys = SpinSystem::titanium_i0();
  sys.g_e = {2.0, 2.0, 2.0};
  FieldConfig field;
  field.b_ext = {0, 0, 1.0};
  field.b_tip = 0.0;
  const auto sol = eigh(build_hamiltonian(sys, field));
  ASSERT_EQ(sol.dim(), 2u);
  EXPECT_NEAR(sol.values[1] - sol.values[0], 27992.49, 1e-6);
}

TEST(Hamiltonian, QuadrupoleDiagonal) {
  SpinSystem sys = bare_nucleus();
  sys.g_e = {0.0, 0.0, 0.0};
  sys.g_n = 0.0;
  sys.kappa = -56.7;
  FieldConfig field;
  field.b_tip = 0.0;
  const auto h = build_hamiltonian(sys, field);
  // Basis index = s_idx * 6 + i_idx, m_I = 5/2 - i_idx.
  const double expected[6] = {-14.175, 2.835, 11.34, 11.34, 2.835, -14.175};
  for (std::size_t s = 0; s < 2; ++s)
    for (std::size_t i = 0; i < 6; ++i) EXPECT_NEAR(h(6 * s + i, 6 * s + i).real(), expected[i], 1e-12);
  // Axial quadrupole commutes with I_z.
  const auto iz = kron(ComplexMatrix::identity(2), angular_momentum_ops(2.5).sz);
  const auto comm = h * iz - iz * h;
  for (const auto& x : comm.data()) EXPECT_LT(std::abs(x), 1e-12);
}

TEST(Hamiltonian, QuadrupoleTraceIsEtaIndependentAndZero) {
  for (double eta : {0.0, 0.4, 1.0}) {
    SpinSystem sys = bare_nucleus();
    sys.g_e = {0, 0, 0};
    sys.g_n = 0;
    sys.kappa = -56.7;
    sys.eta = eta;
    FieldConfig field;
    field.b_tip = 0.0;
    const auto h = build_hamiltonian(sys, field);
    Complex tr{};
    for (std::size_t k = 0; k < h.rows(); ++k) tr += h(k, k);
    EXPECT_NEAR(std::abs(tr), 0.0, 1e-12);
  }
}

TEST(Hamiltonian, RejectsQuadrupoleBelowSpinOne) {
  SpinSystem sys = SpinSystem::titanium_i0();
  sys.kappa = 1.0;
  EXPECT_THROW(build_hamiltonian(sys, FieldConfig{}), std::invalid_argument);
  sys.i_nuclear = SpinQuantumNumber::from_twice(1);
  EXPECT_THROW(build_hamiltonian(sys, FieldConfig{}), std::invalid_argument);
}

TEST(Hamiltonian, HermitianForRandomParameters) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int trial = 0; trial < 50; ++trial) {
    SpinSystem sys;
    sys.g_e = {2 * u(rng), 2 * u(rng), 2 * u(rng)};
    sys.g_n = u(rng);
    sys.a_hyperfine = {100 * u(rng), 100 * u(rng), 200 * u(rng)};
    sys.kappa = 80 * u(rng);
    sys.eta = 0.5 * (u(rng) + 1.0);
    FieldConfig field;
    field.b_ext = {u(rng), u(rng), 2 * u(rng)};
    field.b_tip = 0.1 * (u(rng) + 1.0);
    field.phi = 1.5 * (u(rng) + 1.0);
    field.theta = 3.0 * u(rng);
    field.tip_couples_nucleus = trial % 2 == 0;
    EXPECT_LT(hermitian_asymmetry(build_hamiltonian(sys, field)), 1e-12);
  }
}

TEST(Hamiltonian, UncoupledSpectrumIsSumOfLadders) {
  SpinSystem sys = bare_nucleus();
  FieldConfig field;
  field.b_tip = 0.0;
  field.b_ext = {0, 0, 0.7};
  const auto sol = eigh(build_hamiltonian(sys, field));
  std::vector<double> expected;
  for (double ms : {0.5, -0.5})
    for (double mi : {2.5, 1.5, 0.5, -0.5, -1.5, -2.5})
      expected.push_back(kBohrMagnetonMHzPerT * 0.56 * 0.7 * ms + kNuclearMagnetonMHzPerT * 0.315 * 0.7 * mi);
  std::sort(expected.begin(), expected.end());
  for (std::size_t k = 0; k < 12; ++k) EXPECT_NEAR(sol.values[k], expected[k], 1e-9);
}

TEST(Hamiltonian, TipFieldCouplesNucleusOnlyWhenRequested) {
  SpinSystem sys = bare_nucleus();
  sys.g_e = {0, 0, 0};
  FieldConfig field;
  field.b_ext = {0, 0, 0};
  field.phi = 0.0;
  field.b_tip = 1.0;
  EXPECT_LT(frobenius_norm(build_hamiltonian(sys, field)), 1e-15);
  field.tip_couples_nucleus = true;
  // Electron levels stay degenerate (g_e = 0), so nuclear rungs come in pairs.
  const auto sol = eigh(build_hamiltonian(sys, field));
  EXPECT_NEAR(sol.values[2] - sol.values[0], kNuclearMagnetonMHzPerT * 0.315, 1e-12);
}

TEST(Solve, LabelsFollowProductBasis) {
  const auto eig = solve(SpinSystem::titanium47(), FieldConfig{});
  for (std::size_t k = 0; k < eig.dim(); ++k) EXPECT_GT(eig.assigned_weight[k], 0.9);
  std::vector<ProductLabel> sorted = eig.assigned;
  auto basis = eig.basis_labels;
  auto cmp = [](const ProductLabel& a, const ProductLabel& b) {
    return std::pair(a.twice_ms, a.twice_mi) < std::pair(b.twice_ms, b.twice_mi);
  };
  std::sort(sorted.begin(), sorted.end(), cmp);
  std::sort(basis.begin(), basis.end(), cmp);
  EXPECT_EQ(sorted, basis);
}

TEST(Numerals, RoundTrip) {
  const auto i52 = SpinQuantumNumber::from_twice(5);
  for (int n = 1; n <= 10; ++n) {
    const auto [a, b] = nmr_pair_for_numeral(n, i52);
    EXPECT_EQ(nmr_numeral(a, b, i52), n);
    EXPECT_EQ(nmr_numeral(b, a, i52), n);
  }
  EXPECT_EQ(nmr_numeral(ProductLabel::of(-0.5, -2.5), ProductLabel::of(-0.5, -1.5), i52), 1);
  EXPECT_EQ(nmr_numeral(ProductLabel::of(0.5, -2.5), ProductLabel::of(0.5, -1.5), i52), 2);
  EXPECT_EQ(nmr_numeral(ProductLabel::of(-0.5, -1.5), ProductLabel::of(-0.5, -0.5), i52), 3);
  EXPECT_FALSE(nmr_numeral(ProductLabel::of(-0.5, -2.5), ProductLabel::of(0.5, -2.5), i52));
  EXPECT_EQ(roman_numeral(4), "IV");
  EXPECT_EQ(roman_numeral(9), "IX");
  EXPECT_EQ(roman_numeral(10), "X");
  EXPECT_THROW(nmr_pair_for_numeral(11, i52), std::invalid_argument);
}

TEST(TransitionCatalog, PureNuclearZeemanLadder) {
  const auto eig = solve(bare_nucleus(), FieldConfig{});
  const double fz = kNuclearMagnetonMHzPerT * 0.315 * 0.45;
  int count = 0;
  for (const auto& line : transition_catalog(eig, Channel::nmr)) {
    if (std::abs(line.delta_mi) < 0.5) continue;
    EXPECT_NEAR(line.frequency, fz, 1e-9);
    EXPECT_NEAR(std::abs(line.delta_mi), 1.0, 1e-9);
    ++count;
  }
  EXPECT_EQ(count, 10);
}

TEST(TransitionCatalog, FittedParametersAt450mT) {
  const auto eig = solve(SpinSystem::titanium47(), FieldConfig::fitted_tip(0.45));
  std::map<int, double> by_numeral;
  for (const auto& line : transition_catalog(eig, Channel::nmr))
    if (line.numeral) by_numeral[*line.numeral] = line.frequency;
  ASSERT_EQ(by_numeral.size(), 10u);
  EXPECT_NEAR(by_numeral[1], 49.3, 3.0);
  EXPECT_NEAR(by_numeral[2], 85.0, 3.0);
  for (int n = 1; n <= 10; ++n) EXPECT_NEAR(by_numeral[n], nmr_frequency(eig, n), 1e-12);
  const double half_a = 132.1 / 2.0;
  const double lo = std::min(by_numeral[3], by_numeral[4]);
  const double hi = std::max(by_numeral[3], by_numeral[4]);
  EXPECT_GT(lo, by_numeral[1]);
  EXPECT_LT(hi, by_numeral[2]);
  EXPECT_LT(lo, half_a);
  EXPECT_GT(hi, half_a);
}

TEST(TransitionCatalog, WeightFloorFilters) {
  const auto eig = solve(SpinSystem::titanium47(), FieldConfig{});
  EXPECT_TRUE(transition_catalog(eig, Channel::all, 1e9).empty());
  const auto all = transition_catalog(eig, Channel::all, 0.0);
  EXPECT_EQ(all.size(), 66u);
  for (const auto& line : all) {
    EXPECT_GE(line.weight, 0.0);
    EXPECT_NEAR(line.frequency, eig.solution.values[line.to_index] - eig.solution.values[line.from_index], 1e-12);
  }
}

TEST(TransitionCatalog, WeightsIgnoreEigenvectorPhase) {
  auto eig = solve(SpinSystem::titanium47(), FieldConfig{});
  const auto before = transition_catalog(eig, Channel::all, 0.0);
  for (std::size_t k = 0; k < eig.dim(); ++k) {
    const Complex phase = std::polar(1.0, 0.37 * static_cast<double>(k + 1));
    for (std::size_t i = 0; i < eig.dim(); ++i) eig.solution.vectors(i, k) *= phase;
  }
  const auto after = transition_catalog(eig, Channel::all, 0.0);
  ASSERT_EQ(before.size(), after.size());
  for (std::size_t k = 0; k < before.size(); ++k) EXPECT_NEAR(before[k].weight, after[k].weight, 1e-13);
}

TEST(TransitionCatalog, FirstOrderFormulaAgreement) {
  const SpinSystem sys = SpinSystem::titanium47();
  for (double b : {0.2, 0.45, 1.0, 1.4}) {
    FieldConfig field = FieldConfig::fitted_tip(b);
    field.b_tip = 0.0;
    const auto eig = solve(sys, field);
    const double gap = kBohrMagnetonMHzPerT * 0.56 * b;
    const double bound = sys.a_hyperfine[0] * sys.a_hyperfine[0] * 9.0 / gap;
    for (int n = 1; n <= 10; ++n) {
      const auto [a, c] = nmr_pair_for_numeral(n, sys.i_nuclear);
      const double f1 = std::abs(first_order_nmr(sys, b, a.ms(), a.mi()));
      EXPECT_NEAR(nmr_frequency(eig, n), f1, bound) << "B=" << b << " n=" << n;
    }
  }
}

TEST(EsrFrequencies, SingleLineWithoutNucleus) {
  const SpinSystem sys = SpinSystem::titanium_i0();
  FieldConfig field;
  field.phi = 0.0;
  const auto lines = esr_frequencies(sys, field);
  ASSERT_EQ(lines.size(), 1u);
  EXPECT_NEAR(lines[0].frequency, kBohrMagnetonMHzPerT * 0.56 * (0.45 + 0.0679), 1e-9);
}

TEST(EsrFrequencies, FittedParametersAt450mT) {
  const auto lines = esr_frequencies(SpinSystem::titanium47(), FieldConfig::fitted_tip(0.45));
  ASSERT_EQ(lines.size(), 6u);
  EXPECT_GE(lines.front().frequency, 3600.0);
  EXPECT_LE(lines.front().frequency, 3900.0);
  const double mean_spacing = (lines.back().frequency - lines.front().frequency) / 5.0;
  EXPECT_NEAR(mean_spacing, 132.1, 2.0);
  // Lowest ESR frequency belongs to m_I = -5/2 for positive A_z.
  for (std::size_t k = 0; k < 6; ++k) EXPECT_EQ(lines[k].from_label.twice_mi, -5 + 2 * static_cast<int>(k));
}

TEST(EsrFrequencies, RequiresSpinHalf) {
  SpinSystem sys;
  sys.s_electron = SpinQuantumNumber::from_twice(2);
  EXPECT_THROW(esr_frequencies(sys, FieldConfig{}), std::invalid_argument);
}

TEST(EsrFrequencies, ZeroFieldIsDegenerate) {
  SpinSystem sys = SpinSystem::titanium47();
  sys.a_hyperfine = {132.1, 132.1, 132.1};
  sys.kappa = 0.0;
  FieldConfig field;
  field.b_ext = {0, 0, 0};
  field.b_tip = 0.0;
  EXPECT_THROW(esr_frequencies(sys, field), DegenerateSpectrumError);
}

TEST(Hybridization, ZeroWithoutTransverseHyperfine) {
  SpinSystem sys = SpinSystem::titanium47();
  sys.a_hyperfine = {0.0, 0.0, 132.1};
  for (double b : {0.2, 0.8, 1.4})
    EXPECT_EQ(hybridization_coefficient(sys, FieldConfig::fitted_tip(b), -1.5).coefficient, 0.0);
}

TEST(Hybridization, DecreasesWithFieldAndScalesAsInverseField) {
  const SpinSystem sys = SpinSystem::titanium47();
  double prev = 2.0;
  for (int k = 0; k <= 24; ++k) {
    const double b = 0.2 + 0.05 * k;
    const double c = hybridization_coefficient(sys, FieldConfig::fitted_tip(b), -1.5).coefficient;
    EXPECT_LT(c, prev);
    EXPECT_GE(c, 0.0);
    prev = c;
  }
  const double c1 = hybridization_coefficient(sys, FieldConfig::fitted_tip(1.0), -1.5).coefficient;
  const double c2 = hybridization_coefficient(sys, FieldConfig::fitted_tip(2.0), -1.5).coefficient;
  // Gap grows as B + B_tip,z; the 1/B law holds for the total electron field.
  const double bt = FieldConfig{}.tip_vector()[2];
  EXPECT_NEAR(c1 / c2, (2.0 + bt) / (1.0 + bt), 0.05 * (2.0 + bt) / (1.0 + bt));
}

TEST(Hybridization, MatchesPerturbationTheory) {
  const SpinSystem sys = SpinSystem::titanium47();
  FieldConfig field = FieldConfig::fitted_tip(1.0);
  field.b_tip = 0.0;
  const double m = -1.5;
  const double gap = kBohrMagnetonMHzPerT * 0.56 * 1.0;
  const double expected = 0.5 * sys.a_hyperfine[0] * std::sqrt(2.5 * 3.5 - m * (m - 1.0)) / gap;
  EXPECT_NEAR(hybridization_coefficient(sys, field, m).coefficient, expected, 0.05 * expected);
}

TEST(Hybridization, InvalidSublevelsAndStrongMixing) {
  const SpinSystem sys = SpinSystem::titanium47();
  EXPECT_THROW(hybridization_coefficient(sys, FieldConfig{}, -2.5), std::invalid_argument);
  EXPECT_THROW(hybridization_coefficient(sys, FieldConfig{}, 0.3), std::invalid_argument);
  // Electron quantized along x and a rhombic quadrupole mixing m_I: no
  // eigenstate is mostly |down, 1/2>.
  SpinSystem mixed = sys;
  mixed.a_hyperfine = {0.0, 0.0, 0.0};
  mixed.g_n = 0.0;
  mixed.kappa = -500.0;
  mixed.eta = 1.0;
  FieldConfig transverse;
  transverse.b_ext = {1.0, 0, 0};
  transverse.b_tip = 0.0;
  EXPECT_THROW(hybridization_coefficient(mixed, transverse, 0.5), HybridizationTooStrongError);
}

TEST(DoubleQuantum, TelescopingIdentity) {
  const auto eig = solve(SpinSystem::titanium47(), FieldConfig::fitted_tip(0.45));
  const auto dq = double_quantum_frequencies(eig);
  ASSERT_EQ(dq.size(), 8u);
  for (const auto& line : dq) {
    EXPECT_NEAR(std::abs(line.delta_mi), 2.0, 0.05);
    EXPECT_GT(line.frequency, 100.0);
    const ProductLabel lo = line.from_label.twice_mi < line.to_label.twice_mi ? line.from_label : line.to_label;
    const ProductLabel mid{lo.twice_ms, lo.twice_mi + 2};
    const ProductLabel hi{lo.twice_ms, lo.twice_mi + 4};
    const double sum = std::abs(eig.energy(mid) - eig.energy(lo)) + std::abs(eig.energy(hi) - eig.energy(mid));
    EXPECT_NEAR(line.frequency, sum, 1e-9);
  }
  // I + III = (down, -5/2 <-> -1/2)
  const double f13 = nmr_frequency(eig, 1) + nmr_frequency(eig, 3);
  const double direct = std::abs(eig.energy(ProductLabel::of(-0.5, -0.5)) - eig.energy(ProductLabel::of(-0.5, -2.5)));
  EXPECT_NEAR(f13, direct, 1e-9);
}

TEST(DoubleQuantum, EmptyForSpinHalfNucleus) {
  SpinSystem sys = SpinSystem::titanium47();
  sys.i_nuclear = SpinQuantumNumber::from_twice(1);
  sys.kappa = 0.0;
  EXPECT_TRUE(double_quantum_frequencies(solve(sys, FieldConfig{})).empty());
}

TEST(FieldSweep, SinglePointMatchesDirectSolve) {
  const SpinSystem sys = SpinSystem::titanium47();
  const std::vector<double> grid{0.0};
  const auto rows = field_sweep(sys, FieldConfig{}, grid);
  ASSERT_EQ(rows.size(), 1u);
  const auto sol = eigh(build_hamiltonian(sys, FieldConfig{}.with_b_z(0.0)));
  EXPECT_EQ(rows[0].energies, sol.values);
}

TEST(FieldSweep, TransitionOneSlopeAndContinuity) {
  const SpinSystem sys = SpinSystem::titanium47();
  std::vector<double> grid;
  for (int k = 0; k <= 120; ++k) grid.push_back(0.2 + 0.01 * k);
  const auto rows = field_sweep(sys, FieldConfig{}, grid);
  ASSERT_EQ(rows.size(), grid.size());
  for (const auto& row : rows) {
    EXPECT_EQ(row.energies.size(), 12u);
    EXPECT_GT(row.min_overlap, 0.9);
    ASSERT_TRUE(row.hybridization.has_value());
  }
  const double f0 = rows.front().nmr[0].second, f1 = rows.back().nmr[0].second;
  const double slope = std::abs(f1 - f0) / 1.2;
  EXPECT_NEAR(slope, kNuclearMagnetonMHzPerT * 0.315, 0.1);
  EXPECT_NEAR(kNuclearMagnetonMHzPerT * 0.315, 2.401, 1e-3);
  for (std::size_t k = 1; k < rows.size(); ++k) {
    EXPECT_LT(rows[k].nmr[0].second, rows[k - 1].nmr[0].second);
    EXPECT_LT(*rows[k].hybridization, *rows[k - 1].hybridization);
  }
}

TEST(FieldSweep, RejectsDescendingGrid) {
  const std::vector<double> grid{0.5, 0.4};
  EXPECT_THROW(field_sweep(SpinSystem::titanium47(), FieldConfig{}, grid), std::invalid_argument);
}
