#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

#include "detail.hpp"
#include "endorkit/spinmodel.hpp"

namespace endorkit {

std::string roman_numeral(int n) {
  if (n <= 0) return std::to_string(n);
  static constexpr std::pair<int, const char*> table[] = {
      {1000, "M"}, {900, "CM"}, {500, "D"}, {400, "CD"}, {100, "C"}, {90, "XC"}, {50, "L"},
      {40, "XL"},  {10, "X"},   {9, "IX"},  {5, "V"},   {4, "IV"},  {1, "I"}};
  std::string out;
  for (const auto& [value, glyph] : table)
    while (n >= value) {
      out += glyph;
      n -= value;
    }
  return out;
}

std::optional<int> nmr_numeral(const ProductLabel& a, const ProductLabel& b, SpinQuantumNumber i_nuclear) {
  if (a.twice_ms != b.twice_ms || std::abs(a.twice_ms) != 1) return std::nullopt;
  if (std::abs(a.twice_mi - b.twice_mi) != 2) return std::nullopt;
  const int lower_twice = std::min(a.twice_mi, b.twice_mi);
  const int pair_index = (lower_twice + i_nuclear.twice()) / 2;
  return 2 * pair_index + (a.twice_ms < 0 ? 1 : 2);
}

std::pair<ProductLabel, ProductLabel> nmr_pair_for_numeral(int n, SpinQuantumNumber i_nuclear) {
  const int pairs = i_nuclear.twice();
  if (n < 1 || n > 2 * pairs) throw std::invalid_argument("NMR transition number out of range: " + std::to_string(n));
  const int pair_index = (n - 1) / 2;
  const int twice_ms = (n % 2 == 1) ? -1 : 1;
  const int lower = -i_nuclear.twice() + 2 * pair_index;
  return {ProductLabel{twice_ms, lower}, ProductLabel{twice_ms, lower + 2}};
}

std::string TransitionLine::label() const {
  if (numeral) return roman_numeral(*numeral);
  return from_label.str() + "<->" + to_label.str();
}

namespace {

struct DriveOperators {
  ComplexMatrix electron_x;
  ComplexMatrix nuclear_x;
  ComplexMatrix nuclear_x2;
};

DriveOperators drive_operators(const SpinEigensystem& eig) {
  const auto s = angular_momentum_ops(eig.s_electron);
  const auto n = angular_momentum_ops(eig.i_nuclear);
  const auto one_s = ComplexMatrix::identity(static_cast<std::size_t>(eig.s_electron.multiplicity()));
  const auto one_n = ComplexMatrix::identity(static_cast<std::size_t>(eig.i_nuclear.multiplicity()));
  DriveOperators ops;
  ops.electron_x = kron(s.sx, one_n);
  ops.nuclear_x = kron(one_s, n.sx);
  ops.nuclear_x2 = ops.nuclear_x * ops.nuclear_x;
  return ops;
}

// Column k holds op |v_k>.
std::vector<std::vector<Complex>> applied(const ComplexMatrix& op, const EigenSolution& sol) {
  std::vector<std::vector<Complex>> out(sol.dim());
  for (std::size_t k = 0; k < sol.dim(); ++k) out[k] = matvec(op, sol.vector(k));
  return out;
}

TransitionLine make_line(const SpinEigensystem& eig, std::size_t lo, std::size_t hi, double weight) {
  TransitionLine line;
  line.from_index = lo;
  line.to_index = hi;
  line.frequency = eig.solution.values[hi] - eig.solution.values[lo];
  line.weight = weight;
  line.delta_ms = eig.sz_expect[hi] - eig.sz_expect[lo];
  line.delta_mi = eig.iz_expect[hi] - eig.iz_expect[lo];
  line.from_label = eig.assigned[lo];
  line.to_label = eig.assigned[hi];
  return line;
}

constexpr double kMinFrequency = 1e-9;  // MHz; degenerate pairs carry no line

}  // namespace

std::vector<TransitionLine> transition_catalog(const SpinEigensystem& eig, Channel channel, double weight_floor) {
  const auto ops = drive_operators(eig);
  const auto& sol = eig.solution;
  const auto ex = applied(ops.electron_x, sol);
  const auto nx = applied(ops.nuclear_x, sol);
  std::vector<TransitionLine> lines;
  for (std::size_t lo = 0; lo < sol.dim(); ++lo) {
    for (std::size_t hi = lo + 1; hi < sol.dim(); ++hi) {
      if (sol.values[hi] - sol.values[lo] < kMinFrequency) continue;
      const auto vhi = sol.vector(hi);
      const double w_e = std::norm(inner(vhi, ex[lo]));
      const double w_n = std::norm(inner(vhi, nx[lo]));
      double weight = 0.0;
      switch (channel) {
        case Channel::esr: weight = w_e; break;
        case Channel::nmr: weight = w_n; break;
        case Channel::all: weight = w_e + w_n; break;
      }
      if (weight < weight_floor) continue;
      TransitionLine line = make_line(eig, lo, hi, weight);
      line.numeral = nmr_numeral(line.from_label, line.to_label, eig.i_nuclear);
      lines.push_back(std::move(line));
    }
  }
  std::stable_sort(lines.begin(), lines.end(),
                   [](const TransitionLine& a, const TransitionLine& b) { return a.frequency < b.frequency; });
  return lines;
}

std::vector<TransitionLine> esr_frequencies(const SpinEigensystem& eig) {
  if (eig.s_electron.twice() != 1) throw std::invalid_argument("esr_frequencies requires S = 1/2");
  const auto n_lines = static_cast<std::size_t>(eig.i_nuclear.multiplicity());
  std::vector<TransitionLine> candidates;
  for (auto& line : transition_catalog(eig, Channel::esr, 0.0))
    if (std::abs(line.delta_ms) > 0.5 && std::abs(line.delta_mi) < 0.5 &&
        line.from_label.twice_mi == line.to_label.twice_mi)
      candidates.push_back(std::move(line));
  std::stable_sort(candidates.begin(), candidates.end(),
                   [](const TransitionLine& a, const TransitionLine& b) { return a.weight > b.weight; });
  if (candidates.size() < n_lines)
    throw DegenerateSpectrumError("only " + std::to_string(candidates.size()) + " allowed ESR lines, expected " +
                                  std::to_string(n_lines));
  candidates.resize(n_lines);
  std::vector<int> tags;
  for (const auto& c : candidates) tags.push_back(c.from_label.twice_mi);
  std::sort(tags.begin(), tags.end());
  if (std::adjacent_find(tags.begin(), tags.end()) != tags.end())
    throw DegenerateSpectrumError("ESR lines do not map one-to-one onto nuclear sublevels");
  std::sort(candidates.begin(), candidates.end(),
            [](const TransitionLine& a, const TransitionLine& b) { return a.frequency < b.frequency; });
  return candidates;
}

std::vector<TransitionLine> esr_frequencies(const SpinSystem& sys, const FieldConfig& field) {
  if (sys.s_electron.twice() != 1) throw std::invalid_argument("esr_frequencies requires S = 1/2");
  return esr_frequencies(solve(sys, field));
}

HybridizationReport hybridization_coefficient(const SpinEigensystem& eig, double b_z, double m_i) {
  if (eig.s_electron.twice() != 1) throw std::invalid_argument("hybridization_coefficient requires S = 1/2");
  const ProductLabel down = ProductLabel::of(-0.5, m_i);
  const ProductLabel up_partner = ProductLabel::of(0.5, m_i - 1.0);
  const int two_i = eig.i_nuclear.twice();
  if (std::abs(2.0 * m_i - down.twice_mi) > 1e-9 || std::abs(down.twice_mi) > two_i ||
      (down.twice_mi + two_i) % 2 != 0 || up_partner.twice_mi < -two_i)
    throw std::invalid_argument("m_i and m_i - 1 must both be nuclear sublevels");

  const std::size_t b_down = eig.basis_index(down);
  const std::size_t b_up = eig.basis_index(up_partner);
  std::size_t best = 0;
  double best_overlap = -1.0;
  for (std::size_t k = 0; k < eig.dim(); ++k) {
    const double o = std::norm(eig.solution.vectors(b_down, k));
    if (o > best_overlap) {
      best_overlap = o;
      best = k;
    }
  }
  if (best_overlap < 0.5) {
    std::ostringstream msg;
    msg << "eigenstate closest to " << down.str() << " has overlap " << best_overlap
        << " < 0.5; product-basis labels are not meaningful at B_z = " << b_z << " T";
    throw HybridizationTooStrongError(msg.str());
  }
  HybridizationReport report;
  report.b_z = b_z;
  report.m_i = m_i;
  report.m_i_partner = m_i - 1.0;
  report.coefficient = std::min(1.0, std::abs(eig.solution.vectors(b_up, best)));
  return report;
}

HybridizationReport hybridization_coefficient(const SpinSystem& sys, const FieldConfig& field, double m_i) {
  return hybridization_coefficient(solve(sys, field), field.b_ext[2], m_i);
}

std::vector<TransitionLine> double_quantum_frequencies(const SpinEigensystem& eig) {
  std::vector<TransitionLine> lines;
  if (eig.i_nuclear.twice() < 2) return lines;
  const auto ops = drive_operators(eig);
  const auto& sol = eig.solution;
  for (double ms : eig.s_electron.m_values()) {
    const auto mis = eig.i_nuclear.m_values();  // descending
    for (std::size_t k = 0; k + 2 < mis.size(); ++k) {
      const std::size_t a = eig.index_of(ProductLabel::of(ms, mis[k + 2]));
      const std::size_t c = eig.index_of(ProductLabel::of(ms, mis[k]));
      const std::size_t lo = sol.values[a] <= sol.values[c] ? a : c;
      const std::size_t hi = lo == a ? c : a;
      const double weight = std::norm(inner(sol.vector(hi), matvec(ops.nuclear_x2, sol.vector(lo))));
      lines.push_back(make_line(eig, lo, hi, weight));
    }
  }
  std::stable_sort(lines.begin(), lines.end(),
                   [](const TransitionLine& x, const TransitionLine& y) { return x.frequency < y.frequency; });
  return lines;
}

std::vector<SweepRow> field_sweep(const SpinSystem& sys, const FieldConfig& field_template,
                                  std::span<const double> b_z_grid, const SweepOptions& options) {
  for (std::size_t k = 1; k < b_z_grid.size(); ++k)
    if (!(b_z_grid[k] > b_z_grid[k - 1])) throw std::invalid_argument("field_sweep: grid must be ascending");

  std::vector<SweepRow> rows;
  std::optional<SpinEigensystem> prev;
  std::vector<ProductLabel> labels;
  for (double b_z : b_z_grid) {
    const FieldConfig field = field_template.with_b_z(b_z);
    SpinEigensystem eig = solve(sys, field);
    SweepRow row;
    row.b_z = b_z;
    row.energies = eig.solution.values;
    if (!prev) {
      labels = eig.assigned;
    } else {
      const auto match = track_states(prev->solution, eig.solution, &row.min_overlap);
      std::vector<ProductLabel> next(labels.size());
      for (std::size_t j = 0; j < match.size(); ++j) next[j] = labels[match[j]];
      labels = std::move(next);
    }
    row.labels = labels;

    auto energy_of = [&](const ProductLabel& l) {
      const auto it = std::find(labels.begin(), labels.end(), l);
      return row.energies[static_cast<std::size_t>(it - labels.begin())];
    };
    if (sys.s_electron.twice() == 1) {
      for (int n = 1; n <= 2 * sys.i_nuclear.twice(); ++n) {
        const auto [a, b] = nmr_pair_for_numeral(n, sys.i_nuclear);
        row.nmr.emplace_back(n, std::abs(energy_of(b) - energy_of(a)));
      }
      for (double mi : sys.i_nuclear.m_values()) {
        const double f = energy_of(ProductLabel::of(0.5, mi)) - energy_of(ProductLabel::of(-0.5, mi));
        row.esr.emplace_back(mi, std::abs(f));
      }
      std::reverse(row.esr.begin(), row.esr.end());  // ascending m_I
      if (options.hybridization_m_i) {
        try {
          row.hybridization = hybridization_coefficient(eig, b_z, *options.hybridization_m_i).coefficient;
        } catch (const HybridizationTooStrongError&) {
          row.hybridization = std::nullopt;
        } catch (const std::invalid_argument&) {
          row.hybridization = std::nullopt;
        }
      }
    }
    rows.push_back(std::move(row));
    prev = std::move(eig);
  }
  return rows;
}

}  // namespace endorkit
