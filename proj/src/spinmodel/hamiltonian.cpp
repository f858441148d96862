#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "endorkit/spinmodel.hpp"
#include "detail.hpp"

namespace endorkit {

double SpinSystem::quadrupole_q() const {
  const int two_i = i_nuclear.twice();
  if (two_i < 2) return 0.0;
  return kappa / (two_i * (two_i - 1));
}

void SpinSystem::validate() const {
  if (!(eta >= 0.0 && eta <= 1.0)) throw std::invalid_argument("eta must lie in [0, 1]");
  for (double g : g_e)
    if (!std::isfinite(g)) throw std::invalid_argument("g_e components must be finite");
  for (double a : a_hyperfine)
    if (!std::isfinite(a)) throw std::invalid_argument("hyperfine components must be finite");
  if (!std::isfinite(g_n) || !std::isfinite(kappa)) throw std::invalid_argument("g_n and kappa must be finite");
  if (i_nuclear.twice() < 2 && kappa != 0.0)
    throw std::invalid_argument("quadrupole coupling kappa requires I >= 1");
}

SpinSystem SpinSystem::titanium47() { return SpinSystem{}; }

SpinSystem SpinSystem::titanium_i0() {
  SpinSystem sys;
  sys.i_nuclear = SpinQuantumNumber::from_twice(0);
  sys.g_n = 0.0;
  sys.a_hyperfine = {0.0, 0.0, 0.0};
  sys.kappa = 0.0;
  return sys;
}

Vec3 FieldConfig::tip_vector() const {
  return {b_tip * std::sin(phi) * std::cos(theta), b_tip * std::sin(phi) * std::sin(theta),
          b_tip * std::cos(phi)};
}

void FieldConfig::validate() const {
  for (double b : b_ext)
    if (!std::isfinite(b)) throw std::invalid_argument("external field components must be finite");
  if (!(b_tip >= 0.0)) throw std::invalid_argument("b_tip must be nonnegative");
  if (!(phi >= 0.0 && phi <= constants::kPi)) throw std::invalid_argument("phi must lie in [0, pi]");
  if (!std::isfinite(theta)) throw std::invalid_argument("theta must be finite");
}

FieldConfig FieldConfig::fitted_tip(double b_z) {
  FieldConfig f;
  f.b_ext = {0.0, 0.0, b_z};
  return f;
}

FieldConfig FieldConfig::with_b_z(double b_z) const {
  FieldConfig f = *this;
  f.b_ext[2] = b_z;
  return f;
}

ProductLabel ProductLabel::of(double ms, double mi) {
  return {static_cast<int>(std::lround(2.0 * ms)), static_cast<int>(std::lround(2.0 * mi))};
}

std::string ProductLabel::str() const {
  auto half = [](int twice) {
    std::ostringstream os;
    if (twice % 2 == 0) os << twice / 2;
    else os << twice << "/2";
    return os.str();
  };
  std::string s = twice_ms > 0 ? "up" : (twice_ms < 0 ? "down" : "0");
  if (twice_ms != 1 && twice_ms != -1) s = half(twice_ms);
  return "|" + s + "," + half(twice_mi) + ">";
}

std::vector<ProductLabel> product_basis(const SpinSystem& sys) {
  std::vector<ProductLabel> labels;
  for (double ms : sys.s_electron.m_values())
    for (double mi : sys.i_nuclear.m_values()) labels.push_back(ProductLabel::of(ms, mi));
  return labels;
}

ComplexMatrix build_hamiltonian(const SpinSystem& sys, const FieldConfig& field) {
  sys.validate();
  field.validate();
  const SpinOperators s = angular_momentum_ops(sys.s_electron);
  const SpinOperators n = angular_momentum_ops(sys.i_nuclear);
  const auto one_s = ComplexMatrix::identity(static_cast<std::size_t>(sys.s_electron.multiplicity()));
  const auto one_n = ComplexMatrix::identity(static_cast<std::size_t>(sys.i_nuclear.multiplicity()));

  const std::array<const ComplexMatrix*, 3> s_ops{&s.sx, &s.sy, &s.sz};
  const std::array<const ComplexMatrix*, 3> i_ops{&n.sx, &n.sy, &n.sz};
  const Vec3 tip = field.tip_vector();
  const double q = sys.quadrupole_q();
  const Vec3 quad{-0.5 * (1.0 - sys.eta) * q, -0.5 * (1.0 + sys.eta) * q, q};

  ComplexMatrix h(sys.dim(), sys.dim());
  for (std::size_t axis = 0; axis < 3; ++axis) {
    const ComplexMatrix s_full = kron(*s_ops[axis], one_n);
    const ComplexMatrix i_full = kron(one_s, *i_ops[axis]);
    const double b_electron = field.b_ext[axis] + tip[axis];
    const double b_nuclear = field.b_ext[axis] + (field.tip_couples_nucleus ? tip[axis] : 0.0);
    h += s_full * Complex{constants::kBohrMagnetonMHzPerT * sys.g_e[axis] * b_electron};
    h += i_full * Complex{constants::kNuclearMagnetonMHzPerT * sys.g_n * b_nuclear};
    if (sys.a_hyperfine[axis] != 0.0) h += (s_full * i_full) * Complex{sys.a_hyperfine[axis]};
    if (quad[axis] != 0.0) h += (i_full * i_full) * Complex{quad[axis]};
  }
  return h;
}

std::size_t SpinEigensystem::index_of(const ProductLabel& label) const {
  const auto it = std::find(assigned.begin(), assigned.end(), label);
  if (it == assigned.end()) throw std::invalid_argument("no eigenstate carries label " + label.str());
  return static_cast<std::size_t>(it - assigned.begin());
}

std::size_t SpinEigensystem::basis_index(const ProductLabel& label) const {
  const auto it = std::find(basis_labels.begin(), basis_labels.end(), label);
  if (it == basis_labels.end()) throw std::invalid_argument("label outside the product basis: " + label.str());
  return static_cast<std::size_t>(it - basis_labels.begin());
}

namespace {

// Greedy maximum-weight matching of rows to columns in a square weight table.
std::vector<std::size_t> greedy_match(const RealMatrix& w) {
  const std::size_t n = w.rows();
  std::vector<std::pair<std::size_t, std::size_t>> cells;
  cells.reserve(n * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) cells.emplace_back(i, j);
  std::stable_sort(cells.begin(), cells.end(),
                   [&](const auto& x, const auto& y) { return w(x.first, x.second) > w(y.first, y.second); });
  std::vector<std::size_t> match(n, n);
  std::vector<bool> col_used(n, false);
  std::size_t done = 0;
  for (const auto& [i, j] : cells) {
    if (match[i] != n || col_used[j]) continue;
    match[i] = j;
    col_used[j] = true;
    if (++done == n) break;
  }
  return match;
}

}  // namespace

SpinEigensystem solve(const SpinSystem& sys, const FieldConfig& field) {
  SpinEigensystem eig;
  eig.s_electron = sys.s_electron;
  eig.i_nuclear = sys.i_nuclear;
  eig.solution = eigh(build_hamiltonian(sys, field));
  eig.basis_labels = product_basis(sys);
  const std::size_t n = eig.dim();

  RealMatrix w(n, n);
  for (std::size_t k = 0; k < n; ++k)
    for (std::size_t b = 0; b < n; ++b) w(k, b) = std::norm(eig.solution.vectors(b, k));
  const auto match = greedy_match(w);
  eig.assigned.resize(n);
  eig.assigned_weight.resize(n);
  eig.sz_expect.assign(n, 0.0);
  eig.iz_expect.assign(n, 0.0);
  for (std::size_t k = 0; k < n; ++k) {
    eig.assigned[k] = eig.basis_labels[match[k]];
    eig.assigned_weight[k] = w(k, match[k]);
    for (std::size_t b = 0; b < n; ++b) {
      eig.sz_expect[k] += w(k, b) * eig.basis_labels[b].ms();
      eig.iz_expect[k] += w(k, b) * eig.basis_labels[b].mi();
    }
  }
  return eig;
}

std::vector<std::size_t> track_states(const EigenSolution& prev, const EigenSolution& next, double* min_overlap) {
  const std::size_t n = next.dim();
  RealMatrix w(n, n);
  for (std::size_t j = 0; j < n; ++j) {
    const auto vj = next.vector(j);
    for (std::size_t k = 0; k < n; ++k) w(j, k) = std::norm(inner(prev.vector(k), vj));
  }
  const auto match = greedy_match(w);
  if (min_overlap != nullptr) {
    double lo = 1.0;
    for (std::size_t j = 0; j < n; ++j) lo = std::min(lo, w(j, match[j]));
    *min_overlap = lo;
  }
  return match;
}

}  // namespace endorkit
