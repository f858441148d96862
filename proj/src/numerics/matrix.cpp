#include "endorkit/numerics.hpp"

#include <algorithm>
#include <cmath>

namespace endorkit {

ComplexMatrix adjoint(const ComplexMatrix& m) {
  ComplexMatrix out(m.cols(), m.rows());
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) out(j, i) = std::conj(m(i, j));
  return out;
}

ComplexMatrix kron(const ComplexMatrix& a, const ComplexMatrix& b) {
  ComplexMatrix out(a.rows() * b.rows(), a.cols() * b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) {
      const Complex aij = a(i, j);
      if (aij == Complex{}) continue;
      for (std::size_t k = 0; k < b.rows(); ++k)
        for (std::size_t l = 0; l < b.cols(); ++l)
          out(i * b.rows() + k, j * b.cols() + l) = aij * b(k, l);
    }
  return out;
}

std::vector<Complex> matvec(const ComplexMatrix& m, std::span<const Complex> v) {
  if (v.size() != m.cols()) throw std::invalid_argument("apply: vector length mismatch");
  std::vector<Complex> out(m.rows());
  for (std::size_t i = 0; i < m.rows(); ++i) {
    Complex acc{};
    for (std::size_t j = 0; j < m.cols(); ++j) acc += m(i, j) * v[j];
    out[i] = acc;
  }
  return out;
}

Complex inner(std::span<const Complex> a, std::span<const Complex> b) {
  if (a.size() != b.size()) throw std::invalid_argument("inner: length mismatch");
  Complex acc{};
  for (std::size_t i = 0; i < a.size(); ++i) acc += std::conj(a[i]) * b[i];
  return acc;
}

double frobenius_norm(const ComplexMatrix& m) {
  double acc = 0.0;
  for (const auto& x : m.data()) acc += std::norm(x);
  return std::sqrt(acc);
}

double hermitian_asymmetry(const ComplexMatrix& m) {
  if (!m.square()) return std::numeric_limits<double>::infinity();
  double worst = 0.0;
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = i; j < m.cols(); ++j)
      worst = std::max(worst, std::abs(m(i, j) - std::conj(m(j, i))));
  return worst;
}

ComplexMatrix to_complex(const RealMatrix& m) {
  ComplexMatrix out(m.rows(), m.cols());
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) out(i, j) = m(i, j);
  return out;
}

std::vector<double> solve_linear(RealMatrix a, std::vector<double> b) {
  const std::size_t n = a.rows();
  if (!a.square() || b.size() != n) throw std::invalid_argument("solve_linear: shape mismatch");
  double scale = 0.0;
  for (double x : a.data()) scale = std::max(scale, std::abs(x));
  const double tiny = scale * static_cast<double>(n) * std::numeric_limits<double>::epsilon();

  for (std::size_t col = 0; col < n; ++col) {
    std::size_t pivot = col;
    for (std::size_t r = col + 1; r < n; ++r)
      if (std::abs(a(r, col)) > std::abs(a(pivot, col))) pivot = r;
    if (std::abs(a(pivot, col)) <= tiny || a(pivot, col) == 0.0)
      throw std::domain_error("solve_linear: matrix is singular");
    if (pivot != col) {
      for (std::size_t c = 0; c < n; ++c) std::swap(a(col, c), a(pivot, c));
      std::swap(b[col], b[pivot]);
    }
    for (std::size_t r = col + 1; r < n; ++r) {
      const double f = a(r, col) / a(col, col);
      if (f == 0.0) continue;
      for (std::size_t c = col; c < n; ++c) a(r, c) -= f * a(col, c);
      b[r] -= f * b[col];
    }
  }
  std::vector<double> x(n);
  for (std::size_t i = n; i-- > 0;) {
    double acc = b[i];
    for (std::size_t c = i + 1; c < n; ++c) acc -= a(i, c) * x[c];
    x[i] = acc / a(i, i);
  }
  return x;
}

PseudoInverse symmetric_pseudo_inverse(const RealMatrix& a, double rel_cutoff) {
  const std::size_t n = a.rows();
  if (!a.square()) throw std::invalid_argument("symmetric_pseudo_inverse: matrix not square");
  std::vector<double> d(n);
  for (std::size_t i = 0; i < n; ++i) d[i] = a(i, i) > 0.0 ? std::sqrt(a(i, i)) : 1.0;

  ComplexMatrix scaled(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      scaled(i, j) = 0.5 * (a(i, j) + a(j, i)) / (d[i] * d[j]);
  const EigenSolution sol = eigh(scaled);

  double max_ev = 0.0;
  for (double v : sol.values) max_ev = std::max(max_ev, std::abs(v));
  PseudoInverse out{RealMatrix(n, n), 0};
  for (std::size_t k = 0; k < n; ++k) {
    const double ev = sol.values[k];
    if (!(ev > rel_cutoff * max_ev) || ev <= 0.0) continue;
    ++out.rank;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        out.inverse(i, j) += sol.vectors(i, k).real() * sol.vectors(j, k).real() / ev;
  }
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) out.inverse(i, j) /= d[i] * d[j];
  return out;
}

}  // namespace endorkit
