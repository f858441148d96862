#include <cmath>
#include <string>

#include "endorkit/numerics.hpp"

namespace endorkit {

SpinQuantumNumber SpinQuantumNumber::from_double(double j) {
  const double twice = 2.0 * j;
  const double rounded = std::round(twice);
  if (!std::isfinite(j) || j < 0.0 || std::abs(twice - rounded) > 1e-12)
    throw std::invalid_argument("spin quantum number must be a nonnegative half-integer, got " +
                                std::to_string(j));
  return SpinQuantumNumber(static_cast<int>(rounded));
}

std::vector<double> SpinQuantumNumber::m_values() const {
  std::vector<double> m(multiplicity());
  for (int k = 0; k < multiplicity(); ++k) m[k] = 0.5 * (twice_ - 2 * k);
  return m;
}

SpinOperators angular_momentum_ops(SpinQuantumNumber j) {
  const auto n = static_cast<std::size_t>(j.multiplicity());
  const double jj = j.value();
  const auto m = j.m_values();

  // Raising operator: <m+1|S+|m> = sqrt(j(j+1) - m(m+1)); row k-1 holds m_k + 1.
  ComplexMatrix raise(n, n);
  for (std::size_t k = 1; k < n; ++k) raise(k - 1, k) = std::sqrt(jj * (jj + 1.0) - m[k] * (m[k] + 1.0));
  const ComplexMatrix lower = adjoint(raise);

  SpinOperators ops;
  ops.j = j;
  ops.sz = ComplexMatrix(n, n);
  for (std::size_t k = 0; k < n; ++k) ops.sz(k, k) = m[k];
  ops.sx = (raise + lower) * Complex{0.5, 0.0};
  ops.sy = (raise - lower) * Complex{0.0, -0.5};
  return ops;
}

SpinOperators angular_momentum_ops(double j) {
  return angular_momentum_ops(SpinQuantumNumber::from_double(j));
}

}  // namespace endorkit
