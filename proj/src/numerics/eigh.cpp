#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "endorkit/numerics.hpp"

namespace endorkit {

namespace {

constexpr int kMaxSweeps = 100;

double off_diagonal_norm(const ComplexMatrix& a) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = i + 1; j < a.cols(); ++j) acc += std::norm(a(i, j));
  return std::sqrt(2.0 * acc);
}

// Applies the 2x2 unitary u (acting on indices p, q) as a <- u^H a u and v <- v u.
void rotate(ComplexMatrix& a, ComplexMatrix& v, std::size_t p, std::size_t q, const Complex u[2][2]) {
  const std::size_t n = a.rows();
  for (std::size_t k = 0; k < n; ++k) {
    const Complex akp = a(k, p), akq = a(k, q);
    a(k, p) = akp * u[0][0] + akq * u[1][0];
    a(k, q) = akp * u[0][1] + akq * u[1][1];
    const Complex vkp = v(k, p), vkq = v(k, q);
    v(k, p) = vkp * u[0][0] + vkq * u[1][0];
    v(k, q) = vkp * u[0][1] + vkq * u[1][1];
  }
  for (std::size_t k = 0; k < n; ++k) {
    const Complex apk = a(p, k), aqk = a(q, k);
    a(p, k) = std::conj(u[0][0]) * apk + std::conj(u[1][0]) * aqk;
    a(q, k) = std::conj(u[0][1]) * apk + std::conj(u[1][1]) * aqk;
  }
  a(p, q) = a(q, p) = Complex{};
  a(p, p) = a(p, p).real();
  a(q, q) = a(q, q).real();
}

std::size_t dominant_index(const ComplexMatrix& v, std::size_t col) {
  double best = 0.0;
  for (std::size_t i = 0; i < v.rows(); ++i) best = std::max(best, std::abs(v(i, col)));
  // First component within rounding of the maximum, so equal-weight
  // superpositions get a reproducible reference component.
  for (std::size_t i = 0; i < v.rows(); ++i)
    if (std::abs(v(i, col)) >= best * (1.0 - 1e-10)) return i;
  return 0;
}

}  // namespace

std::vector<Complex> EigenSolution::vector(std::size_t k) const {
  std::vector<Complex> out(vectors.rows());
  for (std::size_t i = 0; i < vectors.rows(); ++i) out[i] = vectors(i, k);
  return out;
}

EigenSolution eigh(const ComplexMatrix& h) {
  if (!h.square()) throw std::invalid_argument("eigh: matrix is not square");
  const std::size_t n = h.rows();
  double scale = 0.0;
  for (const auto& x : h.data()) scale = std::max(scale, std::abs(x));
  const double asym = hermitian_asymmetry(h);
  if (asym > 1e-10 * std::max(scale, 1.0)) {
    std::ostringstream msg;
    msg << "eigh: matrix is not Hermitian (max asymmetry " << asym << ")";
    throw std::invalid_argument(msg.str());
  }

  ComplexMatrix a = (h + adjoint(h)) * Complex{0.5, 0.0};
  ComplexMatrix v = ComplexMatrix::identity(n);
  const double total = frobenius_norm(a);
  const double tol = 1e-15 * total;

  for (int sweep = 0; sweep < kMaxSweeps; ++sweep) {
    if (off_diagonal_norm(a) <= tol) break;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const Complex b = a(p, q);
        const double mag = std::abs(b);
        if (mag == 0.0 || mag < 1e-300) continue;
        const double app = a(p, p).real();
        const double aqq = a(q, q).real();
        // Skip rotations that cannot change the diagonal in floating point.
        if (sweep > 3 && std::abs(app) + 1e3 * mag == std::abs(app) &&
            std::abs(aqq) + 1e3 * mag == std::abs(aqq)) {
          a(p, q) = a(q, p) = Complex{};
          continue;
        }
        const double tau = (aqq - app) / (2.0 * mag);
        const double t = (tau >= 0.0 ? 1.0 : -1.0) / (std::abs(tau) + std::sqrt(1.0 + tau * tau));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = t * c;
        const Complex phase = std::conj(b / mag);  // makes the (p,q) element real
        const Complex u[2][2] = {{c, s}, {-s * phase, c * phase}};
        rotate(a, v, p, q, u);
      }
    }
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::vector<std::size_t> dom(n);
  for (std::size_t k = 0; k < n; ++k) dom[k] = dominant_index(v, k);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
    const double ax = a(x, x).real(), ay = a(y, y).real();
    if (ax != ay) return ax < ay;
    return dom[x] < dom[y];
  });

  EigenSolution out;
  out.values.resize(n);
  out.vectors = ComplexMatrix(n, n);
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t src = order[k];
    out.values[k] = a(src, src).real();
    const Complex ref = v(dom[src], src);
    const Complex fix = std::abs(ref) > 0.0 ? std::conj(ref) / std::abs(ref) : Complex{1.0};
    for (std::size_t i = 0; i < n; ++i) out.vectors(i, k) = v(i, src) * fix;
  }
  return out;
}

}  // namespace endorkit
