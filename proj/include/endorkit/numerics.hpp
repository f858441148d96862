#pragma once

#include <complex>
#include <cstddef>
#include <functional>
#include <limits>
#include <span>
#include <stdexcept>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace endorkit {

using Complex = std::complex<double>;

// Physical constants, energies in MHz (E/h), fields in Tesla.
namespace constants {
inline constexpr double kBohrMagnetonMHzPerT = 13996.245;
inline constexpr double kNuclearMagnetonMHzPerT = 7.622593;
// h / k_B in K per MHz.
inline constexpr double kPlanckOverBoltzmannKPerMHz = 4.799243073e-5;
inline constexpr double kPi = 3.14159265358979323846;
}  // namespace constants

/// Dense row-major square-or-rectangular matrix.
template <typename T>
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, T fill = T{})
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = T{1};
    return m;
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  bool square() const { return rows_ == cols_; }

  T& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  const T& operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }

  Matrix& operator+=(const Matrix& o) {
    check_same_shape(o);
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
  }
  Matrix& operator-=(const Matrix& o) {
    check_same_shape(o);
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
    return *this;
  }
  Matrix& operator*=(T s) {
    for (auto& x : data_) x *= s;
    return *this;
  }

  friend Matrix operator+(Matrix a, const Matrix& b) { return a += b; }
  friend Matrix operator-(Matrix a, const Matrix& b) { return a -= b; }
  friend Matrix operator*(Matrix a, T s) { return a *= s; }
  friend Matrix operator*(T s, Matrix a) { return a *= s; }

  friend Matrix operator*(const Matrix& a, const Matrix& b) {
    if (a.cols_ != b.rows_) throw std::invalid_argument("matrix product: inner dimensions differ");
    Matrix out(a.rows_, b.cols_);
    for (std::size_t i = 0; i < a.rows_; ++i)
      for (std::size_t k = 0; k < a.cols_; ++k) {
        const T aik = a(i, k);
        if (aik == T{}) continue;
        for (std::size_t j = 0; j < b.cols_; ++j) out(i, j) += aik * b(k, j);
      }
    return out;
  }

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  void check_same_shape(const Matrix& o) const {
    if (rows_ != o.rows_ || cols_ != o.cols_) throw std::invalid_argument("matrix shapes differ");
  }

  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<T> data_;
};

using ComplexMatrix = Matrix<Complex>;
using RealMatrix = Matrix<double>;

ComplexMatrix adjoint(const ComplexMatrix& m);
ComplexMatrix kron(const ComplexMatrix& a, const ComplexMatrix& b);
std::vector<Complex> matvec(const ComplexMatrix& m, std::span<const Complex> v);
Complex inner(std::span<const Complex> a, std::span<const Complex> b);  // <a|b>
double frobenius_norm(const ComplexMatrix& m);
/// max |m(i,j) - conj(m(j,i))|
double hermitian_asymmetry(const ComplexMatrix& m);
ComplexMatrix to_complex(const RealMatrix& m);

/// Shortest decimal text that parses back to the same double.
std::string format_double(double x);
/// Whole-string parse; leading/trailing blanks allowed.
std::optional<double> parse_double(std::string_view text);

/// A spin quantum number j with 2j a nonnegative integer.
class SpinQuantumNumber {
 public:
  /// Throws std::invalid_argument unless 2j is a nonnegative integer.
  static SpinQuantumNumber from_double(double j);
  static constexpr SpinQuantumNumber from_twice(int twice_j) { return SpinQuantumNumber(twice_j); }

  int twice() const { return twice_; }
  double value() const { return 0.5 * twice_; }
  int multiplicity() const { return twice_ + 1; }
  /// Magnetic quantum numbers j, j-1, ..., -j (the basis order).
  std::vector<double> m_values() const;

  friend bool operator==(SpinQuantumNumber, SpinQuantumNumber) = default;

 private:
  constexpr explicit SpinQuantumNumber(int twice) : twice_(twice) {}
  int twice_ = 0;
};

struct SpinOperators {
  SpinQuantumNumber j = SpinQuantumNumber::from_twice(0);
  ComplexMatrix sx, sy, sz;
};

/// Spin matrices with hbar = 1 in the |j, m> basis ordered m = j ... -j.
SpinOperators angular_momentum_ops(SpinQuantumNumber j);
SpinOperators angular_momentum_ops(double j);

struct EigenSolution {
  std::vector<double> values;  // ascending
  ComplexMatrix vectors;       // column k is the eigenvector for values[k]

  std::size_t dim() const { return values.size(); }
  std::vector<Complex> vector(std::size_t k) const;
};

/// Cyclic Jacobi diagonalization of a Hermitian matrix. Eigenvectors are
/// phase-fixed so their largest-magnitude component is real and positive.
EigenSolution eigh(const ComplexMatrix& h);

/// Solves a x = b by Gaussian elimination with partial pivoting.
/// Throws std::domain_error when a is numerically singular.
std::vector<double> solve_linear(RealMatrix a, std::vector<double> b);

struct PseudoInverse {
  RealMatrix inverse;
  std::size_t rank = 0;
};

/// Moore-Penrose inverse of a symmetric positive semidefinite matrix.
/// Eigenvalues below rel_cutoff * max eigenvalue (after diagonal scaling) are
/// treated as zero.
PseudoInverse symmetric_pseudo_inverse(const RealMatrix& a, double rel_cutoff = 1e-12);

// ---------------------------------------------------------------------------
// Damped nonlinear least squares

struct ParameterBounds {
  double lower = -std::numeric_limits<double>::infinity();
  double upper = std::numeric_limits<double>::infinity();
  bool contains(double x) const { return x >= lower && x <= upper; }
};

struct LeastSquaresOptions {
  int max_iterations = 500;
  double x_tolerance = 1e-9;   // relative parameter step
  double f_tolerance = 1e-12;  // relative decrease of the residual norm
  double jacobian_step = 1e-6; // forward difference, relative per parameter
  double initial_lambda = 1e-3;
};

struct LeastSquaresResult {
  std::vector<double> params;
  RealMatrix covariance;
  double residual_norm = 0.0;
  int iterations = 0;
  bool converged = false;
  std::size_t rank = 0;
  std::size_t n_residuals = 0;
  std::vector<double> residual_history;  // norms after each accepted step, starting at init

  double sigma(std::size_t i) const;
};

using ResidualFunction = std::function<std::vector<double>(std::span<const double>)>;

class DivergedError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Levenberg-Marquardt with Marquardt diagonal scaling, bound projection and a
/// forward-difference Jacobian. Throws DivergedError as soon as the model
/// returns a non-finite residual after the initial point.
LeastSquaresResult least_squares(const ResidualFunction& model, std::vector<double> init,
                                 std::span<const ParameterBounds> bounds,
                                 const LeastSquaresOptions& options = {});

RealMatrix numeric_jacobian(const ResidualFunction& model, std::span<const double> params,
                            std::span<const ParameterBounds> bounds, double rel_step,
                            std::span<const double> r0);

}  // namespace endorkit
