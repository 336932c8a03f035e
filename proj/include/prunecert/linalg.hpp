#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace prunecert {

using Vector = std::vector<double>;

/// Raised when operand shapes do not conform.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when a NaN or Inf would enter (or leave) a numeric value.
class NonFiniteError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Power iteration did not settle within the iteration cap. Carries the last
/// estimate and iterate so the caller can inspect it or retry with another
/// seed.
class ConvergenceError : public std::runtime_error {
 public:
  ConvergenceError(const std::string& what, double last_estimate,
                   Vector last_iterate, int iterations)
      : std::runtime_error(what),
        last_estimate_(last_estimate),
        last_iterate_(std::move(last_iterate)),
        iterations_(iterations) {}

  double last_estimate() const noexcept { return last_estimate_; }
  const Vector& last_iterate() const noexcept { return last_iterate_; }
  int iterations() const noexcept { return iterations_; }

 private:
  double last_estimate_;
  Vector last_iterate_;
  int iterations_;
};

/// (h + lambda I) could not be inverted. Supplying lambda > 0 usually fixes it.
class SingularMatrixError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Dense row-major real matrix. Every entry is finite.
class Matrix {
 public:
  Matrix() = default;
  /// Zero-filled rows x cols matrix.
  Matrix(std::size_t rows, std::size_t cols);
  /// Takes ownership of row-major `entries`; throws on size mismatch or
  /// non-finite entries.
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> entries);

  static Matrix identity(std::size_t n);
  static Matrix diagonal(std::span<const double> diag);
  static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows);
  static Matrix from_rows(const std::vector<Vector>& rows);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }

  std::span<const double> data() const noexcept { return data_; }
  std::span<const double> row(std::size_t r) const {
    return std::span<const double>(data_).subspan(r * cols_, cols_);
  }
  Vector row_vector(std::size_t r) const;
  Vector column_vector(std::size_t c) const;
  void set_row(std::size_t r, std::span<const double> values);

  Matrix transpose() const;
  bool is_zero() const noexcept;
  bool all_finite() const noexcept;
  /// Largest |entry|; 0 for the empty matrix.
  double max_abs() const noexcept;

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

Matrix operator+(const Matrix& a, const Matrix& b);
Matrix operator-(const Matrix& a, const Matrix& b);
Matrix operator*(const Matrix& a, const Matrix& b);
Matrix operator*(double s, const Matrix& m);
Vector operator*(const Matrix& m, std::span<const double> v);

/// Computes m^T v without forming the transpose.
Vector transpose_times(const Matrix& m, std::span<const double> v);

double norm2(std::span<const double> v);
Vector subtract(std::span<const double> a, std::span<const double> b);
bool all_finite(std::span<const double> v) noexcept;

struct SpectralOptions {
  double tol = 1e-10;
  int max_iter = 10'000;
  /// Seeds the deterministic start vector; change it to retry after a
  /// ConvergenceError.
  std::uint64_t seed = 0x9e3779b97f4a7c15ULL;
};

/// Largest singular value by power iteration on m^T m. Convergence is judged
/// on the norm estimate, so repeated top singular values are harmless.
double spectral_norm(const Matrix& m, const SpectralOptions& options = {});

double frobenius_norm(const Matrix& m);

/// 2 X X^T. This is the d x d curvature block of ||W X - W' X||_F^2 with
/// respect to one row of W; the full Hessian over vec(W) is block diagonal
/// with one copy of it per row.
Matrix gram(const Matrix& x);

/// Damping added to the diagonal before inverting a Hessian block.
class Damping {
 public:
  static Damping none() { return Damping(false, 0.0); }
  static Damping fixed(double lambda);
  /// 1e-8 * trace(h) / d, or 1e-8 when the trace vanishes.
  static Damping automatic() { return Damping(true, 0.0); }

  bool is_automatic() const noexcept { return automatic_; }
  double value() const noexcept { return value_; }
  double resolve(const Matrix& h) const;

 private:
  Damping(bool automatic, double value) : automatic_(automatic), value_(value) {}
  bool automatic_;
  double value_;
};

/// (h + lambda I)^{-1} for symmetric h, symmetrized on output.
Matrix damped_inverse(const Matrix& h, double lambda);
Matrix damped_inverse(const Matrix& h, const Damping& damping);

}  // namespace prunecert
