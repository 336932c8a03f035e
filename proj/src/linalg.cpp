#include "prunecert/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

namespace prunecert {

namespace {

std::string shape(const Matrix& m) {
  std::ostringstream os;
  os << m.rows() << "x" << m.cols();
  return os.str();
}

std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

Vector seeded_unit_vector(std::size_t n, std::uint64_t seed) {
  Vector v(n);
  std::uint64_t state = seed;
  for (auto& x : v) {
    // 53 random mantissa bits mapped to [-1, 1).
    x = static_cast<double>(splitmix64(state) >> 11) * 0x1.0p-52 - 1.0;
  }
  double n2 = norm2(v);
  if (n2 == 0.0) {
    v.assign(n, 1.0);
    n2 = std::sqrt(static_cast<double>(n));
  }
  for (auto& x : v) x /= n2;
  return v;
}

}  // namespace

Matrix::Matrix(std::size_t rows, std::size_t cols)
    : rows_(rows), cols_(cols), data_(rows * cols, 0.0) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> entries)
    : rows_(rows), cols_(cols), data_(std::move(entries)) {
  if (data_.size() != rows_ * cols_) {
    std::ostringstream os;
    os << "matrix " << rows_ << "x" << cols_ << " needs " << rows_ * cols_
       << " entries, got " << data_.size();
    throw DimensionError(os.str());
  }
  if (!all_finite()) throw NonFiniteError("matrix entries must be finite");
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Matrix Matrix::diagonal(std::span<const double> diag) {
  Matrix m(diag.size(), diag.size());
  for (std::size_t i = 0; i < diag.size(); ++i) m(i, i) = diag[i];
  if (!m.all_finite()) throw NonFiniteError("matrix entries must be finite");
  return m;
}

Matrix Matrix::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  std::vector<Vector> copy;
  copy.reserve(rows.size());
  for (const auto& r : rows) copy.emplace_back(r);
  return from_rows(copy);
}

Matrix Matrix::from_rows(const std::vector<Vector>& rows) {
  if (rows.empty()) return Matrix();
  const std::size_t cols = rows.front().size();
  std::vector<double> data;
  data.reserve(rows.size() * cols);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r].size() != cols) {
      std::ostringstream os;
      os << "ragged matrix: row " << r << " has " << rows[r].size()
         << " entries, expected " << cols;
      throw DimensionError(os.str());
    }
    data.insert(data.end(), rows[r].begin(), rows[r].end());
  }
  return Matrix(rows.size(), cols, std::move(data));
}

Vector Matrix::row_vector(std::size_t r) const {
  auto s = row(r);
  return Vector(s.begin(), s.end());
}

Vector Matrix::column_vector(std::size_t c) const {
  Vector v(rows_);
  for (std::size_t r = 0; r < rows_; ++r) v[r] = (*this)(r, c);
  return v;
}

void Matrix::set_row(std::size_t r, std::span<const double> values) {
  if (values.size() != cols_) throw DimensionError("set_row: length mismatch");
  std::copy(values.begin(), values.end(), data_.begin() + static_cast<std::ptrdiff_t>(r * cols_));
}

Matrix Matrix::transpose() const {
  Matrix t(cols_, rows_);
  for (std::size_t r = 0; r < rows_; ++r)
    for (std::size_t c = 0; c < cols_; ++c) t(c, r) = (*this)(r, c);
  return t;
}

bool Matrix::is_zero() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](double x) { return x == 0.0; });
}

bool Matrix::all_finite() const noexcept { return prunecert::all_finite(data_); }

double Matrix::max_abs() const noexcept {
  double m = 0.0;
  for (double x : data_) m = std::max(m, std::abs(x));
  return m;
}

Matrix operator+(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw DimensionError("cannot add " + shape(a) + " and " + shape(b));
  Matrix out = a;
  for (std::size_t r = 0; r < a.rows(); ++r)
    for (std::size_t c = 0; c < a.cols(); ++c) out(r, c) += b(r, c);
  return out;
}

Matrix operator-(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw DimensionError("cannot subtract " + shape(b) + " from " + shape(a));
  Matrix out = a;
  for (std::size_t r = 0; r < a.rows(); ++r)
    for (std::size_t c = 0; c < a.cols(); ++c) out(r, c) -= b(r, c);
  return out;
}

Matrix operator*(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows())
    throw DimensionError("cannot multiply " + shape(a) + " by " + shape(b));
  Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      for (std::size_t j = 0; j < b.cols(); ++j) out(i, j) += aik * b(k, j);
    }
  return out;
}

Matrix operator*(double s, const Matrix& m) {
  Matrix out = m;
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t c = 0; c < m.cols(); ++c) out(r, c) *= s;
  return out;
}

Vector operator*(const Matrix& m, std::span<const double> v) {
  if (m.cols() != v.size()) throw DimensionError("matrix-vector length mismatch");
  Vector out(m.rows(), 0.0);
  for (std::size_t r = 0; r < m.rows(); ++r) {
    auto row = m.row(r);
    out[r] = std::inner_product(row.begin(), row.end(), v.begin(), 0.0);
  }
  return out;
}

Vector transpose_times(const Matrix& m, std::span<const double> v) {
  if (m.rows() != v.size()) throw DimensionError("transpose-vector length mismatch");
  Vector out(m.cols(), 0.0);
  for (std::size_t r = 0; r < m.rows(); ++r) {
    const double vr = v[r];
    if (vr == 0.0) continue;
    auto row = m.row(r);
    for (std::size_t c = 0; c < m.cols(); ++c) out[c] += row[c] * vr;
  }
  return out;
}

double norm2(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

Vector subtract(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw DimensionError("vector length mismatch");
  Vector out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] - b[i];
  return out;
}

bool all_finite(std::span<const double> v) noexcept {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

double spectral_norm(const Matrix& m, const SpectralOptions& options) {
  if (m.empty()) throw DimensionError("spectral_norm of an empty matrix");
  if (!(options.tol > 0.0)) throw std::invalid_argument("spectral_norm: tol must be positive");
  if (m.is_zero()) return 0.0;

  Vector v = seeded_unit_vector(m.cols(), options.seed);
  double estimate = 0.0;
  double last_change = std::numeric_limits<double>::infinity();
  bool reseeded = false;

  for (int it = 1; it <= options.max_iter; ++it) {
    const Vector w = m * v;
    const double next = norm2(w);
    Vector z = transpose_times(m, w);
    const double zn = norm2(z);

    if (zn == 0.0) {
      // The start vector fell into the null space; restart on the heaviest column.
      if (reseeded) break;
      reseeded = true;
      std::size_t best = 0;
      double best_norm = -1.0;
      for (std::size_t c = 0; c < m.cols(); ++c) {
        const double cn = norm2(m.column_vector(c));
        if (cn > best_norm) best_norm = cn, best = c;
      }
      v.assign(m.cols(), 0.0);
      v[best] = 1.0;
      continue;
    }

    const double change = std::abs(next - estimate);
    estimate = next;
    for (std::size_t i = 0; i < z.size(); ++i) v[i] = z[i] / zn;

    // The Rayleigh estimate converges geometrically; extrapolate the
    // remaining error from the ratio of successive changes.
    double remaining = change;
    if (std::isfinite(last_change) && last_change > 0.0) {
      const double ratio = change / last_change;
      if (ratio < 1.0) remaining = std::max(change, change * ratio / (1.0 - ratio));
    }
    last_change = change;
    if (it > 1 && remaining <= options.tol * std::max(estimate, 1.0)) return estimate;
  }

  std::ostringstream os;
  os << "spectral_norm did not converge within " << options.max_iter
     << " iterations (last estimate " << estimate << "); retry with another seed";
  throw ConvergenceError(os.str(), estimate, v, options.max_iter);
}

double frobenius_norm(const Matrix& m) {
  if (m.empty()) throw DimensionError("frobenius_norm of an empty matrix");
  return norm2(m.data());
}

Matrix gram(const Matrix& x) {
  if (x.rows() == 0 || x.cols() == 0) throw DimensionError("gram needs a nonempty d x n batch");
  const std::size_t d = x.rows();
  Matrix h(d, d);
  for (std::size_t i = 0; i < d; ++i) {
    auto xi = x.row(i);
    for (std::size_t j = i; j < d; ++j) {
      auto xj = x.row(j);
      const double s = 2.0 * std::inner_product(xi.begin(), xi.end(), xj.begin(), 0.0);
      h(i, j) = s;
      h(j, i) = s;
    }
  }
  return h;
}

Damping Damping::fixed(double lambda) {
  if (!(lambda >= 0.0) || !std::isfinite(lambda))
    throw std::invalid_argument("damping must be finite and nonnegative");
  return Damping(false, lambda);
}

double Damping::resolve(const Matrix& h) const {
  if (!automatic_) return value_;
  if (h.rows() == 0) return 0.0;
  double trace = 0.0;
  for (std::size_t i = 0; i < h.rows(); ++i) trace += h(i, i);
  const double lambda = 1e-8 * trace / static_cast<double>(h.rows());
  return lambda > 0.0 ? lambda : 1e-8;
}

Matrix damped_inverse(const Matrix& h, double lambda) {
  if (h.rows() != h.cols()) throw DimensionError("damped_inverse needs a square matrix, got " + shape(h));
  if (!(lambda >= 0.0)) throw std::invalid_argument("damping must be nonnegative");
  const std::size_t n = h.rows();
  const double scale = std::max(h.max_abs(), 1e-300);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      if (std::abs(h(i, j) - h(j, i)) > 1e-10 * scale)
        throw std::invalid_argument("damped_inverse needs a symmetric matrix");

  // Gauss-Jordan with partial pivoting on [A | I].
  Matrix a = h;
  for (std::size_t i = 0; i < n; ++i) a(i, i) += lambda;
  Matrix inv = Matrix::identity(n);
  const double pivot_floor = 1e-14 * static_cast<double>(n) * std::max(a.max_abs(), 1e-300);

  for (std::size_t col = 0; col < n; ++col) {
    std::size_t pivot = col;
    for (std::size_t r = col + 1; r < n; ++r)
      if (std::abs(a(r, col)) > std::abs(a(pivot, col))) pivot = r;
    if (std::abs(a(pivot, col)) <= pivot_floor) {
      std::ostringstream os;
      os << "matrix is singular with damping " << lambda
         << " (pivot " << a(pivot, col) << " at column " << col << ")";
      if (lambda == 0.0) os << "; supply a damping lambda > 0";
      throw SingularMatrixError(os.str());
    }
    if (pivot != col) {
      for (std::size_t c = 0; c < n; ++c) {
        std::swap(a(pivot, c), a(col, c));
        std::swap(inv(pivot, c), inv(col, c));
      }
    }
    const double p = a(col, col);
    for (std::size_t c = 0; c < n; ++c) {
      a(col, c) /= p;
      inv(col, c) /= p;
    }
    for (std::size_t r = 0; r < n; ++r) {
      if (r == col) continue;
      const double f = a(r, col);
      if (f == 0.0) continue;
      for (std::size_t c = 0; c < n; ++c) {
        a(r, c) -= f * a(col, c);
        inv(r, c) -= f * inv(col, c);
      }
    }
  }

  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      const double s = 0.5 * (inv(i, j) + inv(j, i));
      inv(i, j) = s;
      inv(j, i) = s;
    }
  if (!inv.all_finite()) throw SingularMatrixError("inverse overflowed; increase damping");
  return inv;
}

Matrix damped_inverse(const Matrix& h, const Damping& damping) {
  return damped_inverse(h, damping.resolve(h));
}

}  // namespace prunecert
