// Test-only helpers: random fixtures and oracles that never touch the
// library's own numerical paths.
#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "prunecert/linalg.hpp"
#include "prunecert/policy.hpp"

namespace prunecert::testing {

inline Eigen::MatrixXd to_eigen(const Matrix& m) {
  Eigen::MatrixXd e(m.rows(), m.cols());
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t c = 0; c < m.cols(); ++c) e(r, c) = m(r, c);
  return e;
}

inline Eigen::VectorXd to_eigen(const Vector& v) {
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

/// Largest singular value from a full SVD.
inline double oracle_spectral_norm(const Matrix& m) {
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(to_eigen(m));
  return svd.singularValues()(0);
}

/// argmin_delta ||delta X||_F^2 subject to delta_q = -w_q, via the KKT system
/// of the equality-constrained least-squares problem. Returns row + delta.
inline Vector oracle_constrained_row(const Vector& row, std::size_t q, const Matrix& x) {
  const auto d = static_cast<Eigen::Index>(row.size());
  const Eigen::MatrixXd xe = to_eigen(x);
  Eigen::MatrixXd kkt = Eigen::MatrixXd::Zero(d + 1, d + 1);
  kkt.topLeftCorner(d, d) = 2.0 * xe * xe.transpose();
  kkt(static_cast<Eigen::Index>(q), d) = 1.0;
  kkt(d, static_cast<Eigen::Index>(q)) = 1.0;
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(d + 1);
  rhs(d) = -row[q];
  const Eigen::VectorXd sol = kkt.fullPivLu().solve(rhs);
  Vector out = row;
  for (Eigen::Index i = 0; i < d; ++i) out[static_cast<std::size_t>(i)] += sol(i);
  return out;
}

/// Forward pass written against Eigen, independent of prunecert::forward.
inline Eigen::VectorXd naive_forward(const MlpPolicy& p, const Vector& s,
                                     std::vector<Eigen::VectorXd>* trace = nullptr) {
  Eigen::VectorXd x = to_eigen(s);
  for (const Layer& l : p.layers()) {
    Eigen::VectorXd z = to_eigen(l.weight) * x + to_eigen(l.bias);
    for (Eigen::Index i = 0; i < z.size(); ++i) z(i) = l.activation(z(i));
    x = z;
    if (trace) trace->push_back(x);
  }
  return x;
}

inline Matrix random_matrix(std::mt19937_64& rng, std::size_t rows, std::size_t cols,
                            double stddev = 1.0) {
  std::normal_distribution<double> g(0.0, stddev);
  Matrix m(rows, cols);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) m(r, c) = g(rng);
  return m;
}

inline Vector random_vector(std::mt19937_64& rng, std::size_t n, double stddev = 1.0) {
  std::normal_distribution<double> g(0.0, stddev);
  Vector v(n);
  for (auto& x : v) x = g(rng);
  return v;
}

inline std::vector<Activation> certified_activations() {
  return {Activation::relu(),      Activation::leaky_relu(0.1), Activation::leaky_relu(1.0),
          Activation::prelu(0.25), Activation::elu(1.0),        Activation::elu(0.5),
          Activation::identity()};
}

inline Activation random_certified_activation(std::mt19937_64& rng) {
  const auto all = certified_activations();
  std::uniform_int_distribution<std::size_t> pick(0, all.size() - 1);
  return all[pick(rng)];
}

/// Weights ~ N(0, 1/fan_in), biases ~ N(0, bias_std^2).
inline MlpPolicy random_policy(std::mt19937_64& rng, const std::vector<std::size_t>& widths,
                               double bias_std = 0.1, bool mixed_activations = true) {
  std::vector<Layer> layers;
  for (std::size_t i = 1; i < widths.size(); ++i) {
    Layer l;
    l.weight = random_matrix(rng, widths[i], widths[i - 1],
                             1.0 / std::sqrt(static_cast<double>(widths[i - 1])));
    l.bias = random_vector(rng, widths[i], bias_std);
    l.activation = mixed_activations ? random_certified_activation(rng) : Activation::relu();
    layers.push_back(std::move(l));
  }
  return MlpPolicy(std::move(layers));
}

/// widths[0] = input dim, then L layer widths, each in [1, max_width].
inline std::vector<std::size_t> random_widths(std::mt19937_64& rng, std::size_t depth,
                                              std::size_t max_width) {
  std::uniform_int_distribution<std::size_t> w(1, max_width);
  std::vector<std::size_t> widths(depth + 1);
  for (auto& x : widths) x = w(rng);
  return widths;
}

}  // namespace prunecert::testing
