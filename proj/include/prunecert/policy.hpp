#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "prunecert/linalg.hpp"

namespace prunecert {

enum class ActivationKind { relu, leaky_relu, prelu, elu, identity, gelu };

/// Raised when an uncertified activation (GELU) would feed a bound.
class UncertifiedActivationError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Componentwise activation phi. Every kind except GELU satisfies phi(0) = 0
/// and |phi(a) - phi(b)| <= |a - b|, and is therefore l2 non-expansive.
///
/// GELU is kept for evaluation only: its slope peaks near 1.13, so it is not
/// 1-Lipschitz and the certifier rejects any policy that uses it.
class Activation {
 public:
  static Activation relu() { return Activation(ActivationKind::relu, 1.0); }
  static Activation leaky_relu(double alpha);
  static Activation prelu(double alpha);
  /// Standard ELU: x for x > 0, alpha (e^x - 1) otherwise.
  static Activation elu(double alpha);
  static Activation identity() { return Activation(ActivationKind::identity, 1.0); }
  static Activation gelu_uncertified() { return Activation(ActivationKind::gelu, 1.0); }

  ActivationKind kind() const noexcept { return kind_; }
  /// Slope/scale parameter; 1 for parameterless kinds.
  double alpha() const noexcept { return alpha_; }
  bool has_alpha() const noexcept;
  bool certified() const noexcept { return kind_ != ActivationKind::gelu; }
  std::string_view name() const noexcept;

  double operator()(double x) const noexcept;

  friend bool operator==(const Activation&, const Activation&) = default;

 private:
  Activation(ActivationKind kind, double alpha) : kind_(kind), alpha_(alpha) {}
  ActivationKind kind_;
  double alpha_;
};

/// Parses the file-format tag ("relu", "leaky_relu", ...). Alpha is ignored
/// for parameterless kinds.
Activation make_activation(std::string_view name, double alpha);

Vector apply_activation(const Activation& activation, std::span<const double> v);

struct Layer {
  Matrix weight;  // d_out x d_in
  Vector bias;    // d_out
  Activation activation = Activation::relu();

  std::size_t input_dim() const noexcept { return weight.cols(); }
  std::size_t output_dim() const noexcept { return weight.rows(); }
  friend bool operator==(const Layer&, const Layer&) = default;
};

/// L-layer perceptron x_l = sigma(W_l x_{l-1} + b_l) with the activation
/// applied after every layer, the last one included.
///
/// Layers are numbered 1..L in every public interface that takes a layer
/// index, matching the numbering used in certificates and plan files.
class MlpPolicy {
 public:
  explicit MlpPolicy(std::vector<Layer> layers);

  std::size_t depth() const noexcept { return layers_.size(); }
  std::size_t input_dim() const noexcept { return layers_.front().input_dim(); }
  std::size_t output_dim() const noexcept { return layers_.back().output_dim(); }
  std::span<const Layer> layers() const noexcept { return layers_; }
  /// 1-based.
  const Layer& layer(std::size_t k) const;
  std::size_t weight_count() const noexcept;
  bool certified() const noexcept;
  /// Throws UncertifiedActivationError naming the first offending layer.
  void require_certified() const;

  /// Copy with W_k replaced; shape must match.
  MlpPolicy with_weight(std::size_t k, Matrix weight) const;

  friend bool operator==(const MlpPolicy&, const MlpPolicy&) = default;

 private:
  std::vector<Layer> layers_;
};

struct ForwardTrace {
  Vector input;
  std::vector<Vector> post_activations;  // x_1 .. x_L
  std::vector<double> pre_activation_norms;
  std::vector<double> post_activation_norms;

  const Vector& output() const { return post_activations.back(); }
};

Vector forward(const MlpPolicy& policy, std::span<const double> state);
ForwardTrace forward_trace(const MlpPolicy& policy, std::span<const double> state);

/// Product of the layer spectral norms, an upper bound on the global l2
/// Lipschitz constant for certified activations.
double lipschitz_upper(const MlpPolicy& policy, const SpectralOptions& options = {});

/// Spectral norms of W_1..W_L (index 0 holds layer 1).
std::vector<double> weight_spectral_norms(const MlpPolicy& policy,
                                          const SpectralOptions& options = {});

}  // namespace prunecert
