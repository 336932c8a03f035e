#include "prunecert/policy.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

namespace prunecert {

namespace {

double checked_alpha(double alpha, std::string_view kind) {
  if (!(alpha > 0.0 && alpha <= 1.0)) {
    std::ostringstream os;
    os << kind << " alpha must lie in (0, 1], got " << alpha;
    throw std::invalid_argument(os.str());
  }
  return alpha;
}

Vector affine(const Layer& layer, std::span<const double> x) {
  Vector z = layer.weight * x;
  for (std::size_t i = 0; i < z.size(); ++i) z[i] += layer.bias[i];
  return z;
}

void check_input(const MlpPolicy& policy, std::span<const double> state) {
  if (state.size() != policy.input_dim()) {
    std::ostringstream os;
    os << "policy expects a state of dimension " << policy.input_dim() << ", got "
       << state.size();
    throw DimensionError(os.str());
  }
  if (!all_finite(state)) throw NonFiniteError("state contains non-finite entries");
}

}  // namespace

Activation Activation::leaky_relu(double alpha) {
  return Activation(ActivationKind::leaky_relu, checked_alpha(alpha, "leaky_relu"));
}
Activation Activation::prelu(double alpha) {
  return Activation(ActivationKind::prelu, checked_alpha(alpha, "prelu"));
}
Activation Activation::elu(double alpha) {
  return Activation(ActivationKind::elu, checked_alpha(alpha, "elu"));
}

bool Activation::has_alpha() const noexcept {
  return kind_ == ActivationKind::leaky_relu || kind_ == ActivationKind::prelu ||
         kind_ == ActivationKind::elu;
}

std::string_view Activation::name() const noexcept {
  switch (kind_) {
    case ActivationKind::relu: return "relu";
    case ActivationKind::leaky_relu: return "leaky_relu";
    case ActivationKind::prelu: return "prelu";
    case ActivationKind::elu: return "elu";
    case ActivationKind::identity: return "identity";
    case ActivationKind::gelu: return "gelu";
  }
  return "unknown";
}

double Activation::operator()(double x) const noexcept {
  switch (kind_) {
    case ActivationKind::relu: return x > 0.0 ? x : 0.0;
    case ActivationKind::leaky_relu:
    case ActivationKind::prelu: return x > 0.0 ? x : alpha_ * x;
    case ActivationKind::elu: return x > 0.0 ? x : alpha_ * std::expm1(x);
    case ActivationKind::identity: return x;
    case ActivationKind::gelu: return 0.5 * x * std::erfc(-x / std::numbers::sqrt2);
  }
  return x;
}

Activation make_activation(std::string_view name, double alpha) {
  if (name == "relu") return Activation::relu();
  if (name == "leaky_relu") return Activation::leaky_relu(alpha);
  if (name == "prelu") return Activation::prelu(alpha);
  if (name == "elu") return Activation::elu(alpha);
  if (name == "identity") return Activation::identity();
  if (name == "gelu") return Activation::gelu_uncertified();
  throw std::invalid_argument("unknown activation kind '" + std::string(name) + "'");
}

Vector apply_activation(const Activation& activation, std::span<const double> v) {
  Vector out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = activation(v[i]);
  return out;
}

MlpPolicy::MlpPolicy(std::vector<Layer> layers) : layers_(std::move(layers)) {
  if (layers_.empty()) throw DimensionError("a policy needs at least one layer");
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const Layer& l = layers_[i];
    std::ostringstream where;
    where << "layer " << i + 1 << ": ";
    if (l.weight.empty()) throw DimensionError(where.str() + "empty weight matrix");
    if (l.bias.size() != l.weight.rows()) {
      std::ostringstream os;
      os << where.str() << "bias has " << l.bias.size() << " entries but the weight has "
         << l.weight.rows() << " rows";
      throw DimensionError(os.str());
    }
    if (!l.weight.all_finite() || !all_finite(l.bias))
      throw NonFiniteError(where.str() + "non-finite parameter");
    if (i > 0 && l.weight.cols() != layers_[i - 1].weight.rows()) {
      std::ostringstream os;
      os << where.str() << "expects input dimension " << l.weight.cols()
         << " but layer " << i << " produces " << layers_[i - 1].weight.rows();
      throw DimensionError(os.str());
    }
  }
}

const Layer& MlpPolicy::layer(std::size_t k) const {
  if (k < 1 || k > layers_.size()) {
    std::ostringstream os;
    os << "layer index " << k << " outside 1.." << layers_.size();
    throw std::out_of_range(os.str());
  }
  return layers_[k - 1];
}

std::size_t MlpPolicy::weight_count() const noexcept {
  std::size_t n = 0;
  for (const auto& l : layers_) n += l.weight.size();
  return n;
}

bool MlpPolicy::certified() const noexcept {
  for (const auto& l : layers_)
    if (!l.activation.certified()) return false;
  return true;
}

void MlpPolicy::require_certified() const {
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    if (!layers_[i].activation.certified()) {
      std::ostringstream os;
      os << "layer " << i + 1 << " uses " << layers_[i].activation.name()
         << ", which is not 1-Lipschitz; no certificate can be issued";
      throw UncertifiedActivationError(os.str());
    }
  }
}

MlpPolicy MlpPolicy::with_weight(std::size_t k, Matrix weight) const {
  const Layer& old = layer(k);
  if (weight.rows() != old.weight.rows() || weight.cols() != old.weight.cols())
    throw DimensionError("replacement weight has a different shape");
  std::vector<Layer> copy = layers_;
  copy[k - 1].weight = std::move(weight);
  return MlpPolicy(std::move(copy));
}

Vector forward(const MlpPolicy& policy, std::span<const double> state) {
  check_input(policy, state);
  Vector x(state.begin(), state.end());
  for (const Layer& layer : policy.layers()) {
    x = apply_activation(layer.activation, affine(layer, x));
  }
  return x;
}

ForwardTrace forward_trace(const MlpPolicy& policy, std::span<const double> state) {
  check_input(policy, state);
  ForwardTrace trace;
  trace.input.assign(state.begin(), state.end());
  trace.post_activations.reserve(policy.depth());
  const Vector* x = &trace.input;
  for (const Layer& layer : policy.layers()) {
    Vector z = affine(layer, *x);
    trace.pre_activation_norms.push_back(norm2(z));
    trace.post_activations.push_back(apply_activation(layer.activation, z));
    trace.post_activation_norms.push_back(norm2(trace.post_activations.back()));
    x = &trace.post_activations.back();
  }
  return trace;
}

std::vector<double> weight_spectral_norms(const MlpPolicy& policy,
                                          const SpectralOptions& options) {
  std::vector<double> norms;
  norms.reserve(policy.depth());
  for (const Layer& layer : policy.layers()) norms.push_back(spectral_norm(layer.weight, options));
  return norms;
}

double lipschitz_upper(const MlpPolicy& policy, const SpectralOptions& options) {
  double product = 1.0;
  for (double n : weight_spectral_norms(policy, options)) product *= n;
  return product;
}

}  // namespace prunecert
