#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "prunecert/linalg.hpp"
#include "prunecert/policy.hpp"
#include "prunecert/pruner.hpp"

namespace prunecert {

/// Absolute slack the audit grants for floating-point rounding.
inline constexpr double kAuditSlack = 1e-9;

/// How the state radius R was obtained.
enum class BoundMode {
  radius,      // supplied radius (or box corner norm)
  validation,  // max ||s||_2 over a finite validation set
};

std::string_view to_string(BoundMode mode) noexcept;

/// The certified state set X, summarized by R = sup ||s||_2 and an optional
/// coordinate box that samplers draw from. The box must fit inside the ball.
class StateSpace {
 public:
  static StateSpace ball(std::size_t dim, double radius);
  /// Box whose corner norm defines the radius.
  static StateSpace box(Vector lower, Vector upper);
  static StateSpace box_in_ball(Vector lower, Vector upper, double radius);
  /// Radius = max ||s||_2 over `states`.
  static StateSpace from_states(std::span<const Vector> states);

  std::size_t dim() const noexcept { return dim_; }
  double radius() const noexcept { return radius_; }
  BoundMode mode() const noexcept { return mode_; }
  bool has_box() const noexcept { return !lower_.empty(); }
  const Vector& lower() const noexcept { return lower_; }
  const Vector& upper() const noexcept { return upper_; }

  bool in_ball(std::span<const double> s) const;
  bool contains(std::span<const double> s) const;

 private:
  StateSpace() = default;
  std::size_t dim_ = 0;
  double radius_ = 0.0;
  BoundMode mode_ = BoundMode::radius;
  Vector lower_;
  Vector upper_;
};

/// Caches the unpruned spectral norms ||W_l||_2 and bias norms ||b_l||_2 and
/// evaluates
///
///   C_k(r) = r prod_{l != k} ||W_l|| + sum_{i<k} (prod_{l=i+1..L, l != k} ||W_l||) ||b_i||
///
/// with empty products equal to 1 and empty sums to 0. C_k is affine and
/// nondecreasing in r = ||s||_2, so C_k,max is C_k(R).
class BoundConstants {
 public:
  explicit BoundConstants(const MlpPolicy& policy, const SpectralOptions& spectral = {});
  BoundConstants(std::vector<double> weight_norms, std::vector<double> bias_norms);

  std::size_t depth() const noexcept { return weight_norms_.size(); }
  const std::vector<double>& weight_norms() const noexcept { return weight_norms_; }
  const std::vector<double>& bias_norms() const noexcept { return bias_norms_; }

  /// 1-based k.
  double at_norm(std::size_t k, double state_norm) const;
  double at_state(std::size_t k, std::span<const double> state) const;

 private:
  std::vector<double> weight_norms_;
  std::vector<double> bias_norms_;
};

double bound_constant_state(const MlpPolicy& policy, std::size_t k, std::span<const double> state);
double bound_constant_max(const MlpPolicy& policy, std::size_t k, const StateSpace& space);
/// C_k(s) * ||delta W_k||_2.
double single_layer_bound(const MlpPolicy& policy, std::size_t k, double delta_norm,
                          std::span<const double> state);

struct LayerBound {
  std::size_t k = 0;
  double c_max = 0.0;
  double delta_spectral = 0.0;
  double contribution = 0.0;
};

struct AuditSummary {
  std::size_t samples = 0;
  double max_dev = 0.0;
  double mean_dev = 0.0;
  double max_state_bound = 0.0;
  double budget = 0.0;
  double margin = 0.0;     // budget - max_dev
  double tightness = 0.0;  // max_dev / budget (0 when both vanish)
  std::size_t violations = 0;
  std::uint64_t seed = 0;
  bool holds = true;
};

struct Certificate {
  std::vector<LayerBound> layers;  // ascending k
  double budget = 0.0;
  double radius = 0.0;
  BoundMode mode = BoundMode::radius;
  std::optional<AuditSummary> audit;

  bool holds() const noexcept { return !audit || audit->holds; }
  bool clean() const noexcept { return holds() && (!audit || audit->violations == 0); }
};

/// B_pi = sum_k C_k,max ||delta W_k||_2, summed in ascending k. Constants
/// come from the unpruned `policy`.
Certificate multi_layer_budget(const MlpPolicy& policy, const PrunePlan& plan,
                               const StateSpace& space);
Certificate multi_layer_budget(const BoundConstants& constants, const PrunePlan& plan,
                               const StateSpace& space);

/// Per-state bound sum_k C_k(s) ||delta W_k||_2.
double state_bound(const BoundConstants& constants, const PrunePlan& plan,
                   std::span<const double> state);
double state_bound(const BoundConstants& constants, const Certificate& cert,
                   std::span<const double> state);

class Allocation {
 public:
  static Allocation uniform() { return Allocation({}); }
  /// Contributions proportional to `weights` (one per layer in S, all > 0).
  static Allocation proportional(std::vector<double> weights);

  bool is_uniform() const noexcept { return weights_.empty(); }
  const std::vector<double>& weights() const noexcept { return weights_; }

 private:
  explicit Allocation(std::vector<double> w) : weights_(std::move(w)) {}
  std::vector<double> weights_;
};

struct MagnitudeCaps {
  std::vector<std::size_t> layers;  // ascending k
  std::vector<double> c_max;
  std::vector<double> caps;  // +inf where C_k,max == 0

  /// Caps indexed by layer (size depth + 1, index 0 unused); layers outside
  /// S get cap 0.
  std::vector<double> by_layer(std::size_t depth) const;
};

/// Largest per-layer ||delta W_k||_2 such that sum_k C_k,max m_k = epsilon
/// under the chosen split of the budget.
MagnitudeCaps admissible_magnitude(const MlpPolicy& policy, std::span<const std::size_t> layers,
                                   double epsilon, const StateSpace& space,
                                   const Allocation& allocation = Allocation::uniform());

enum class Sampler {
  interior,  // uniform in the box when present, else uniform in the ball
  sphere,    // uniform on the sphere of radius R
};

struct AuditOptions {
  std::size_t samples = 10'000;
  std::uint64_t seed = 0;
  Sampler sampler = Sampler::interior;
};

/// Raised when a sampler produces a state outside the certified set.
class SamplerError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Monte-Carlo audit: draws states from `space` and compares the measured
/// deviation against the per-state bound and the global budget.
AuditSummary audit_bound(const MlpPolicy& original, const MlpPolicy& pruned, const PrunePlan& plan,
                         const StateSpace& space, const AuditOptions& options);

/// Same audit on an explicit state list (validation-set mode).
AuditSummary audit_states(const MlpPolicy& original, const MlpPolicy& pruned,
                          const PrunePlan& plan, const StateSpace& space,
                          std::span<const Vector> states);

/// Budget plus random audit in one call.
Certificate certify(const MlpPolicy& original, const MlpPolicy& pruned, const PrunePlan& plan,
                    const StateSpace& space, const AuditOptions& options);

/// Recovers a plan from two policies with the same architecture. Throws
/// DimensionError naming the first differing layer shape, or
/// std::invalid_argument if biases or activations differ.
PrunePlan plan_from_policies(const MlpPolicy& original, const MlpPolicy& pruned,
                             const SpectralOptions& spectral = {});

/// Draws `count` states from `space` with the given generator seed.
std::vector<Vector> sample_states(const StateSpace& space, std::size_t count, std::uint64_t seed,
                                  Sampler sampler = Sampler::interior);

}  // namespace prunecert
