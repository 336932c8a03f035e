#include "prunecert/certifier.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <sstream>
#include <thread>

#include "prunecert/random.hpp"

namespace prunecert {

namespace {

// Audit work is split into a fixed number of chunks so the reduction order,
// and therefore the reported numbers, do not depend on the thread count.
constexpr std::size_t kAuditChunks = 16;

double box_corner_norm(const Vector& lower, const Vector& upper) {
  double s = 0.0;
  for (std::size_t i = 0; i < lower.size(); ++i) {
    const double m = std::max(std::abs(lower[i]), std::abs(upper[i]));
    s += m * m;
  }
  return std::sqrt(s);
}

void check_box(const Vector& lower, const Vector& upper) {
  if (lower.empty() || lower.size() != upper.size())
    throw DimensionError("box bounds need matching nonempty lower/upper vectors");
  for (std::size_t i = 0; i < lower.size(); ++i)
    if (!(lower[i] <= upper[i]) || !std::isfinite(lower[i]) || !std::isfinite(upper[i]))
      throw std::invalid_argument("box bounds must be finite with lower <= upper");
}

void check_same_architecture(const MlpPolicy& a, const MlpPolicy& b) {
  if (a.depth() != b.depth()) {
    std::ostringstream os;
    os << "policies differ in depth: " << a.depth() << " vs " << b.depth() << " layers";
    throw DimensionError(os.str());
  }
  for (std::size_t k = 1; k <= a.depth(); ++k) {
    const Matrix& wa = a.layer(k).weight;
    const Matrix& wb = b.layer(k).weight;
    if (wa.rows() != wb.rows() || wa.cols() != wb.cols()) {
      std::ostringstream os;
      os << "layer " << k << " shape differs: " << wa.rows() << "x" << wa.cols() << " vs "
         << wb.rows() << "x" << wb.cols();
      throw DimensionError(os.str());
    }
  }
}

void check_plan(const PrunePlan& plan, std::size_t depth) {
  std::size_t last = 0;
  for (const auto& d : plan.layers) {
    if (d.layer < 1 || d.layer > depth) {
      std::ostringstream os;
      os << "plan refers to layer " << d.layer << " of a " << depth << "-layer policy";
      throw std::out_of_range(os.str());
    }
    if (d.layer <= last) throw std::invalid_argument("plan layers must be strictly ascending");
    last = d.layer;
  }
}

Vector draw_state(const StateSpace& space, Sampler sampler, std::mt19937_64& rng) {
  const std::size_t d = space.dim();
  Vector s(d);
  if (sampler == Sampler::interior && space.has_box()) {
    for (std::size_t i = 0; i < d; ++i) {
      std::uniform_real_distribution<double> u(space.lower()[i], space.upper()[i]);
      s[i] = u(rng);
    }
    return s;
  }
  std::normal_distribution<double> gauss(0.0, 1.0);
  double n = 0.0;
  while (n == 0.0) {
    for (auto& x : s) x = gauss(rng);
    n = norm2(s);
  }
  double r = space.radius();
  if (sampler == Sampler::interior) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    r *= std::pow(u(rng), 1.0 / static_cast<double>(d));
  }
  for (auto& x : s) x *= r / n;
  // Rounding can push a sphere sample a few ulps past R.
  const double sn = norm2(s);
  if (sn > space.radius() && sn > 0.0)
    for (auto& x : s) x *= space.radius() / sn;
  return s;
}

struct AuditAccumulator {
  std::size_t samples = 0;
  double max_dev = 0.0;
  double sum_dev = 0.0;
  double max_state_bound = 0.0;
  std::size_t violations = 0;

  void add(double dev, double bound) {
    ++samples;
    max_dev = std::max(max_dev, dev);
    sum_dev += dev;
    max_state_bound = std::max(max_state_bound, bound);
    if (dev > bound + kAuditSlack) ++violations;
  }
  void merge(const AuditAccumulator& o) {
    samples += o.samples;
    max_dev = std::max(max_dev, o.max_dev);
    sum_dev += o.sum_dev;
    max_state_bound = std::max(max_state_bound, o.max_state_bound);
    violations += o.violations;
  }
};

void audit_one(const MlpPolicy& original, const MlpPolicy& pruned, const BoundConstants& constants,
               const PrunePlan& plan, const StateSpace& space, std::span<const double> s,
               AuditAccumulator& acc) {
  if (!space.contains(s)) throw SamplerError("audit state lies outside the certified state space");
  const Vector a = forward(original, s);
  const Vector b = forward(pruned, s);
  acc.add(norm2(subtract(a, b)), state_bound(constants, plan, s));
}

AuditSummary summarize(const AuditAccumulator& acc, double budget, std::uint64_t seed) {
  AuditSummary out;
  out.samples = acc.samples;
  out.max_dev = acc.max_dev;
  out.mean_dev = acc.samples ? acc.sum_dev / static_cast<double>(acc.samples) : 0.0;
  out.max_state_bound = acc.max_state_bound;
  out.budget = budget;
  out.margin = budget - acc.max_dev;
  if (budget > 0.0) out.tightness = acc.max_dev / budget;
  else out.tightness = acc.max_dev > 0.0 ? std::numeric_limits<double>::infinity() : 0.0;
  out.violations = acc.violations;
  out.seed = seed;
  out.holds = acc.max_dev <= budget + kAuditSlack * std::max(budget, 1.0);
  return out;
}

void prepare_audit(const MlpPolicy& original, const MlpPolicy& pruned, const PrunePlan& plan,
                   const StateSpace& space) {
  original.require_certified();
  check_same_architecture(original, pruned);
  check_plan(plan, original.depth());
  if (space.dim() != original.input_dim())
    throw DimensionError("state space dimension does not match the policy input");
}

}  // namespace

std::string_view to_string(BoundMode mode) noexcept {
  return mode == BoundMode::validation ? "validation" : "radius";
}

StateSpace StateSpace::ball(std::size_t dim, double radius) {
  if (dim == 0) throw DimensionError("state space needs a positive dimension");
  if (!(radius >= 0.0) || !std::isfinite(radius))
    throw std::invalid_argument("state radius must be finite and nonnegative");
  StateSpace s;
  s.dim_ = dim;
  s.radius_ = radius;
  return s;
}

StateSpace StateSpace::box(Vector lower, Vector upper) {
  check_box(lower, upper);
  StateSpace s = ball(lower.size(), box_corner_norm(lower, upper));
  s.lower_ = std::move(lower);
  s.upper_ = std::move(upper);
  return s;
}

StateSpace StateSpace::box_in_ball(Vector lower, Vector upper, double radius) {
  check_box(lower, upper);
  const double corner = box_corner_norm(lower, upper);
  if (corner > radius + 1e-12) {
    std::ostringstream os;
    os << "box corner norm " << corner << " exceeds the state radius " << radius;
    throw std::invalid_argument(os.str());
  }
  StateSpace s = ball(lower.size(), radius);
  s.lower_ = std::move(lower);
  s.upper_ = std::move(upper);
  return s;
}

StateSpace StateSpace::from_states(std::span<const Vector> states) {
  if (states.empty()) throw std::invalid_argument("validation set is empty");
  double r = 0.0;
  for (const auto& s : states) {
    if (s.size() != states.front().size()) throw DimensionError("validation states differ in dimension");
    r = std::max(r, norm2(s));
  }
  StateSpace out = ball(states.front().size(), r);
  out.mode_ = BoundMode::validation;
  return out;
}

bool StateSpace::in_ball(std::span<const double> s) const {
  return s.size() == dim_ && norm2(s) <= radius_ * (1.0 + 1e-12);
}

bool StateSpace::contains(std::span<const double> s) const {
  if (!in_ball(s)) return false;
  if (has_box())
    for (std::size_t i = 0; i < dim_; ++i)
      if (s[i] < lower_[i] || s[i] > upper_[i]) return false;
  return true;
}

BoundConstants::BoundConstants(const MlpPolicy& policy, const SpectralOptions& spectral) {
  policy.require_certified();
  weight_norms_ = weight_spectral_norms(policy, spectral);
  bias_norms_.reserve(policy.depth());
  for (const Layer& l : policy.layers()) bias_norms_.push_back(norm2(l.bias));
}

BoundConstants::BoundConstants(std::vector<double> weight_norms, std::vector<double> bias_norms)
    : weight_norms_(std::move(weight_norms)), bias_norms_(std::move(bias_norms)) {
  if (weight_norms_.empty() || weight_norms_.size() != bias_norms_.size())
    throw DimensionError("need one weight norm and one bias norm per layer");
  for (double x : weight_norms_)
    if (!(x >= 0.0)) throw std::invalid_argument("norms must be nonnegative");
  for (double x : bias_norms_)
    if (!(x >= 0.0)) throw std::invalid_argument("norms must be nonnegative");
}

double BoundConstants::at_norm(std::size_t k, double state_norm) const {
  const std::size_t L = depth();
  if (k < 1 || k > L) {
    std::ostringstream os;
    os << "layer index " << k << " outside 1.." << L;
    throw std::out_of_range(os.str());
  }
  double all_but_k = 1.0;
  for (std::size_t l = 1; l <= L; ++l)
    if (l != k) all_but_k *= weight_norms_[l - 1];

  double bias_term = 0.0;
  for (std::size_t i = 1; i < k; ++i) {
    double downstream = 1.0;
    for (std::size_t l = i + 1; l <= L; ++l)
      if (l != k) downstream *= weight_norms_[l - 1];
    bias_term += downstream * bias_norms_[i - 1];
  }
  return state_norm * all_but_k + bias_term;
}

double BoundConstants::at_state(std::size_t k, std::span<const double> state) const {
  return at_norm(k, norm2(state));
}

double bound_constant_state(const MlpPolicy& policy, std::size_t k, std::span<const double> state) {
  if (state.size() != policy.input_dim()) throw DimensionError("state dimension mismatch");
  return BoundConstants(policy).at_state(k, state);
}

double bound_constant_max(const MlpPolicy& policy, std::size_t k, const StateSpace& space) {
  return BoundConstants(policy).at_norm(k, space.radius());
}

double single_layer_bound(const MlpPolicy& policy, std::size_t k, double delta_norm,
                          std::span<const double> state) {
  if (!(delta_norm >= 0.0)) throw std::invalid_argument("delta norm must be nonnegative");
  return bound_constant_state(policy, k, state) * delta_norm;
}

Certificate multi_layer_budget(const MlpPolicy& policy, const PrunePlan& plan,
                               const StateSpace& space) {
  check_plan(plan, policy.depth());
  return multi_layer_budget(BoundConstants(policy), plan, space);
}

Certificate multi_layer_budget(const BoundConstants& constants, const PrunePlan& plan,
                               const StateSpace& space) {
  check_plan(plan, constants.depth());
  Certificate cert;
  cert.radius = space.radius();
  cert.mode = space.mode();
  for (const auto& d : plan.layers) {
    LayerBound lb;
    lb.k = d.layer;
    lb.c_max = constants.at_norm(d.layer, space.radius());
    lb.delta_spectral = d.delta_spectral_norm;
    lb.contribution = lb.c_max * lb.delta_spectral;
    cert.budget += lb.contribution;
    cert.layers.push_back(lb);
  }
  return cert;
}

double state_bound(const BoundConstants& constants, const PrunePlan& plan,
                   std::span<const double> state) {
  const double r = norm2(state);
  double total = 0.0;
  for (const auto& d : plan.layers) total += constants.at_norm(d.layer, r) * d.delta_spectral_norm;
  return total;
}

double state_bound(const BoundConstants& constants, const Certificate& cert,
                   std::span<const double> state) {
  const double r = norm2(state);
  double total = 0.0;
  for (const auto& l : cert.layers) total += constants.at_norm(l.k, r) * l.delta_spectral;
  return total;
}

Allocation Allocation::proportional(std::vector<double> weights) {
  if (weights.empty()) throw std::invalid_argument("proportional allocation needs weights");
  for (double w : weights)
    if (!(w > 0.0) || !std::isfinite(w))
      throw std::invalid_argument("allocation weights must be finite and positive");
  return Allocation(std::move(weights));
}

std::vector<double> MagnitudeCaps::by_layer(std::size_t depth) const {
  std::vector<double> out(depth + 1, 0.0);
  for (std::size_t i = 0; i < layers.size(); ++i) out.at(layers[i]) = caps[i];
  return out;
}

MagnitudeCaps admissible_magnitude(const MlpPolicy& policy, std::span<const std::size_t> layers,
                                   double epsilon, const StateSpace& space,
                                   const Allocation& allocation) {
  if (!(epsilon >= 0.0) || !std::isfinite(epsilon))
    throw std::invalid_argument("control-error budget epsilon must be finite and >= 0");
  const std::set<std::size_t> selected(layers.begin(), layers.end());
  if (selected.size() != layers.size()) throw std::invalid_argument("duplicate layer in S");
  if (!allocation.is_uniform() && allocation.weights().size() != layers.size())
    throw DimensionError("need one allocation weight per selected layer");

  const BoundConstants constants(policy);
  MagnitudeCaps out;
  std::vector<double> share;
  for (std::size_t k : selected) {
    out.layers.push_back(k);
    out.c_max.push_back(constants.at_norm(k, space.radius()));
    if (allocation.is_uniform()) {
      share.push_back(1.0);
    } else {
      const auto pos = static_cast<std::size_t>(std::find(layers.begin(), layers.end(), k) - layers.begin());
      share.push_back(allocation.weights()[pos]);
    }
  }

  // Layers with C_k,max = 0 cannot affect the output; the budget is split
  // among the rest.
  double total_share = 0.0;
  for (std::size_t i = 0; i < out.layers.size(); ++i)
    if (out.c_max[i] > 0.0) total_share += share[i];

  for (std::size_t i = 0; i < out.layers.size(); ++i) {
    if (out.c_max[i] == 0.0) {
      out.caps.push_back(std::numeric_limits<double>::infinity());
      continue;
    }
    const double contribution = epsilon * share[i] / total_share;
    out.caps.push_back(contribution / out.c_max[i]);
  }
  return out;
}

std::vector<Vector> sample_states(const StateSpace& space, std::size_t count, std::uint64_t seed,
                                  Sampler sampler) {
  auto rng = make_rng(seed);
  std::vector<Vector> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(draw_state(space, sampler, rng));
  return out;
}

AuditSummary audit_bound(const MlpPolicy& original, const MlpPolicy& pruned, const PrunePlan& plan,
                         const StateSpace& space, const AuditOptions& options) {
  if (options.samples == 0) throw std::invalid_argument("audit needs at least one sample");
  prepare_audit(original, pruned, plan, space);
  const BoundConstants constants(original);
  const double budget = multi_layer_budget(constants, plan, space).budget;

  const std::size_t chunks = std::min(kAuditChunks, options.samples);
  std::vector<AuditAccumulator> partial(chunks);
  std::vector<std::exception_ptr> errors(chunks);
  auto work = [&](std::size_t c) {
    try {
      auto rng = make_rng(options.seed, c);
      const std::size_t begin = options.samples * c / chunks;
      const std::size_t end = options.samples * (c + 1) / chunks;
      for (std::size_t i = begin; i < end; ++i) {
        const Vector s = draw_state(space, options.sampler, rng);
        audit_one(original, pruned, constants, plan, space, s, partial[c]);
      }
    } catch (...) {
      errors[c] = std::current_exception();
    }
  };

  const std::size_t threads =
      std::min<std::size_t>(chunks, std::max(1u, std::thread::hardware_concurrency()));
  if (threads <= 1) {
    for (std::size_t c = 0; c < chunks; ++c) work(c);
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < threads; ++t)
      pool.emplace_back([&, t] {
        for (std::size_t c = t; c < chunks; c += threads) work(c);
      });
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);

  AuditAccumulator total;
  for (const auto& p : partial) total.merge(p);
  return summarize(total, budget, options.seed);
}

AuditSummary audit_states(const MlpPolicy& original, const MlpPolicy& pruned,
                          const PrunePlan& plan, const StateSpace& space,
                          std::span<const Vector> states) {
  if (states.empty()) throw std::invalid_argument("audit needs at least one state");
  prepare_audit(original, pruned, plan, space);
  const BoundConstants constants(original);
  const double budget = multi_layer_budget(constants, plan, space).budget;
  AuditAccumulator acc;
  for (const auto& s : states) audit_one(original, pruned, constants, plan, space, s, acc);
  return summarize(acc, budget, 0);
}

Certificate certify(const MlpPolicy& original, const MlpPolicy& pruned, const PrunePlan& plan,
                    const StateSpace& space, const AuditOptions& options) {
  Certificate cert = multi_layer_budget(original, plan, space);
  cert.audit = audit_bound(original, pruned, plan, space, options);
  return cert;
}

PrunePlan plan_from_policies(const MlpPolicy& original, const MlpPolicy& pruned,
                             const SpectralOptions& spectral) {
  check_same_architecture(original, pruned);
  PrunePlan plan;
  for (std::size_t k = 1; k <= original.depth(); ++k) {
    const Layer& a = original.layer(k);
    const Layer& b = pruned.layer(k);
    if (a.bias != b.bias) {
      std::ostringstream os;
      os << "layer " << k << " biases differ; certificates cover weight perturbations only";
      throw std::invalid_argument(os.str());
    }
    if (!(a.activation == b.activation)) {
      std::ostringstream os;
      os << "layer " << k << " activations differ";
      throw std::invalid_argument(os.str());
    }
    if (a.weight == b.weight) continue;
    LayerDelta d;
    d.layer = k;
    d.delta = b.weight - a.weight;
    for (std::size_t r = 0; r < a.weight.rows(); ++r)
      for (std::size_t c = 0; c < a.weight.cols(); ++c)
        if (b.weight(r, c) == 0.0 && a.weight(r, c) != 0.0) d.mask.emplace_back(r, c);
    d.delta_spectral_norm = spectral_norm(d.delta, spectral);
    plan.layers.push_back(std::move(d));
  }
  return plan;
}

}  // namespace prunecert
