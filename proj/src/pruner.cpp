#include "prunecert/pruner.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <tuple>

namespace prunecert {

namespace {

bool rank_before(const SaliencyEntry& a, const SaliencyEntry& b) {
  return std::tie(a.saliency, a.layer, a.row, a.col) < std::tie(b.saliency, b.layer, b.row, b.col);
}

// Removal state for one layer. Rows with compensation carry their own
// downdated inverse so previously zeroed coordinates stay fixed.
class LayerSurgery {
 public:
  LayerSurgery(const Matrix& weight, std::optional<Matrix> h_inv)
      : original_(weight), current_(weight), h_inv_(std::move(h_inv)) {}

  struct Snapshot {
    std::size_t row;
    Vector values;
    std::optional<Matrix> row_inverse;
    std::size_t mask_size;
  };

  Snapshot snapshot(std::size_t row) const {
    Snapshot s{row, current_.row_vector(row), std::nullopt, mask_.size()};
    if (auto it = row_inverse_.find(row); it != row_inverse_.end()) s.row_inverse = it->second;
    return s;
  }

  void restore(const Snapshot& s) {
    current_.set_row(s.row, s.values);
    if (s.row_inverse) row_inverse_.insert_or_assign(s.row, *s.row_inverse);
    else row_inverse_.erase(s.row);
    mask_.resize(s.mask_size);
    saliencies_.resize(s.mask_size);
  }

  void remove(const SaliencyEntry& e) {
    if (e.row >= current_.rows() || e.col >= current_.cols())
      throw std::out_of_range("saliency entry addresses a weight outside its layer");
    mask_.emplace_back(e.row, e.col);
    saliencies_.push_back(e.saliency);
    if (!h_inv_) {
      current_(e.row, e.col) = 0.0;
      return;
    }
    auto it = row_inverse_.find(e.row);
    if (it == row_inverse_.end()) it = row_inverse_.emplace(e.row, *h_inv_).first;
    Matrix& inv = it->second;
    const std::size_t q = e.col;
    const double iqq = inv(q, q);
    if (iqq <= 0.0) {
      // Already removed in this row; the downdated inverse has a zero there.
      current_(e.row, q) = 0.0;
      return;
    }
    Vector updated = obs_compensate(current_.row(e.row), q, inv);
    current_.set_row(e.row, updated);
    // Inverse of H restricted to the surviving coordinates (zero row/col at q).
    const Vector col = inv.column_vector(q);
    for (std::size_t i = 0; i < inv.rows(); ++i)
      for (std::size_t j = 0; j < inv.cols(); ++j) inv(i, j) -= col[i] * col[j] / iqq;
    for (std::size_t i = 0; i < inv.rows(); ++i) {
      inv(i, q) = 0.0;
      inv(q, i) = 0.0;
    }
  }

  Matrix delta() const {
    Matrix d = current_ - original_;
    for (const auto& [r, c] : mask_) d(r, c) = -original_(r, c);
    return d;
  }

  LayerDelta finish(std::size_t layer, const SpectralOptions& spectral) const {
    LayerDelta out;
    out.layer = layer;
    out.mask = mask_;
    out.saliencies = saliencies_;
    out.delta = delta();
    out.delta_spectral_norm = spectral_norm(out.delta, spectral);
    return out;
  }

 private:
  Matrix original_;
  Matrix current_;
  std::optional<Matrix> h_inv_;
  std::map<std::size_t, Matrix> row_inverse_;
  std::vector<std::pair<std::size_t, std::size_t>> mask_;
  std::vector<double> saliencies_;
};

std::map<std::size_t, std::vector<SaliencyEntry>> group_by_layer(
    const MlpPolicy& policy, std::span<const SaliencyEntry> entries, std::size_t count) {
  std::map<std::size_t, std::vector<SaliencyEntry>> groups;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto& e = entries[i];
    (void)policy.layer(e.layer);
    auto& g = groups[e.layer];
    if (i < count) g.push_back(e);
  }
  return groups;
}

// Hessian inverse for layer k, taken from the calibration batch or, when
// refreshing, from activations of the partially pruned policy.
Matrix layer_inverse(const MlpPolicy& current, std::size_t k, const CalibrationBatch& calib,
                     const ApplyOptions& options) {
  if (!options.refresh_hessian || k == 1)
    return damped_inverse(gram(calib.input(k)), options.damping);
  const Matrix& states = calib.input(1);
  std::vector<Vector> columns;
  columns.reserve(states.cols());
  for (std::size_t j = 0; j < states.cols(); ++j) columns.push_back(states.column_vector(j));
  const CalibrationBatch fresh = collect_calibration(current, columns);
  return damped_inverse(gram(fresh.input(k)), options.damping);
}

template <typename RemoveLayer>
PruneResult run_layers(const MlpPolicy& policy,
                       const std::map<std::size_t, std::vector<SaliencyEntry>>& groups,
                       const CalibrationBatch& calib, const ApplyOptions& options,
                       RemoveLayer&& remove_layer) {
  if (options.compensate && calib.inputs.size() != policy.depth())
    throw DimensionError("compensation needs a calibration batch for every layer");
  PrunePlan plan;
  plan.compensated = options.compensate;
  MlpPolicy current = policy;
  for (const auto& [k, removals] : groups) {
    std::optional<Matrix> h_inv;
    if (options.compensate && !removals.empty()) h_inv = layer_inverse(current, k, calib, options);
    LayerSurgery surgery(policy.layer(k).weight, std::move(h_inv));
    remove_layer(k, removals, surgery);
    plan.layers.push_back(surgery.finish(k, options.spectral));
    if (options.refresh_hessian) current = apply_deltas(policy, plan);
  }
  MlpPolicy pruned = apply_deltas(policy, plan);
  return PruneResult{std::move(pruned), std::move(plan)};
}

}  // namespace

const Matrix& CalibrationBatch::input(std::size_t k) const {
  if (k < 1 || k > inputs.size()) {
    std::ostringstream os;
    os << "calibration has no input for layer " << k;
    throw std::out_of_range(os.str());
  }
  return inputs[k - 1];
}

CalibrationBatch collect_calibration(const MlpPolicy& policy, std::span<const Vector> states) {
  if (states.empty()) throw std::invalid_argument("calibration needs at least one state");
  const std::size_t n = states.size();
  CalibrationBatch batch;
  batch.inputs.emplace_back(policy.input_dim(), n);
  for (std::size_t k = 1; k < policy.depth(); ++k)
    batch.inputs.emplace_back(policy.layer(k).output_dim(), n);

  for (std::size_t j = 0; j < n; ++j) {
    const ForwardTrace trace = forward_trace(policy, states[j]);
    for (std::size_t i = 0; i < trace.input.size(); ++i) batch.inputs[0](i, j) = trace.input[i];
    for (std::size_t k = 1; k < policy.depth(); ++k) {
      const Vector& x = trace.post_activations[k - 1];
      for (std::size_t i = 0; i < x.size(); ++i) batch.inputs[k](i, j) = x[i];
    }
  }
  return batch;
}

double activation_loss(const Matrix& w, const Matrix& w_hat, const Matrix& x) {
  if (w.rows() != w_hat.rows() || w.cols() != w_hat.cols() || w.cols() != x.rows())
    throw DimensionError("activation_loss: W, W_hat and X do not conform");
  const Matrix diff = w * x - w_hat * x;
  const double f = frobenius_norm(diff);
  return f * f;
}

double obd_saliency(double w_q, double h_inv_qq) {
  if (!(h_inv_qq > 0.0)) {
    std::ostringstream os;
    os << "inverse Hessian diagonal must be positive, got " << h_inv_qq;
    throw std::domain_error(os.str());
  }
  return 0.5 * w_q * w_q / h_inv_qq;
}

std::vector<SaliencyEntry> rank_weights(const MlpPolicy& policy, const CalibrationBatch& calib,
                                        std::span<const std::size_t> layers,
                                        const RankOptions& options) {
  if (layers.empty()) throw std::invalid_argument("rank_weights needs at least one layer");
  const std::set<std::size_t> selected(layers.begin(), layers.end());
  std::vector<SaliencyEntry> entries;
  for (std::size_t k : selected) {
    const Matrix& w = policy.layer(k).weight;
    const Matrix h = gram(calib.input(k));
    if (h.rows() != w.cols()) throw DimensionError("calibration input does not match layer width");

    Vector inv_diag(h.rows());
    if (options.mode == SaliencyMode::full_inverse) {
      const Matrix inv = damped_inverse(h, options.damping);
      for (std::size_t c = 0; c < h.rows(); ++c) inv_diag[c] = inv(c, c);
    } else {
      const double lambda = options.damping.resolve(h);
      for (std::size_t c = 0; c < h.rows(); ++c) {
        const double hc = h(c, c) + lambda;
        if (!(hc > 0.0))
          throw SingularMatrixError("zero Hessian diagonal; supply a damping lambda > 0");
        inv_diag[c] = 1.0 / hc;
      }
    }

    for (std::size_t r = 0; r < w.rows(); ++r)
      for (std::size_t c = 0; c < w.cols(); ++c)
        entries.push_back({k, r, c, w(r, c), obd_saliency(w(r, c), inv_diag[c])});
  }
  std::stable_sort(entries.begin(), entries.end(), rank_before);
  return entries;
}

Vector obs_compensate(std::span<const double> row, std::size_t q, const Matrix& h_inv) {
  if (h_inv.rows() != h_inv.cols() || h_inv.rows() != row.size())
    throw DimensionError("obs_compensate: inverse Hessian does not match the row");
  if (q >= row.size()) throw std::out_of_range("obs_compensate: column out of range");
  const double iqq = h_inv(q, q);
  if (!(iqq > 0.0)) {
    std::ostringstream os;
    os << "inverse Hessian diagonal must be positive, got " << iqq;
    throw std::domain_error(os.str());
  }
  const double scale = row[q] / iqq;
  Vector out(row.begin(), row.end());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= scale * h_inv(i, q);
  out[q] = 0.0;
  return out;
}

const LayerDelta* PrunePlan::find(std::size_t layer) const noexcept {
  for (const auto& l : layers)
    if (l.layer == layer) return &l;
  return nullptr;
}

std::size_t PrunePlan::pruned_count() const noexcept {
  std::size_t n = 0;
  for (const auto& l : layers) n += l.mask.size();
  return n;
}

PruneResult apply_plan(const MlpPolicy& policy, std::span<const SaliencyEntry> entries,
                       std::size_t count, const CalibrationBatch& calib,
                       const ApplyOptions& options) {
  if (count > entries.size()) {
    std::ostringstream os;
    os << "cannot prune " << count << " of " << entries.size() << " ranked weights";
    throw std::invalid_argument(os.str());
  }
  const auto groups = group_by_layer(policy, entries, count);
  return run_layers(policy, groups, calib, options,
                    [](std::size_t, const std::vector<SaliencyEntry>& removals, LayerSurgery& s) {
                      for (const auto& e : removals) s.remove(e);
                    });
}

PruneResult apply_plan_within_caps(const MlpPolicy& policy, std::span<const SaliencyEntry> entries,
                                   std::span<const double> caps, const CalibrationBatch& calib,
                                   const ApplyOptions& options) {
  if (caps.size() != policy.depth() + 1)
    throw DimensionError("caps must be indexed by layer (size L + 1)");
  const auto groups = group_by_layer(policy, entries, entries.size());
  return run_layers(
      policy, groups, calib, options,
      [&](std::size_t k, const std::vector<SaliencyEntry>& removals, LayerSurgery& s) {
        const double cap = caps[k];
        if (!(cap >= 0.0)) throw std::invalid_argument("magnitude caps must be nonnegative");
        for (const auto& e : removals) {
          const auto before = s.snapshot(e.row);
          s.remove(e);
          if (std::isinf(cap)) continue;
          if (spectral_norm(s.delta(), options.spectral) > cap) {
            s.restore(before);
            break;
          }
        }
      });
}

MlpPolicy apply_deltas(const MlpPolicy& policy, const PrunePlan& plan) {
  std::vector<Layer> layers(policy.layers().begin(), policy.layers().end());
  for (const auto& d : plan.layers) {
    Layer& l = layers.at(d.layer - 1);
    l.weight = l.weight + d.delta;
  }
  return MlpPolicy(std::move(layers));
}

}  // namespace prunecert
