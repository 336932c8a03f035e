#pragma once

#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "prunecert/linalg.hpp"
#include "prunecert/policy.hpp"

namespace prunecert {

/// Per-layer input activations gathered from the unpruned policy: X_k is
/// d_{k-1} x n with column j holding x_{k-1} for calibration state j
/// (x_0 is the state itself).
struct CalibrationBatch {
  std::vector<Matrix> inputs;

  std::size_t samples() const noexcept { return inputs.empty() ? 0 : inputs.front().cols(); }
  /// 1-based.
  const Matrix& input(std::size_t k) const;
};

CalibrationBatch collect_calibration(const MlpPolicy& policy, std::span<const Vector> states);

/// ||W X - W_hat X||_F^2, evaluated directly.
double activation_loss(const Matrix& w, const Matrix& w_hat, const Matrix& x);

/// Half w_q^2 over (H^{-1})_qq.
double obd_saliency(double w_q, double h_inv_qq);

struct SaliencyEntry {
  std::size_t layer = 0;  // 1-based
  std::size_t row = 0;
  std::size_t col = 0;
  double weight = 0.0;
  double saliency = 0.0;

  friend bool operator==(const SaliencyEntry&, const SaliencyEntry&) = default;
};

enum class SaliencyMode {
  full_inverse,  // (H^{-1})_qq from the damped block inverse
  diagonal,      // LeCun's 1 / H_qq approximation
};

struct RankOptions {
  Damping damping = Damping::automatic();
  SaliencyMode mode = SaliencyMode::full_inverse;
};

/// One entry per weight of every selected layer, ascending by saliency with
/// ties broken by (layer, row, col).
std::vector<SaliencyEntry> rank_weights(const MlpPolicy& policy, const CalibrationBatch& calib,
                                        std::span<const std::size_t> layers,
                                        const RankOptions& options = {});

/// Optimal Brain Surgeon update of one row: zeroes entry q and moves the
/// remaining entries by -(w_q / h_inv_qq) h_inv e_q, the minimizer of the
/// activation loss under that constraint.
Vector obs_compensate(std::span<const double> row, std::size_t q, const Matrix& h_inv);

struct LayerDelta {
  std::size_t layer = 0;  // 1-based
  std::vector<std::pair<std::size_t, std::size_t>> mask;  // (row, col), removal order
  std::vector<double> saliencies;                          // parallel to mask
  Matrix delta;                                            // W_hat - W
  double delta_spectral_norm = 0.0;
};

/// The perturbation delta Theta, restricted to weight matrices.
struct PrunePlan {
  std::vector<LayerDelta> layers;  // ascending layer index
  bool compensated = false;

  const LayerDelta* find(std::size_t layer) const noexcept;
  std::size_t pruned_count() const noexcept;
};

struct PruneResult {
  MlpPolicy pruned;
  PrunePlan plan;
};

struct ApplyOptions {
  bool compensate = false;
  Damping damping = Damping::automatic();
  /// With compensation on, rebuild each layer's Hessian from the activations
  /// of the partially pruned policy instead of the original calibration.
  bool refresh_hessian = false;
  SpectralOptions spectral = {};
};

/// Removes the first `count` entries of a ranking. Every layer that appears in
/// `entries` gets a LayerDelta, even when none of its weights are removed.
/// Biases are never touched. With compensation, removals in the same row are
/// processed in ranking order against the fixed Hessian, downdating its
/// inverse so earlier zeros stay zero.
PruneResult apply_plan(const MlpPolicy& policy, std::span<const SaliencyEntry> entries,
                       std::size_t count, const CalibrationBatch& calib,
                       const ApplyOptions& options = {});

/// Budget-driven variant: walks the ranking layer by layer and keeps removing
/// weights while ||delta W_k||_2 stays within caps[layer]. `caps` is indexed
/// by layer (index 0 unused, size L + 1); infinite caps allow full removal.
PruneResult apply_plan_within_caps(const MlpPolicy& policy, std::span<const SaliencyEntry> entries,
                                   std::span<const double> caps, const CalibrationBatch& calib,
                                   const ApplyOptions& options = {});

/// Rebuilds a policy from original + plan deltas.
MlpPolicy apply_deltas(const MlpPolicy& policy, const PrunePlan& plan);

}  // namespace prunecert
