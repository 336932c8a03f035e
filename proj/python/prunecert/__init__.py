"""Second-order pruning of MLP control policies with certified bounds on the
control deviation it causes."""

from ._core import (
    CalibrationBatch,
    ConvergenceError,
    ParseError,
    Policy,
    PrunePlan,
    SaliencyEntry,
    SingularMatrixError,
    UncertifiedActivationError,
    __version__,
    activation_loss,
    admissible_magnitude,
    apply_plan,
    bound_constant_max,
    bound_constant_state,
    certify,
    collect_calibration,
    damped_inverse,
    deviation_audit,
    frobenius_norm,
    gram,
    multi_layer_budget,
    obs_compensate,
    plan_from_policies,
    rank_weights,
    rollout,
    spectral_norm,
)


def prune(policy, states, layers, sparsity, compensate=False, damping="auto"):
    """Rank the weights of `layers` by OBD saliency and remove the lowest
    `sparsity` fraction. Returns (pruned policy, plan)."""
    calib = collect_calibration(policy, states)
    ranked = rank_weights(policy, calib, list(layers), damping=damping)
    count = int(sparsity * len(ranked) + 0.5)
    return apply_plan(policy, ranked, count, calib, compensate=compensate, damping=damping)


__all__ = [name for name in dir() if not name.startswith("_")]
