import json
import math
from pathlib import Path

import numpy as np
import pytest

import prunecert as pc

DATA = Path(__file__).resolve().parents[2] / "tests" / "data"


def make_policy(weights, biases, kinds):
    layers = [
        {"weights": np.asarray(w).tolist(), "bias": list(b), "activation": {"kind": k}}
        for w, b, k in zip(weights, biases, kinds)
    ]
    return pc.Policy.from_json(json.dumps({"layers": layers}))


def random_policy(rng, widths):
    ws = [rng.normal(0, 1 / math.sqrt(a), size=(b, a)) for a, b in zip(widths, widths[1:])]
    bs = [rng.normal(0, 0.1, size=b) for b in widths[1:]]
    return make_policy(ws, bs, ["relu"] * len(ws))


def test_linalg():
    assert pc.spectral_norm(np.eye(3)) == pytest.approx(1.0)
    a = np.array([[1.0, 2.0], [3.0, 4.0]])
    assert pc.spectral_norm(a) == pytest.approx(np.linalg.norm(a, 2), rel=1e-10)
    assert pc.frobenius_norm(np.array([[3.0, 4.0]])) == 5.0
    np.testing.assert_array_equal(pc.gram(np.diag([1.0, 2.0])), np.diag([2.0, 8.0]))
    np.testing.assert_array_equal(pc.damped_inverse(np.diag([2.0, 8.0])), np.diag([0.5, 0.125]))
    with pytest.raises(pc.SingularMatrixError):
        pc.damped_inverse(pc.gram(np.array([[1.0], [1.0]])))


def test_policy_forward_and_trace():
    p = make_policy([[[1.0], [-1.0]], [[1.0, 1.0]]], [[0, 0], [0]], ["relu", "relu"])
    np.testing.assert_array_equal(p(np.array([3.0])), [3.0])
    t = p.trace(np.array([3.0]))
    assert t["post_norms"] == [3.0, 3.0]
    assert p.lipschitz_upper() == pytest.approx(math.sqrt(2) * math.sqrt(2))
    with pytest.raises(ValueError):
        p(np.array([1.0, 2.0]))


def test_prune_and_certify():
    rng = np.random.default_rng(0)
    p = random_policy(rng, [4, 16, 8, 2])
    states = rng.uniform(-1, 1, size=(64, 4))
    pruned, plan = pc.prune(p, states, [2], 0.5)
    assert plan.pruned_count == 64
    assert np.count_nonzero(pruned.weight(2) == 0) >= 64

    cert = pc.certify(p, pruned, radius=2.0, samples=2000, seed=1)
    assert cert["holds"]
    assert cert["audit"]["violations"] == 0
    budget = pc.multi_layer_budget(p, plan, radius=2.0)["budget"]
    assert budget == cert["budget"]
    assert cert["audit"]["max_dev"] <= budget


def test_obs_matches_lstsq():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(3, 10))
    w = rng.normal(size=3)
    out = pc.obs_compensate(w, 1, pc.damped_inverse(pc.gram(x)))
    assert out[1] == 0.0
    # With entry 1 fixed at zero, the other entries solve a least-squares fit of w X.
    keep = [0, 2]
    sol, *_ = np.linalg.lstsq(x[keep].T, w @ x, rcond=None)
    np.testing.assert_allclose(out[keep], sol, atol=1e-8)


def test_admissible_magnitude_round_trip():
    p = make_policy([[[4.0]], [[2.0]]], [[0], [0]], ["relu", "identity"])
    caps = pc.admissible_magnitude(p, [1, 2], 2.0, 1.0)
    assert caps["caps"] == [0.5, 0.25]


def test_rollout_and_deviation_audit():
    p = pc.Policy.load(str(DATA / "pendulum_policy.json"))
    states, actions = pc.rollout("pendulum", p, np.array([0.3, 0.0]), 500)
    assert states.shape == (501, 2) and actions.shape == (500, 1)
    assert np.linalg.norm(states[-1]) < 1e-3

    calib = pc.collect_calibration(p, np.random.default_rng(2).uniform(-1, 1, size=(64, 2)))
    ranked = pc.rank_weights(p, calib, [1])
    pruned, _ = pc.apply_plan(p, ranked, 8, calib)
    report = pc.deviation_audit("pendulum", p, pruned, np.array([0.3, 0.0]), 500)
    assert report["violations"] == 0
    assert report["certified_states"] == 1002


def test_bound_constants():
    p = make_policy([[[2.0]], [[5.0]], [[3.0]]], [[1.0], [0.0], [0.0]], ["relu"] * 3)
    assert pc.bound_constant_state(p, 2, np.array([1.0])) == pytest.approx(9.0)
    assert pc.bound_constant_max(p, 2, 1.0) == pytest.approx(9.0)
