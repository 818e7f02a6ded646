import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from plaustraj.errors import ConfigError, InputShapeError
from plaustraj.metrics import (
    HistogramSpec,
    ade,
    bin_by_plausibility,
    chi2_distance,
    evaluate_predictions,
    fde,
    histogram_spec_from_samples,
    min_over_heads,
    pearson_r,
    per_timestep_errors,
    physics_primitives,
    spearman_rho,
)
from plaustraj.oracle import Trajectory


def traj(pts, dt=0.4):
    return Trajectory(np.asarray(pts, dtype=float), dt)


def random_traj(rng, n=8):
    return traj(rng.normal(scale=2.0, size=(n, 2)))


# ---------------------------------------------------------------------------
# displacement errors


def test_ade_fde_zero_on_identical():
    t = traj([[0, 0], [1, 0], [2, 0]])
    assert ade(t, t) == 0.0
    assert fde(t, t) == 0.0


def test_ade_uniform_offset():
    a = traj([[0, 0], [1, 0], [2, 0]])
    b = traj([[0, 1], [1, 1], [2, 1]])
    assert ade(a, b) == pytest.approx(1.0)


def test_fde_three_four_five():
    a = traj([[0, 0], [1, 1]])
    b = traj([[0, 0], [4, 5]])
    assert fde(a, b) == pytest.approx(5.0)


def test_ade_fde_hand_instance():
    # distances per frame: 0.5, 1.0, 1.5 → ade 1.0, fde 1.5 (worked by hand)
    a = traj([[0.0, 0.0], [1.0, 1.0], [2.0, 0.0]])
    b = traj([[0.5, 0.0], [1.0, 0.0], [2.0, -1.5]])
    assert ade(a, b) == pytest.approx(1.0)
    assert fde(a, b) == pytest.approx(1.5)
    np.testing.assert_allclose(per_timestep_errors(a, b), [0.5, 1.0, 1.5])


def test_length_mismatch_raises():
    with pytest.raises(InputShapeError):
        ade(traj([[0, 0], [1, 0]]), traj([[0, 0], [1, 0], [2, 0]]))


def test_min_over_heads():
    gt = traj([[0, 0], [1, 0], [2, 0]])
    exact = traj(gt.points.copy())
    off = traj(gt.points + 3.0)
    assert min_over_heads(ade, [off, exact], gt) == 0.0
    assert min_over_heads(ade, [off], gt) == ade(off, gt)


@settings(deadline=None, max_examples=25)
@given(seed=st.integers(0, 10_000), k=st.integers(1, 5))
def test_min_over_heads_brute_force(seed, k):
    rng = np.random.default_rng(seed)
    gt = random_traj(rng)
    heads = [random_traj(rng) for _ in range(k)]
    assert min_over_heads(ade, heads, gt) == min(ade(h, gt) for h in heads)


# ---------------------------------------------------------------------------
# physics primitives


def test_primitives_straight_line():
    pts = np.outer(np.arange(10), [1.0, 0.0])
    prims = physics_primitives(traj(pts, dt=0.5))
    np.testing.assert_allclose(prims["velocity"], 2.0)
    np.testing.assert_allclose(prims["acceleration"], 0.0, atol=1e-12)
    np.testing.assert_allclose(prims["angular_velocity"], 0.0, atol=1e-12)
    np.testing.assert_allclose(prims["angular_acceleration"], 0.0, atol=1e-12)


def test_primitives_circle_angular_velocity():
    # closed form: constant speed v on a radius-r circle turns at v/r rad/s
    r, omega, dt = 3.0, 0.5, 0.1
    ts = np.arange(40) * dt
    pts = r * np.stack([np.cos(omega * ts), np.sin(omega * ts)], axis=1)
    prims = physics_primitives(traj(pts, dt=dt))
    v = prims["velocity"].mean()
    np.testing.assert_allclose(prims["angular_velocity"], v / r, rtol=2e-3)


def test_primitives_stationary():
    pts = np.zeros((6, 2))
    prims = physics_primitives(traj(pts))
    np.testing.assert_allclose(prims["velocity"], 0.0)
    np.testing.assert_allclose(prims["angular_velocity"], 0.0)


def test_primitives_too_short():
    with pytest.raises(InputShapeError):
        physics_primitives(traj([[0, 0], [1, 0], [2, 0]]))


def test_primitives_heading_carries_through_pause():
    # a pause in the middle must not produce a spurious heading jump
    pts = np.array([[0, 0], [1, 0], [1, 0], [2, 0], [3, 0]], dtype=float)
    prims = physics_primitives(traj(pts))
    np.testing.assert_allclose(prims["angular_velocity"], 0.0, atol=1e-12)


# ---------------------------------------------------------------------------
# chi-square


def test_chi2_identical_zero():
    rng = np.random.default_rng(0)
    x = rng.normal(size=200)
    spec = histogram_spec_from_samples(x)
    assert chi2_distance(x, x, spec) == 0.0


def test_chi2_disjoint_supports():
    spec = HistogramSpec(n_bins=10, lo=0.0, hi=10.0)
    assert chi2_distance([1.0, 1.2], [8.0, 8.5], spec) == pytest.approx(2.0)


def test_chi2_hand_instance():
    # 4 bins over [0,4]; p = [.25,.5,.25,0], q = [.5,0,0,.5] → 4/3 by hand
    spec = HistogramSpec(n_bins=4, lo=0.0, hi=4.0)
    pred = [0.5, 1.5, 1.5, 2.5]
    gt = [0.5, 0.5, 3.5, 3.5]
    assert chi2_distance(pred, gt, spec) == pytest.approx(4.0 / 3.0, abs=1e-12)


@settings(deadline=None, max_examples=30)
@given(seed=st.integers(0, 10_000))
def test_chi2_symmetric_and_bounded(seed):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=50)
    b = rng.normal(loc=rng.uniform(-3, 3), size=50)
    spec = HistogramSpec(n_bins=20, lo=-8.0, hi=8.0)
    d_ab = chi2_distance(a, b, spec)
    d_ba = chi2_distance(b, a, spec)
    assert d_ab == d_ba
    assert 0.0 <= d_ab <= 2.0


def test_chi2_empty_raises():
    spec = HistogramSpec(n_bins=4, lo=0.0, hi=1.0)
    with pytest.raises(InputShapeError):
        chi2_distance([], [1.0], spec)


def test_histogram_spec_validation():
    with pytest.raises(ConfigError):
        HistogramSpec(n_bins=1, lo=0.0, hi=1.0)
    with pytest.raises(ConfigError):
        HistogramSpec(n_bins=4, lo=1.0, hi=1.0)


def test_histogram_spec_from_samples_margin():
    spec = histogram_spec_from_samples([0.0, 10.0], n_bins=10)
    assert spec.lo == pytest.approx(-0.5)
    assert spec.hi == pytest.approx(10.5)


# ---------------------------------------------------------------------------
# binning + correlations


def test_bin_by_plausibility_mass_in_last_bin():
    bins = bin_by_plausibility([0.95] * 7, [1.0] * 7, n_bins=10)
    assert bins[9]["count"] == 7
    assert sum(b["count"] for b in bins) == 7


def test_bin_by_plausibility_empty():
    bins = bin_by_plausibility([], [], n_bins=5)
    assert all(b["count"] == 0 for b in bins)


def test_bin_by_plausibility_rejects_out_of_range():
    with pytest.raises(InputShapeError):
        bin_by_plausibility([1.2], [0.5])


def test_spearman_monotone():
    x = [1.0, 2.0, 3.0, 4.0]
    assert spearman_rho(x, [10, 20, 30, 40]) == pytest.approx(1.0)
    assert spearman_rho(x, [40, 30, 20, 10]) == pytest.approx(-1.0)


def test_pearson_known_value():
    assert pearson_r([1, 2, 3], [2, 4, 6]) == pytest.approx(1.0)
    assert pearson_r([1, 2, 3], [1, 1, 1]) == 0.0


# ---------------------------------------------------------------------------
# aggregation


def test_evaluate_predictions_report_consistency():
    rng = np.random.default_rng(7)
    cases = [[random_traj(rng), random_traj(rng)] for _ in range(6)]
    gts = [random_traj(rng) for _ in range(6)]
    report = evaluate_predictions(cases, gts, n_bins=16)
    # per-timestep decomposition must average back to the ADE
    assert np.mean(report.per_timestep) == pytest.approx(report.ade, abs=1e-9)
    assert report.min_ade <= report.ade + 1e-12
    assert report.min_fde <= report.fde + 1e-12
    assert set(report.chi2) == {
        "velocity", "acceleration", "angular_velocity", "angular_acceleration"
    }
    assert all(0.0 <= v <= 2.0 for v in report.chi2.values())
    assert report.n_samples == 6


def test_evaluate_predictions_rigid_invariance():
    rng = np.random.default_rng(8)
    cases = [[random_traj(rng)] for _ in range(4)]
    gts = [random_traj(rng) for _ in range(4)]
    base = evaluate_predictions(cases, gts)
    angle, shift = 1.3, (4.0, -2.0)
    moved = evaluate_predictions(
        [[t.transformed(angle=angle, translation=shift) for t in c] for c in cases],
        [g.transformed(angle=angle, translation=shift) for g in gts],
    )
    assert moved.ade == pytest.approx(base.ade, abs=1e-9)
    assert moved.fde == pytest.approx(base.fde, abs=1e-9)
    assert moved.min_ade == pytest.approx(base.min_ade, abs=1e-9)


def test_evaluate_predictions_brute_force_oracle():
    """Cross-check the aggregate against an independent loop that never calls
    the metrics module internals."""
    rng = np.random.default_rng(9)
    cases = [[random_traj(rng) for _ in range(3)] for _ in range(5)]
    gts = [random_traj(rng) for _ in range(5)]
    report = evaluate_predictions(cases, gts)

    all_ades, all_fdes, min_ades, min_fdes = [], [], [], []
    for heads, gt in zip(cases, gts):
        vals_a, vals_f = [], []
        for h in heads:
            d = [math.dist(p, q) for p, q in zip(h.points, gt.points)]
            vals_a.append(sum(d) / len(d))
            vals_f.append(d[-1])
        all_ades.extend(vals_a)
        all_fdes.extend(vals_f)
        min_ades.append(min(vals_a))
        min_fdes.append(min(vals_f))
    assert report.ade == pytest.approx(np.mean(all_ades), abs=1e-12)
    assert report.fde == pytest.approx(np.mean(all_fdes), abs=1e-12)
    assert report.min_ade == pytest.approx(np.mean(min_ades), abs=1e-12)
    assert report.min_fde == pytest.approx(np.mean(min_fdes), abs=1e-12)


def test_evaluate_predictions_empty_raises():
    with pytest.raises(InputShapeError):
        evaluate_predictions([], [])
