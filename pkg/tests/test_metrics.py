import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.spatial.transform import Rotation

from mocapsolve.body import ParameterError
from mocapsolve.metrics import (EvalReport, evaluate, geodesic_angles, indicators, joint_rmse,
                                mae_geodesic, pck, rmse, rmse3, synthesis)


def hand_fixture():
    """Two samples of two joints with errors of 4, 9 mm and 16, 36 mm along x."""
    gt = np.zeros((2, 2, 3))
    est = gt.copy()
    est[0, :, 0] = [0.004, 0.009]
    est[1, :, 0] = [0.016, 0.036]
    return gt, est


def test_rmse_hand_values():
    gt, est = hand_fixture()
    # sqrt(mean distance) per sample: sqrt(6.5) and sqrt(26)
    assert rmse(gt, est) == pytest.approx((math.sqrt(6.5) + math.sqrt(26)) / 2, rel=1e-12)
    assert joint_rmse(gt, est) == pytest.approx(math.sqrt((16 + 81 + 256 + 1296) / 4), rel=1e-12)
    assert rmse(gt, gt) == 0.0 and joint_rmse(gt, gt) == 0.0


def test_pck_hand_values():
    gt, est = hand_fixture()
    assert pck(gt, est, 10) == 50.0
    assert pck(gt, est, 30) == 75.0
    assert pck(gt, est, 70) == 100.0
    assert pck(gt, est, 9) == 25.0  # strict inequality at the boundary


@given(st.floats(0.1, 200), st.floats(0.1, 200), st.integers(0, 10_000))
def test_pck_monotone_in_tau(t1, t2, seed):
    rng = np.random.default_rng(seed)
    gt = rng.normal(size=(3, 5, 3))
    est = gt + rng.normal(0, 0.03, gt.shape)
    lo, hi = sorted((t1, t2))
    assert pck(gt, est, lo) <= pck(gt, est, hi)


def test_geodesic_on_known_angles():
    angles = np.linspace(0, math.pi, 13)
    axes = np.random.default_rng(0).normal(size=(13, 3))
    axes /= np.linalg.norm(axes, axis=1, keepdims=True)
    base = Rotation.random(13, random_state=1).as_matrix()
    rel = Rotation.from_rotvec(axes * angles[:, None]).as_matrix()
    got = geodesic_angles(base, base @ rel)
    assert np.max(np.abs(got - angles)) < 1e-9
    assert mae_geodesic(base, base @ rel) == pytest.approx(90.0, abs=1e-9)


def test_geodesic_rejects_non_rotations():
    with pytest.raises(ParameterError):
        mae_geodesic(np.eye(3) * 2, np.eye(3))
    with pytest.raises(ParameterError):
        mae_geodesic(np.diag([1.0, 1, -1]), np.eye(3))


def test_indicators_formulas():
    assert rmse3(30.0, 0.6) == pytest.approx(12.0)
    assert synthesis(3.0, 1.5) == 2.0
    assert math.isnan(synthesis(1.0, 0.0))
    with pytest.raises(ParameterError):
        rmse3(30.0, 60.0)
    rep = EvalReport(rmse=20.0, pck1=10.0, pck3=75.0, pck7=90.0, fid=2.0, div=0.0)
    r3, syn = indicators(rep)
    assert r3 == pytest.approx(5.0) and math.isnan(syn) and rep.synthesis_undefined


def test_evaluate_perfect_and_csv():
    gt, _ = hand_fixture()
    rots = np.broadcast_to(np.eye(3), (2, 2, 3, 3))
    rep = evaluate(gt, gt, rots, rots)
    assert (rep.rmse, rep.pck1, rep.pck3, rep.pck7, rep.mae, rep.rmse3) == (0.0, 100.0, 100.0, 100.0, 0.0, 0.0)
    lines = rep.to_csv().splitlines()
    assert lines[0].startswith("rmse,pck1") and len(lines) == 2


def test_report_validation():
    with pytest.raises(ParameterError):
        EvalReport(rmse=-1, pck1=0, pck3=0, pck7=0)
    with pytest.raises(ParameterError):
        EvalReport(rmse=1, pck1=0, pck3=120, pck7=0)
    with pytest.raises(ParameterError):
        rmse(np.zeros((2, 3)), np.zeros((3, 3)))
    with pytest.raises(ParameterError):
        pck(np.zeros((2, 3)), np.zeros((2, 3)), 0)


def test_single_offset_joint():
    gt = np.zeros((1, 4, 3))
    est = gt.copy()
    est[0, 2, 0] = 0.030
    # one joint of four at 30 mm: sqrt of the mean distance in millimeters
    assert rmse(gt, est) == pytest.approx(math.sqrt(30 / 4))
    assert rmse(gt[:, 2:3], est[:, 2:3]) == pytest.approx(math.sqrt(30.0))
    assert joint_rmse(gt[:, 2:3], est[:, 2:3]) == pytest.approx(30.0)


def test_geodesic_matches_quaternion_angle():
    rng = np.random.default_rng(5)
    a = Rotation.random(64, random_state=rng)
    b = Rotation.random(64, random_state=rng)
    qa, qb = a.as_quat(), b.as_quat()
    oracle = 2 * np.arccos(np.clip(np.abs(np.sum(qa * qb, axis=1)), 0, 1))
    np.testing.assert_allclose(geodesic_angles(a.as_matrix(), b.as_matrix()), oracle, atol=1e-7)


def test_metrics_ignore_joint_order():
    rng = np.random.default_rng(6)
    gt = rng.normal(size=(3, 10, 3))
    est = gt + rng.normal(scale=0.02, size=gt.shape)
    perm = rng.permutation(10)
    for f in (rmse, joint_rmse):
        assert f(gt[:, perm], est[:, perm]) == pytest.approx(f(gt, est), rel=1e-12)
    assert pck(gt[:, perm], est[:, perm], 30) == pck(gt, est, 30)


def test_pck_all_at_threshold_and_half_split():
    gt = np.zeros((1, 8, 3))
    at_tau = gt.copy()
    at_tau[..., 1] = 0.030
    assert pck(gt, at_tau, 30.0) == 0.0
    split = gt.copy()
    split[0, 4:, 1] = 0.060
    assert pck(gt, split, 30.0) == 50.0


def test_indicator_hand_cases():
    assert synthesis(8.0, 16.0) == 0.5
    assert rmse3(12.5, 1.0) == 0.0
