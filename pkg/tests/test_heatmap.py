import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from mocapsolve.body import ParameterError
from mocapsolve.heatmap import (MAGIC, SIZE, VIEWS, OraclePredictor, encode_heatmap, encode_stack,
                                js_divergence, marginal_fuse, normalize_frame, pack_container,
                                pack_maps, render_ortho, soft_argmax, total_loss, unpack_container,
                                unpack_maps, welsch)

# a 2-sigma Gaussian needs about 4 sigma of room before truncation biases the mean
EDGE = 8 * 2.0 / (SIZE - 1)


def random_targets(rng, n):
    return rng.uniform(EDGE, 1 - EDGE, (n, 2))


# ----------------------------------------------------------------- normalize

def test_normalize_maps_the_box_into_the_cube():
    pts = np.random.default_rng(0).normal(size=(40, 3)) * [0.3, 0.9, 0.2]
    for policy in ("diagonal", "extent"):
        nf = normalize_frame(pts, bbox_policy=policy)
        assert not nf.clamped.any()
        np.testing.assert_allclose(nf.denormalize(), pts, atol=1e-12)
        lo, hi = nf.coords.min(0), nf.coords.max(0)
        np.testing.assert_allclose((lo + hi) / 2, 0.5, atol=1e-12)
    nf = normalize_frame(pts, bbox_policy="extent")
    assert np.max(nf.coords.max(0) - nf.coords.min(0)) == pytest.approx(0.8)


def test_ghosts_do_not_inflate_the_box_and_are_clamped():
    pts = np.vstack([np.random.default_rng(1).uniform(-0.5, 0.5, (20, 3)), [[9.0, 0, 0]]])
    labeled = np.arange(21) < 20
    nf = normalize_frame(pts, labeled)
    ref = normalize_frame(pts[:20])
    assert nf.scale == ref.scale
    assert nf.clamped.tolist() == [False] * 20 + [True]
    assert nf.coords[20, 0] == 1.0


def test_normalize_errors():
    with pytest.raises(ParameterError):
        normalize_frame(np.zeros((0, 3)))
    with pytest.raises(ParameterError):
        normalize_frame(np.ones((4, 3)))
    with pytest.raises(ParameterError):
        normalize_frame(np.eye(3), bbox_policy="cube")


# -------------------------------------------------------------------- render

def test_render_nearest_pixel_and_depth_order():
    c = np.array([[0.0, 0.0, 0.7], [0.0, 0.0, 0.3], [1.0, 0.5, 0.5]])
    xy = render_ortho(c, "xy", size=11).pixels
    assert xy[0, 0] == 0.3  # the nearer point wins the collision
    assert xy[5, 10] == 0.5
    yz = render_ortho(c, "yz", size=11).pixels
    assert yz[0, 7] == 0.0 and yz[5, 5] == 1.0
    assert np.count_nonzero(xy) == 2
    with pytest.raises(ParameterError):
        render_ortho(c, "xz")


# --------------------------------------------------------- encode and decode

def test_encode_is_normalized_and_peaks_at_target():
    m = encode_heatmap((0.25, 0.75), size=33)
    assert m.sum() == pytest.approx(1.0, abs=1e-14)
    assert np.unravel_index(np.argmax(m), m.shape) == (24, 8)


def test_soft_argmax_recovers_random_targets():
    rng = np.random.default_rng(0)
    t = random_targets(rng, 200)
    est = soft_argmax(np.stack([encode_heatmap(x) for x in t]))
    assert np.max(np.abs(est - t)) * (SIZE - 1) < 0.25


def test_soft_argmax_temperature_softmax():
    logits = np.zeros((5, 5))
    logits[1, 3] = 50.0
    np.testing.assert_allclose(soft_argmax(logits, temperature=1.0), [0.75, 0.25], atol=1e-12)
    np.testing.assert_allclose(soft_argmax(np.zeros((5, 5)), temperature=2.0), [0.5, 0.5])
    with pytest.raises(ParameterError):
        soft_argmax(np.zeros((5, 5)))
    with pytest.raises(ParameterError):
        soft_argmax(-np.ones((5, 5)))


def test_marginal_fuse_recovers_consistent_stacks():
    rng = np.random.default_rng(2)
    pts = rng.uniform(EDGE, 1 - EDGE, (20, 3))
    pred = OraclePredictor(pts).predict(None, None)
    est = marginal_fuse(pred["xy"], pred["yz"])
    assert np.max(np.abs(est - pts)) * (SIZE - 1) < 0.25
    with pytest.raises(ParameterError):
        marginal_fuse(pred["xy"][:3], pred["yz"])


# -------------------------------------------------------------------- losses

def test_js_extremes():
    a = np.zeros((4, 4))
    a[0, 0] = 1
    b = np.zeros((4, 4))
    b[3, 3] = 1
    assert abs(js_divergence(a, a)) < 1e-9
    assert abs(js_divergence(a, b) - math.log(2)) < 1e-9


@given(arrays(float, (3, 3), elements=st.floats(0.01, 1)), arrays(float, (3, 3), elements=st.floats(0.01, 1)))
def test_js_symmetric_and_bounded(a, b):
    a, b = a / a.sum(), b / b.sum()
    d = js_divergence(a, b)
    assert -1e-12 <= d <= math.log(2) + 1e-12
    assert d == pytest.approx(js_divergence(b, a), abs=1e-14)


def test_js_per_map_and_validation():
    stack = encode_stack(np.full((3, 3), 0.5), "xy", size=16)
    np.testing.assert_allclose(js_divergence(stack, stack), np.zeros(3), atol=1e-15)
    with pytest.raises(ParameterError):
        js_divergence(np.ones((2, 2)), np.ones((2, 2)) / 4)
    with pytest.raises(ParameterError):
        js_divergence(np.ones((2, 2)) / 4, np.ones((3, 3)) / 9)


def test_welsch_values():
    assert abs(welsch(0.05, 0.05) - (1 - math.exp(-0.5))) < 1e-12
    assert welsch(0.0) == 0.0
    assert welsch(1e3) == 1.0
    np.testing.assert_allclose(welsch(np.array([[0.3, 0.4, 0.0]]), 0.5), [1 - math.exp(-0.5)], atol=1e-15)
    with pytest.raises(ParameterError):
        welsch(1.0, 0.0)


def test_total_loss_combines_terms():
    pts = np.random.default_rng(3).uniform(0.2, 0.8, (4, 3))
    h = OraclePredictor(pts, size=32).predict(None, None)
    assert total_loss(h, h, pts, pts) == pytest.approx(0.0, abs=1e-12)
    shifted = pts + [0.05, 0, 0]
    w = welsch(np.full((4, 3), [0.05, 0, 0]), 0.05)
    assert total_loss(h, h, pts, shifted, relevance=2.0) == pytest.approx(2 * w.sum(), rel=1e-12)


# ----------------------------------------------------------------- container

def test_container_round_trip():
    maps = np.random.default_rng(4).random((3, 7, 5)).astype(np.float32)
    blob = pack_maps("yz", maps)
    assert blob[:4] == MAGIC
    view, back = unpack_maps(blob)
    assert view == "yz" and back.shape == (3, 7, 5)
    np.testing.assert_array_equal(back, maps)
    code, single = unpack_container(pack_container(9, maps[0]))
    assert code == 9 and single.shape == (1, 7, 5)


def test_container_rejects_bad_input():
    blob = pack_maps("xy", np.zeros((2, 2)))
    with pytest.raises(ParameterError):
        unpack_container(blob[:10])
    with pytest.raises(ParameterError):
        unpack_container(b"XXXX" + blob[4:])
    with pytest.raises(ParameterError):
        unpack_container(blob + b"\0")
    with pytest.raises(ParameterError):
        unpack_maps(pack_container(len(VIEWS), np.zeros((2, 2))))
    with pytest.raises(ParameterError):
        pack_maps("zz", np.zeros((2, 2)))


def test_cube_corners_and_translation_invariance():
    corners = np.array([[x, y, z] for x in (0, 1) for y in (0, 1) for z in (0, 1)], dtype=float)
    nf = normalize_frame(corners * 3 - 7, margin=0.0, bbox_policy="extent")
    np.testing.assert_allclose(nf.coords, corners, atol=1e-15)
    pts = np.random.default_rng(8).normal(size=(12, 3))
    a = normalize_frame(pts).coords
    b = normalize_frame(pts + [4.0, -2.0, 9.0]).coords
    np.testing.assert_allclose(a, b, atol=1e-12)


def test_single_point_and_empty_render():
    img = render_ortho(np.array([[0.5, 0.5, 0.25]]), "xy").pixels
    assert img[80, 80] == 0.25 and np.count_nonzero(img) == 1
    assert not render_ortho(np.zeros((0, 3)), "yz").pixels.any()


def test_encode_at_pixel_centre_peaks_there():
    m = encode_heatmap((37 / (SIZE - 1), 101 / (SIZE - 1)))
    assert np.unravel_index(np.argmax(m), m.shape) == (101, 37)


def test_soft_argmax_hand_cases():
    d = np.zeros((SIZE, SIZE))
    d[20, 10] = 1.0
    np.testing.assert_allclose(soft_argmax(d), np.array([10, 20]) / (SIZE - 1), atol=1e-15)
    np.testing.assert_allclose(soft_argmax(np.ones((SIZE, SIZE))), [0.5, 0.5], atol=1e-12)
    d[60, 30] = 1.0
    np.testing.assert_allclose(soft_argmax(d), np.array([20, 40]) / (SIZE - 1), atol=1e-15)


def test_fuse_known_point_and_disagreeing_heights():
    p = np.array([[0.3, 0.6, 0.9]])
    pred = OraclePredictor(p).predict(None, None)
    np.testing.assert_allclose(marginal_fuse(pred["xy"], pred["yz"]), p, atol=0.25 / (SIZE - 1))
    xy = encode_stack(np.array([[0.3, 0.4, 0.5]]), "xy")
    yz = encode_stack(np.array([[0.3, 0.6, 0.5]]), "yz")
    assert marginal_fuse(xy, yz)[0, 1] == pytest.approx(0.5, abs=1e-9)


def test_fuse_matches_per_landmark_loop(model):
    from mocapsolve.body import BodyParams, landmarks
    lm = landmarks(model, BodyParams.zeros(model))
    pts = normalize_frame(lm).coords
    pred = OraclePredictor(pts).predict(None, None)
    fused = marginal_fuse(pred["xy"], pred["yz"])
    # expectation over the full 2D grid, per landmark, rather than via marginals
    u, v = np.meshgrid(np.arange(SIZE) / (SIZE - 1), np.arange(SIZE) / (SIZE - 1))
    assert len(pts) == 71
    for k in range(len(pts)):
        hx, hy = pred["xy"][k] / pred["xy"][k].sum(), pred["yz"][k] / pred["yz"][k].sum()
        x, y1 = float(np.sum(hx * u)), float(np.sum(hx * v))
        z, y2 = float(np.sum(hy * u)), float(np.sum(hy * v))
        np.testing.assert_allclose(fused[k], [x, (y1 + y2) / 2, z], atol=1e-12)
