"""Two-view orthographic heatmap representation around the landmark predictor.

Normalized coordinates live in the unit cube with gravity along +y. The xy
view looks down the z axis (image u = x, v = y); the yz view looks down x
(u = z, v = y). A pixel (i, j) has image coordinates u = i / (W - 1),
v = j / (H - 1) and is stored at array index [j, i].
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Protocol

import numpy as np

from .body import ParameterError

SIZE = 160
VIEWS = ("xy", "yz")
_AXES = {"xy": (0, 1, 2), "yz": (2, 1, 0)}  # (u axis, v axis, depth axis)


@dataclass
class NormalizedFrame:
    coords: np.ndarray       # (N, 3) in [0, 1]^3
    scale: float             # normalized = (world - center) * scale + 0.5
    center: np.ndarray
    clamped: np.ndarray      # (N,) rows that fell outside the cube and were clamped

    def denormalize(self, coords=None):
        c = self.coords if coords is None else np.asarray(coords, dtype=float)
        return (c - 0.5) / self.scale + self.center


def normalize_frame(points, labeled=None, margin=0.1, bbox_policy="diagonal"):
    """Isotropically map points into the unit cube around their bounding box.

    The box is taken over `labeled` rows only (all rows by default) so that
    unlabeled ghosts cannot inflate it. ``bbox_policy`` picks the length that
    spans ``1 - 2 * margin``: the box "diagonal" (every labeled point stays
    inside the cube whatever its shape) or its largest side, "extent".
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    if len(pts) == 0:
        raise ParameterError("cannot normalize an empty frame")
    ref = pts if labeled is None else pts[np.asarray(labeled, dtype=bool)]
    if len(ref) == 0:
        raise ParameterError("no labeled points to normalize against")
    lo, hi = ref.min(axis=0), ref.max(axis=0)
    if bbox_policy == "diagonal":
        length = float(np.linalg.norm(hi - lo))
    elif bbox_policy == "extent":
        length = float(np.max(hi - lo))
    else:
        raise ParameterError(f"unknown bbox policy {bbox_policy!r}")
    if length <= 0:
        raise ParameterError("degenerate frame: zero bounding box")
    if not 0 <= margin < 0.5:
        raise ParameterError("margin must lie in [0, 0.5)")
    scale = (1 - 2 * margin) / length
    center = (lo + hi) / 2
    c = (pts - center) * scale + 0.5
    outside = np.any((c < 0) | (c > 1), axis=1)
    return NormalizedFrame(np.clip(c, 0.0, 1.0), scale, center, outside)


def denormalize(nframe, coords=None):
    return nframe.denormalize(coords)


def _to_pixel(u, size):
    return np.floor(np.asarray(u) * (size - 1) + 0.5).astype(int)


@dataclass
class OrthoDepthMap:
    view: str
    pixels: np.ndarray   # (H, W), normalized depth, 0 = empty


def render_ortho(coords, view, size=SIZE):
    """Nearest-pixel splat of normalized points; the smallest depth wins a pixel."""
    if view not in VIEWS:
        raise ParameterError(f"view must be one of {VIEWS}")
    c = np.asarray(getattr(coords, "coords", coords), dtype=float).reshape(-1, 3)
    img = np.zeros((size, size))
    if len(c) == 0:
        return OrthoDepthMap(view, img)
    a_u, a_v, a_d = _AXES[view]
    i, j, d = _to_pixel(c[:, a_u], size), _to_pixel(c[:, a_v], size), c[:, a_d]
    # write deepest first so nearer points overwrite on collisions
    order = np.argsort(-d, kind="stable")
    img[j[order], i[order]] = d[order]
    return OrthoDepthMap(view, img)


def encode_heatmap(coords_2d, sigma_px=2.0, size=SIZE):
    """Normalized Gaussian centered at the continuous target (no rounding)."""
    c = np.asarray(coords_2d, dtype=float) * (size - 1)
    grid = np.arange(size, dtype=float)
    gu = np.exp(-((grid - c[0]) ** 2) / (2 * sigma_px**2))
    gv = np.exp(-((grid - c[1]) ** 2) / (2 * sigma_px**2))
    m = np.outer(gv, gu)
    return m / m.sum()


def encode_stack(coords, view, sigma_px=2.0, size=SIZE):
    """Per-landmark target maps (L, H, W) for one view."""
    a_u, a_v, _ = _AXES[view]
    c = np.asarray(coords, dtype=float).reshape(-1, 3)
    return np.stack([encode_heatmap((p[a_u], p[a_v]), sigma_px, size) for p in c])


def _normalized(maps, temperature):
    maps = np.asarray(maps, dtype=float)
    if temperature is None:
        if np.any(maps < 0):
            raise ParameterError("heatmaps must be non-negative")
        total = maps.sum(axis=(-2, -1), keepdims=True)
        if np.any(total <= 0):
            raise ParameterError("cannot take the expectation of an all-zero heatmap")
        return maps / total
    z = maps / temperature
    z = np.exp(z - z.max(axis=(-2, -1), keepdims=True))
    return z / z.sum(axis=(-2, -1), keepdims=True)


def soft_argmax(maps, temperature=None):
    """Center of mass in normalized image coordinates, (..., 2) as (u, v).

    With the default ``temperature=None`` the map is only rescaled to unit
    mass; a float applies a softmax at that temperature first (raw logits).
    """
    p = _normalized(maps, temperature)
    h, w = p.shape[-2:]
    u = np.arange(w) / (w - 1)
    v = np.arange(h) / (h - 1)
    return np.stack([p.sum(axis=-2) @ u, p.sum(axis=-1) @ v], axis=-1)


def marginal_fuse(hm_xy, hm_yz, temperature=None):
    """3D normalized landmarks from the two views' stacks (y averaged)."""
    hm_xy, hm_yz = np.asarray(hm_xy), np.asarray(hm_yz)
    if hm_xy.shape[0] != hm_yz.shape[0]:
        raise ParameterError("both views need the same number of landmark maps")
    a = soft_argmax(hm_xy, temperature)
    b = soft_argmax(hm_yz, temperature)
    return np.stack([a[:, 0], (a[:, 1] + b[:, 1]) / 2, b[:, 0]], axis=1)


# ------------------------------------------------------------------ losses

def _check_normalized(h, tol=1e-6):
    s = h.sum(axis=(-2, -1))
    if np.any(h < 0) or np.any(np.abs(s - 1) > tol):
        raise ParameterError("heatmaps must be non-negative and sum to 1")


def _kl(p, q):
    # 0 log 0 = 0; q > 0 wherever p > 0 because q is a mixture containing p
    ratio = np.divide(p, q, out=np.ones_like(p), where=p > 0)
    return np.sum(p * np.log(ratio), axis=(-2, -1))


def js_divergence(h_a, h_b):
    """Jensen-Shannon divergence in nats, per map for stacked input."""
    h_a, h_b = np.asarray(h_a, dtype=float), np.asarray(h_b, dtype=float)
    if h_a.shape != h_b.shape:
        raise ParameterError("heatmap shapes differ")
    _check_normalized(h_a)
    _check_normalized(h_b)
    m = (h_a + h_b) / 2
    out = 0.5 * _kl(h_a, m) + 0.5 * _kl(h_b, m)
    return float(out) if np.ndim(out) == 0 else out


def welsch(residual, nu=0.05):
    """1 - exp(-|r|^2 / (2 nu^2)) over the last axis of `residual`."""
    if nu <= 0:
        raise ParameterError("nu must be positive")
    r = np.asarray(residual, dtype=float)
    sq = r * r if r.ndim == 0 else np.sum(r * r, axis=-1)
    out = -np.expm1(-sq / (2 * nu * nu))
    return float(out) if np.ndim(out) == 0 else out


def total_loss(h_gt, h_est, coords_gt, coords_est, relevance=1.0, lambda_js=1.0,
               lambda_w=1.0, nu=0.05):
    """Relevance-weighted sum over landmarks of JS (summed over views) plus Welsch.

    ``h_gt`` / ``h_est`` are dicts view -> (L, H, W) stacks; the estimated ones
    are expected already softmax-normalized.
    """
    js = sum(js_divergence(h_gt[v], h_est[v]) for v in h_gt)
    w = welsch(np.asarray(coords_gt) - np.asarray(coords_est), nu)
    return float(np.sum(relevance * (lambda_js * np.asarray(js) + lambda_w * w)))


# -------------------------------------------------------------- predictor

class Predictor(Protocol):
    def predict(self, depth_xy: OrthoDepthMap, depth_yz: OrthoDepthMap) -> dict: ...


class OraclePredictor:
    """Stand-in for the network: emits target heatmaps of known coordinates."""

    def __init__(self, coords, sigma_px=2.0, size=SIZE):
        self.coords = np.asarray(coords, dtype=float)
        self.sigma_px = sigma_px
        self.size = size

    def predict(self, depth_xy, depth_yz):
        return {v: encode_stack(self.coords, v, self.sigma_px, self.size) for v in VIEWS}


# ---------------------------------------------------------- binary container

MAGIC = b"MCHM"
_HEADER = struct.Struct("<4sIIII")


def pack_container(code, maps):
    """Serialize (H, W) or (C, H, W) float maps: header then float32 LE, row-major.

    ``code`` fills the header's view slot (a view index here, a sensor id for
    capture frames).
    """
    maps = np.asarray(maps, dtype="<f4")
    if maps.ndim == 2:
        maps = maps[None]
    if maps.ndim != 3:
        raise ParameterError("container holds (H, W) or (C, H, W) arrays")
    c, h, w = maps.shape
    return _HEADER.pack(MAGIC, int(code), w, h, c) + maps.tobytes(order="C")


def unpack_container(blob):
    """Inverse of :func:`pack_container`: (code, (C, H, W) float64 array)."""
    if len(blob) < _HEADER.size:
        raise ParameterError("truncated heatmap container")
    magic, code, w, h, c = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise ParameterError("not a heatmap container")
    n = c * h * w
    if len(blob) != _HEADER.size + 4 * n:
        raise ParameterError("container payload size does not match its header")
    data = np.frombuffer(blob, dtype="<f4", count=n, offset=_HEADER.size).reshape(c, h, w)
    return code, data.astype(float)


def pack_maps(view, maps):
    if view not in VIEWS:
        raise ParameterError(f"view must be one of {VIEWS}")
    return pack_container(VIEWS.index(view), maps)


def unpack_maps(blob):
    code, data = unpack_container(blob)
    if code >= len(VIEWS):
        raise ParameterError(f"unknown view code {code}")
    return VIEWS[code], data
