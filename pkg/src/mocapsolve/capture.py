"""Simulated depth-sensor marker capture: blob extraction, fusion, calibration.

Sensors follow the pinhole model. Pixels are (u, v) = (column, row) with
integer coordinates at pixel centers; images are indexed [v, u]. Extrinsics
map sensor coordinates to world: x_world = R @ x_sensor + t.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .body import ParameterError
from .corruption import MarkerFrame
from .rotations import hat, kabsch, rodrigues, rotation_between

log = logging.getLogger(__name__)

MAD_SCALE = 1.4826


@dataclass
class Sensor:
    K: np.ndarray
    R: np.ndarray = field(default_factory=lambda: np.eye(3))
    t: np.ndarray = field(default_factory=lambda: np.zeros(3))
    width: int = 1280
    height: int = 960

    def __post_init__(self):
        self.K = np.asarray(self.K, dtype=float)
        self.R = np.asarray(self.R, dtype=float)
        self.t = np.asarray(self.t, dtype=float).reshape(3)
        K = self.K
        if K.shape != (3, 3) or np.any(np.tril(K, -1) != 0) or K[0, 0] <= 0 or K[1, 1] <= 0:
            raise ParameterError("K must be upper triangular with positive focal lengths")

    @classmethod
    def looking_at(cls, eye, target, K, up=(0.0, 1.0, 0.0), width=1280, height=960):
        """Sensor at `eye` whose optical axis (+z) points at `target`, image rows down."""
        eye, target = np.asarray(eye, dtype=float), np.asarray(target, dtype=float)
        z = target - eye
        z /= np.linalg.norm(z)
        x = np.cross(z, np.asarray(up, dtype=float))
        x /= np.linalg.norm(x)
        y = np.cross(z, x)
        return cls(K, np.stack([x, y, z], axis=1), eye, width, height)

    def to_sensor(self, points):
        return (np.asarray(points, dtype=float) - self.t) @ self.R

    def to_world(self, points):
        return np.asarray(points, dtype=float) @ self.R.T + self.t

    def to_dict(self):
        return {"K": self.K.tolist(), "R": self.R.tolist(), "t": self.t.tolist(),
                "width": self.width, "height": self.height}

    @classmethod
    def from_dict(cls, d):
        return cls(d["K"], d.get("R", np.eye(3)), d.get("t", np.zeros(3)),
                   int(d.get("width", 1280)), int(d.get("height", 960)))


def intrinsics(focal, width, height):
    return np.array([[focal, 0.0, (width - 1) / 2], [0.0, focal, (height - 1) / 2], [0, 0, 1.0]])


@dataclass
class SensorFrame:
    ir: np.ndarray        # (H, W)
    depth: np.ndarray     # (H, W) meters, 0 = invalid
    timestamp: float = 0.0

    def __post_init__(self):
        if np.shape(self.ir) != np.shape(self.depth):
            raise ParameterError("infrared and depth images must be pixel-registered")


@dataclass
class MarkerObservation:
    position: np.ndarray   # world frame, meters
    sensor_id: int
    support: int           # depth samples that survived rejection

    def __post_init__(self):
        if self.support < 1:
            raise ParameterError("an observation needs at least one supporting sample")


def project(sensor, points_sensor):
    """Pixel (u, v) coordinates and depth of sensor-frame points."""
    p = np.atleast_2d(np.asarray(points_sensor, dtype=float))
    h = p @ sensor.K.T
    return h[:, :2] / h[:, 2:3], p[:, 2]


def unproject(sensor, pixel, depth):
    """Back-project pixel(s) to sensor-frame points whose z equals `depth`."""
    depth = np.asarray(depth, dtype=float)
    if np.any(~(depth > 0)):
        raise ParameterError("unprojection needs positive depth")
    px = np.atleast_2d(np.asarray(pixel, dtype=float))
    homog = np.column_stack([px, np.ones(len(px))])
    rays = np.linalg.solve(sensor.K, homog.T).T
    out = rays * np.reshape(depth, (-1, 1))
    return out[0] if np.ndim(pixel) == 1 else out


# -------------------------------------------------------------- simulation

@dataclass
class SimConfig:
    marker_radius: float = 0.0095   # meters
    core_fraction: float = 0.5      # disc fraction with undefined depth
    marker_ir: float = 1.0
    background_ir: float = 0.05
    background_depth: float | None = 6.0   # flat wall along the optical axis; None = no return
    depth_noise: float = 0.0        # meters, Gaussian on valid samples
    guard_px: float = 2.0           # discs closer than this to a nearer disc are hidden
    near: float = 0.1


def _disc_radius_px(sensor, depth, radius):
    return float(sensor.K[0, 0]) * radius / depth


def simulate_sensor(points_world, sensor, config=None, rng=None, timestamp=0.0):
    """Render markers as bright discs with a depth-less core and a valid rim.

    The rim carries the marker-center depth. A disc overlapping a nearer disc
    (plus the guard band) is left out entirely, so every blob maps to exactly
    one marker. Returns (SensorFrame, indices of rendered markers).
    """
    config = config or SimConfig()
    H, W = sensor.height, sensor.width
    ir = np.full((H, W), config.background_ir)
    depth = np.zeros((H, W)) if config.background_depth is None else \
        np.full((H, W), config.background_depth)
    pts = np.atleast_2d(np.asarray(points_world, dtype=float))
    if len(pts) == 0:
        return SensorFrame(ir, depth, timestamp), []
    ps = sensor.to_sensor(pts)
    uv, z = project(sensor, np.where(ps[:, 2:3] > config.near, ps, 1.0))
    front = ps[:, 2] > config.near
    radius = np.where(front, _disc_radius_px(sensor, np.maximum(ps[:, 2], config.near),
                                             config.marker_radius), 0.0)
    inside = front & (uv[:, 0] - radius >= 0) & (uv[:, 0] + radius <= W - 1) \
        & (uv[:, 1] - radius >= 0) & (uv[:, 1] + radius <= H - 1)
    cand = np.flatnonzero(inside)
    # nearest first; later discs that touch an accepted disc are hidden
    cand = cand[np.argsort(ps[cand, 2], kind="stable")]
    shown = []
    for i in cand:
        ok = all(np.hypot(*(uv[i] - uv[j])) > radius[i] + radius[j] + config.guard_px for j in shown)
        if ok:
            shown.append(i)
    for i in shown:
        r = radius[i]
        u0, u1 = int(np.floor(uv[i, 0] - r)), int(np.ceil(uv[i, 0] + r))
        v0, v1 = int(np.floor(uv[i, 1] - r)), int(np.ceil(uv[i, 1] + r))
        vv, uu = np.mgrid[v0:v1 + 1, u0:u1 + 1]
        d = np.hypot(uu - uv[i, 0], vv - uv[i, 1])
        disc = d <= r
        ir[vv[disc], uu[disc]] = config.marker_ir
        rim = disc & (d > config.core_fraction * r)
        depth[vv[disc], uu[disc]] = 0.0
        depth[vv[rim], uu[rim]] = z[i]
    if config.depth_noise > 0:
        rng = rng if rng is not None else np.random.default_rng()
        valid = depth > 0
        depth[valid] += rng.normal(0.0, config.depth_noise, size=int(valid.sum()))
        depth[depth < 0] = 0.0
    return SensorFrame(ir, depth, timestamp), sorted(int(i) for i in shown)


# -------------------------------------------------------------- extraction

_EIGHT = np.ones((3, 3), dtype=bool)


def extract_blobs(frame, threshold=0.5, min_area=3):
    """8-connected components of ir > threshold, as (rows, cols) index arrays."""
    mask = np.asarray(frame.ir) > threshold
    labels, n = ndimage.label(mask, structure=_EIGHT)
    if n == 0:
        return []
    blobs = []
    for sl_idx, sl in enumerate(ndimage.find_objects(labels), start=1):
        rows, cols = np.nonzero(labels[sl] == sl_idx)
        if len(rows) >= min_area:
            blobs.append((rows + sl[0].start, cols + sl[1].start))
    return blobs


def mad_inliers(values, factor=3.0):
    """Mask of values within factor * 1.4826 * MAD of the median."""
    v = np.asarray(values, dtype=float)
    med = np.median(v)
    dev = np.abs(v - med)
    return dev <= factor * MAD_SCALE * np.median(dev)


def blob_to_marker(frame, sensor, blob, sensor_id=0, diagnostics=None):
    """Average the blob's valid-depth samples after MAD rejection on z; None if unsupported."""
    rows, cols = blob
    d = np.asarray(frame.depth)[rows, cols]
    valid = d > 0
    if not np.any(valid):
        if diagnostics is not None:
            diagnostics["no_depth"] = diagnostics.get("no_depth", 0) + 1
        return None
    pts = unproject(sensor, np.column_stack([cols[valid], rows[valid]]), d[valid])
    pts = np.atleast_2d(pts)
    keep = mad_inliers(pts[:, 2])
    if diagnostics is not None:
        diagnostics["rejected"] = diagnostics.get("rejected", 0) + int((~keep).sum())
    centre = pts[keep].mean(axis=0)
    return MarkerObservation(sensor.to_world(centre), sensor_id, int(keep.sum()))


def observe(frame, sensor, sensor_id=0, threshold=0.5, min_area=3, diagnostics=None):
    out = []
    for blob in extract_blobs(frame, threshold, min_area):
        obs = blob_to_marker(frame, sensor, blob, sensor_id, diagnostics)
        if obs is not None:
            out.append(obs)
    return out


def fuse_and_cluster(observations, radius=0.01, frame_id=0, max_passes=100):
    """Greedy radius clustering of world points, iterated to a fixpoint.

    Input is sorted canonically first, so the result does not depend on the
    order observations arrive in. Returns an unlabeled MarkerFrame of centroids.
    """
    pts = np.array([np.asarray(getattr(o, "position", o), dtype=float) for o in observations])
    if len(pts) == 0:
        return MarkerFrame(np.zeros((0, 3)), [], frame_id)
    pts = pts[np.lexsort(pts.T[::-1])]
    labels, cents = _cluster_pass(pts, radius, None)
    for _ in range(max_passes):
        new_labels, new_cents = _cluster_pass(pts, radius, cents)
        if np.array_equal(new_labels, labels):
            break
        labels, cents = new_labels, new_cents
    out = np.array(cents)
    out = out[np.lexsort(out.T[::-1])]
    return MarkerFrame(out, [None] * len(out), frame_id)


def _cluster_pass(pts, radius, centroids):
    """Assign each point to the nearest centroid within radius, else open a cluster.

    Without `centroids` the centroids are grown incrementally as points join;
    with them, they stay fixed during the pass. Means are returned for the
    non-empty clusters, relabelled in order of first use.
    """
    grow = centroids is None
    cents = [] if grow else [np.asarray(c, dtype=float) for c in centroids]
    sums = [np.zeros(3) for _ in cents]
    counts = [0] * len(cents)
    labels = np.empty(len(pts), dtype=int)
    for i, p in enumerate(pts):
        k = -1
        if cents:
            d = np.linalg.norm(np.asarray(cents) - p, axis=1)
            k = int(np.argmin(d))
            if d[k] > radius:
                k = -1
        if k < 0:
            cents.append(p.copy())
            sums.append(np.zeros(3))
            counts.append(0)
            k = len(cents) - 1
        sums[k] = sums[k] + p
        counts[k] += 1
        if grow:
            cents[k] = sums[k] / counts[k]
        labels[i] = k
    order = list(dict.fromkeys(labels.tolist()))
    remap = {k: j for j, k in enumerate(order)}
    return np.array([remap[k] for k in labels]), [sums[k] / counts[k] for k in order]


# ------------------------------------------------------------- calibration

@dataclass
class CalibrationResult:
    rotations: list          # sensor -> world, sensor 0 is the identity
    translations: list
    wand: dict               # timestamp -> world position
    cost_history: list
    converged: bool


def _check_spread(points, what):
    c = np.asarray(points) - np.mean(points, axis=0)
    s = np.linalg.svd(c, compute_uv=False)
    if len(points) < 3 or s[1] <= 1e-9 * max(s[0], 1e-300):
        raise ParameterError(f"degenerate (collinear) wand path for {what}")


def calibrate_wand(tracks, max_iter=100, tol=1e-15):
    """Extrinsics from per-sensor single-marker wand tracks.

    ``tracks[k]`` maps timestamp -> 3D wand position in sensor k's frame;
    sensor 0 defines the world. Poses start from a rigid alignment against
    sensor 0 and are refined jointly with the wand positions by damped
    Gauss-Newton on the 3D residuals R_k p + t_k - X_t.
    """
    if len(tracks) < 1:
        raise ParameterError("no sensors")
    ref = tracks[0]
    Rs, ts = [np.eye(3)], [np.zeros(3)]
    for k in range(1, len(tracks)):
        common = sorted(set(ref) & set(tracks[k]))
        if len(common) < 3:
            raise ParameterError(f"sensor {k} shares fewer than 3 wand samples with sensor 0")
        src = np.array([tracks[k][s] for s in common])
        dst = np.array([ref[s] for s in common])
        _check_spread(src, f"sensor {k}")
        R, t = kabsch(src, dst)
        Rs.append(R)
        ts.append(t)

    stamps = sorted(set().union(*[set(tr) for tr in tracks]))
    sidx = {s: i for i, s in enumerate(stamps)}
    obs = [(k, sidx[s], np.asarray(p, dtype=float)) for k, tr in enumerate(tracks) for s, p in tr.items()]
    n_sensor = len(tracks) - 1
    n_pose = 6 * n_sensor

    def world_points(Rs, ts):
        X = np.zeros((len(stamps), 3))
        n = np.zeros(len(stamps))
        for k, i, p in obs:
            X[i] += Rs[k] @ p + ts[k]
            n[i] += 1
        return X / n[:, None]

    def residuals(Rs, ts, X):
        return np.concatenate([Rs[k] @ p + ts[k] - X[i] for k, i, p in obs])

    X = world_points(Rs, ts)
    r = residuals(Rs, ts, X)
    cost = 0.5 * float(r @ r)
    history = [cost]
    mu = 1e-6
    converged = False
    for _ in range(max_iter):
        n_par = n_pose + 3 * len(stamps)
        Jm = np.zeros((3 * len(obs), n_par))
        for row, (k, i, p) in enumerate(obs):
            sl = slice(3 * row, 3 * row + 3)
            if k > 0:
                c = 6 * (k - 1)
                Jm[sl, c:c + 3] = -hat(Rs[k] @ p)   # left perturbation exp(d) R
                Jm[sl, c + 3:c + 6] = np.eye(3)
            Jm[sl, n_pose + 3 * i:n_pose + 3 * i + 3] = -np.eye(3)
        A = Jm.T @ Jm
        g = Jm.T @ r
        if np.max(np.abs(g)) < 1e-14:
            converged = True
            break
        improved = False
        while mu < 1e10:
            step = -np.linalg.solve(A + mu * np.diag(np.diag(A) + 1e-12), g)
            R_new = list(Rs)
            t_new = list(ts)
            for k in range(1, len(tracks)):
                c = 6 * (k - 1)
                R_new[k] = rodrigues(step[c:c + 3]) @ Rs[k]
                t_new[k] = ts[k] + step[c + 3:c + 6]
            X_new = X + step[n_pose:].reshape(-1, 3)
            r_new = residuals(R_new, t_new, X_new)
            c_new = 0.5 * float(r_new @ r_new)
            if c_new <= cost:
                improved = True
                break
            mu *= 10
        if not improved:
            converged = True
            break
        drop = cost - c_new
        Rs, ts, X, r, cost = R_new, t_new, X_new, r_new, c_new
        history.append(cost)
        mu = max(mu / 10, 1e-12)
        if drop <= tol * max(cost, 1e-300) or cost < 1e-28:
            converged = True
            break
    return CalibrationResult(Rs, ts, {s: X[i] for s, i in sidx.items()}, history, converged)


# ---------------------------------------------------------------- gravity

def gravity_align(markers, tolerance=0.1):
    """Rotation and translation taking a floor Γ (3 markers) to the y = 0 plane.

    The corner is the vertex opposite the longest triangle side; up is
    long-edge x short-edge, flipped into the current +y hemisphere.
    Returns (R, t) to apply as x' = R x + t.
    """
    p = np.asarray(markers, dtype=float).reshape(3, 3)
    side = [np.linalg.norm(p[(i + 1) % 3] - p[(i + 2) % 3]) for i in range(3)]
    corner = int(np.argmax(side))
    a, b = p[(corner + 1) % 3] - p[corner], p[(corner + 2) % 3] - p[corner]
    la, lb = np.linalg.norm(a), np.linalg.norm(b)
    if abs(la - lb) <= tolerance * max(la, lb):
        raise ParameterError("edge lengths too similar to tell the long edge from the short one")
    long_e, short_e = (a, b) if la > lb else (b, a)
    up = np.cross(long_e, short_e)
    norm = np.linalg.norm(up)
    if norm == 0:
        raise ParameterError("floor markers are collinear")
    up /= norm
    if up[1] < 0:
        up = -up
    R = rotation_between(up, np.array([0.0, 1.0, 0.0]))
    t = np.array([0.0, -(R @ p[corner])[1], 0.0])
    return R, t
