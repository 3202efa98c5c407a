"""Training-time augmentation of body parameters and corruption of marker frames."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from .body import ParameterError, landmarks

STAGES = ("shape_aug", "flip", "occlude", "ghost", "shift")


@dataclass
class CorruptionConfig:
    p_shape_aug: float = 0.5
    p_flip: float = 0.5
    p_occlude: float = 0.7
    p_ghost: float = 0.7
    p_shift: float = 0.8
    occlude_range: tuple = (1, 5)
    ghost_count_range: tuple = (1, 3)
    shift_max: float = 0.05          # meters, half-width of the offset cube
    shift_count_range: tuple = (1, 10)
    shape_shift_coeffs: tuple = (0, 2)
    seed: int = 0

    def __post_init__(self):
        for name in ("p_shape_aug", "p_flip", "p_occlude", "p_ghost", "p_shift"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ParameterError(f"{name} must lie in [0, 1], got {p}")
        for name in ("occlude_range", "ghost_count_range", "shift_count_range", "shape_shift_coeffs"):
            lo, hi = getattr(self, name)
            if not 0 <= lo <= hi:
                raise ParameterError(f"{name} must satisfy 0 <= lo <= hi")
            setattr(self, name, (int(lo), int(hi)))
        if self.shift_max <= 0:
            raise ParameterError("shift_max must be positive")

    def probabilities(self):
        return (self.p_shape_aug, self.p_flip, self.p_occlude, self.p_ghost, self.p_shift)

    def to_dict(self):
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ParameterError(f"unknown corruption config keys: {sorted(unknown)}")
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in d.items()})


@dataclass
class MarkerFrame:
    points: np.ndarray               # (N, 3) meters
    labels: list                     # canonical name per point, None for ghosts
    frame_id: int = 0
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float).reshape(-1, 3)
        self.labels = list(self.labels) if self.labels is not None else [None] * len(self.points)
        if len(self.labels) != len(self.points):
            raise ParameterError("one label (or None) per point is required")
        named = [l for l in self.labels if l is not None]
        if len(named) != len(set(named)):
            raise ParameterError("labels must be unique within a frame")

    def __len__(self):
        return len(self.points)

    def copy(self):
        return MarkerFrame(self.points.copy(), list(self.labels), self.frame_id, dict(self.diagnostics))

    def to_dict(self):
        return {"frame_id": self.frame_id, "points": self.points.tolist(), "labels": list(self.labels)}

    @classmethod
    def from_dict(cls, d):
        return cls(d["points"], d.get("labels"), d.get("frame_id", 0))

    @classmethod
    def from_landmarks(cls, model, positions, frame_id=0):
        """Frame holding the marker rows of a landmark array."""
        idx = model.marker_indices
        return cls(np.asarray(positions)[idx], [model.landmark_names[i] for i in idx], frame_id)


# ------------------------------------------------------------ augmentations

def augment_shape(beta, rng, coeff_range=(0, 2)):
    """Uniform jitter of every coefficient, then a few coefficients redrawn from N(0, 1)."""
    beta = np.asarray(beta, dtype=float)
    out = beta + rng.uniform(-1.0, 1.0, size=beta.shape)
    k = int(rng.integers(coeff_range[0], coeff_range[1] + 1))
    k = min(k, beta.size)
    if k:
        chosen = rng.choice(beta.size, size=k, replace=False)
        out[chosen] = rng.standard_normal(k)
    return out


def flip_handedness(theta, pairs):
    """Swap left/right joint rotations and mirror all of them across x = 0.

    ``pairs`` is the model's ((left, right), ...) joint index metadata.
    """
    if not pairs:
        raise ParameterError("flip needs left/right joint pair metadata")
    theta = np.asarray(theta, dtype=float)
    out = theta.copy()
    for left, right in pairs:
        out[left], out[right] = theta[right], theta[left]
    # reflecting through the yz-plane maps an axis-angle (x, y, z) to (x, -y, -z)
    out[:, 1:] *= -1
    return out


def mirror_points(points):
    p = np.array(points, dtype=float)
    p[..., 0] *= -1
    return p


# -------------------------------------------------------------- corruptions

def occlude(frame, rng, count_range):
    """Drop k ~ U{lo..hi} distinct points; dropped labels land in diagnostics."""
    lo, hi = count_range
    if not 0 <= lo <= hi <= len(frame):
        raise ParameterError(f"occlusion range {count_range} invalid for {len(frame)} points")
    k = int(rng.integers(lo, hi + 1))
    out = frame.copy()
    if k == 0:
        out.diagnostics["occluded"] = []
        return out
    drop = np.sort(rng.choice(len(frame), size=k, replace=False))
    keep = np.setdiff1d(np.arange(len(frame)), drop)
    out.points = frame.points[keep]
    out.labels = [frame.labels[i] for i in keep]
    out.diagnostics["occluded"] = [frame.labels[i] for i in drop]
    out.diagnostics["occluded_indices"] = drop.tolist()
    return out


def ghost_distribution(points):
    """Median center and sample covariance, jittered if singular."""
    pts = np.asarray(points, dtype=float)
    mu = np.median(pts, axis=0)
    cov = np.cov(pts, rowvar=False)
    degenerate = bool(np.linalg.matrix_rank(cov) < 3 or np.linalg.eigvalsh(cov)[0] <= 0)
    if degenerate:
        cov = cov + 1e-6 * np.eye(3)
    return mu, cov, degenerate


def ghost(frame, rng, count_range):
    """Append unlabeled points drawn from N(median, sample covariance) of the frame."""
    lo, hi = count_range
    if not 0 <= lo <= hi:
        raise ParameterError(f"ghost count range {count_range} invalid")
    k = int(rng.integers(lo, hi + 1))
    out = frame.copy()
    if k == 0:
        out.diagnostics["ghosts"] = 0
        return out
    if len(frame) < 4:
        raise ParameterError("ghost sampling needs at least 4 points")
    mu, cov, degenerate = ghost_distribution(frame.points)
    g = rng.multivariate_normal(mu, cov, size=k, method="cholesky")
    out.points = np.vstack([frame.points, g])
    out.labels = list(frame.labels) + [None] * k
    out.diagnostics["ghosts"] = k
    out.diagnostics["ghost_indices"] = list(range(len(frame), len(frame) + k))
    if degenerate:
        out.diagnostics["ghost_jitter"] = True
    return out


def shift(frame, rng, count, max_offset):
    """Offset `count` distinct points by o ~ U(-max, max)^3."""
    if count > len(frame):
        raise ParameterError("cannot shift more points than the frame holds")
    out = frame.copy()
    idx = np.sort(rng.choice(len(frame), size=count, replace=False))
    offsets = rng.uniform(-max_offset, max_offset, size=(count, 3))
    out.points = frame.points.copy()
    out.points[idx] += offsets
    out.diagnostics["shifted_indices"] = idx.tolist()
    return out


def displace(frame, rng, fraction, distance):
    """Move round(fraction * N) distinct points by exactly `distance` in random directions.

    Unlike :func:`shift` the offset magnitude is fixed, which makes the
    outliers' size known for robustness experiments.
    """
    if not 0.0 <= fraction <= 1.0:
        raise ParameterError("fraction must lie in [0, 1]")
    k = int(round(fraction * len(frame)))
    out = frame.copy()
    idx = np.sort(rng.choice(len(frame), size=k, replace=False))
    d = rng.standard_normal((k, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    out.points = frame.points.copy()
    out.points[idx] += distance * d
    out.diagnostics["displaced_indices"] = idx.tolist()
    return out


# ---------------------------------------------------------------- pipeline

def apply_pipeline(params, frame, config, rng, model=None, symmetry=None):
    """Gate each stage by its own Bernoulli draw, in the fixed stage order.

    Flipping needs joint pair metadata, taken from `symmetry` or `model`.
    With a `model`, the frame is re-synthesized from the augmented parameters
    before the marker corruptions, so markers stay consistent with params.
    Returns (params', frame', provenance).
    """
    fired = {name: bool(rng.random() < p) for name, p in zip(STAGES, config.probabilities())}
    prov = {"fired": fired}
    beta, theta = np.array(params.beta, dtype=float), np.array(params.theta, dtype=float)
    if fired["shape_aug"]:
        beta = augment_shape(beta, rng, config.shape_shift_coeffs)
    if fired["flip"]:
        pairs = symmetry if symmetry is not None else (model.symmetry if model is not None else ())
        theta = flip_handedness(theta, pairs)
    new_params = replace(params, beta=beta, theta=theta)
    if model is not None and (fired["shape_aug"] or fired["flip"]):
        frame = MarkerFrame.from_landmarks(model, landmarks(model, new_params), frame.frame_id)
    frame = frame.copy()
    if fired["occlude"]:
        lo, hi = config.occlude_range
        frame = occlude(frame, rng, (min(lo, len(frame)), min(hi, len(frame))))
        prov["occluded"] = frame.diagnostics.get("occluded", [])
    if fired["ghost"]:
        frame = ghost(frame, rng, config.ghost_count_range)
        prov["ghost_indices"] = frame.diagnostics.get("ghost_indices", [])
    if fired["shift"]:
        lo, hi = config.shift_count_range
        n = min(int(rng.integers(lo, hi + 1)), len(frame))
        frame = shift(frame, rng, n, config.shift_max)
        prov["shifted_indices"] = frame.diagnostics["shifted_indices"]
    return new_params, frame, prov

