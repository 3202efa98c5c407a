"""Reconstructability-driven balancing of a pose dataset.

A pose autoencoder scores every pose by how badly it reconstructs the pose's
joints (rare poses reconstruct worse). The score feeds a relevance weight
for the regression loss and picks tail "anchor" codes, between which new
tail poses are synthesized by blending jittered anchors in latent space.

:class:`PcaAutoencoder` is the reference autoencoder; anything exposing
``latent_dim``, ``encode``, ``decode`` and ``decode_vjp`` can be used instead.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol

import numpy as np
from .body import ParameterError, forward

log = logging.getLogger(__name__)

VARIANTS = ("exp1p", "sigmoid", "exp_clamped")
MODES = ("slerp", "lerp", "random")


class Autoencoder(Protocol):
    latent_dim: int

    def encode(self, theta) -> np.ndarray: ...

    def decode(self, z) -> np.ndarray: ...

    def decode_vjp(self, z, g_theta) -> np.ndarray: ...


@dataclass(eq=False)
class PcaAutoencoder:
    """Linear autoencoder on flattened axis-angle poses.

    ``shrinkage`` > 0 applies a Wiener-style shrink ``v / (v + shrinkage)``
    to the codes on encoding, which biases reconstructions of poses far from
    the mean (the way a regularized VAE does). With the default of 0 this is
    a plain orthogonal projection.
    """
    mean: np.ndarray            # (3P,)
    components: np.ndarray      # (Z, 3P), orthonormal rows
    explained_variance: np.ndarray  # (Z,)
    shrinkage: float = 0.0

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=float).reshape(-1)
        self.components = np.asarray(self.components, dtype=float).reshape(-1, self.mean.size)
        self.explained_variance = np.asarray(self.explained_variance, dtype=float).reshape(-1)

    @property
    def latent_dim(self):
        return self.components.shape[0]

    @property
    def n_joints(self):
        return self.mean.size // 3

    @property
    def _gain(self):
        if self.shrinkage <= 0:
            return np.ones(self.latent_dim)
        v = self.explained_variance
        return v / (v + self.shrinkage)

    def encode(self, theta):
        theta = np.asarray(theta, dtype=float)
        single = theta.size == self.mean.size
        z = (theta.reshape(-1, self.mean.size) - self.mean) @ self.components.T * self._gain
        return z[0] if single else z

    def decode(self, z):
        z = np.asarray(z, dtype=float)
        theta = self.mean + z @ self.components
        return theta.reshape(z.shape[:-1] + (self.n_joints, 3))

    def decode_vjp(self, z, g_theta):
        """Pull (P, 3) or batched (K, P, 3) pose cotangents back to codes."""
        g = np.asarray(g_theta, dtype=float)
        lead = g.shape[:-2] if g.ndim >= 2 else ()
        return g.reshape(lead + (-1,)) @ self.components.T

    @classmethod
    def articulated_identity(cls, n_joints, free_root=False):
        """Codes are the axis-angles themselves; the root joint is pinned unless `free_root`."""
        start = 0 if free_root else 3
        eye = np.eye(3 * n_joints)[start:]
        return cls(np.zeros(3 * n_joints), eye, np.ones(eye.shape[0]))

    def to_dict(self):
        return {"kind": "pca", "mean": self.mean.tolist(), "components": self.components.tolist(),
                "explained_variance": self.explained_variance.tolist(), "shrinkage": self.shrinkage}

    @classmethod
    def from_dict(cls, d):
        return cls(d["mean"], d["components"], d["explained_variance"], d.get("shrinkage", 0.0))

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))


def fit_pca(poses, Z=32, shrinkage=0.0):
    """Principal directions of a pose dataset, by descending explained variance."""
    X = np.asarray(poses, dtype=float)
    X = X.reshape(X.shape[0], -1)
    N, D = X.shape
    if N <= Z and Z < D:
        raise ParameterError(f"need more than Z={Z} poses, got {N}")
    mean = X.mean(axis=0)
    Xc = X - mean
    # eigh on the covariance keeps the spectrum exact for tiny datasets
    cov = Xc.T @ Xc / max(N - 1, 1)
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1]
    evals, evecs = evals[order], evecs[:, order]
    tol = max(evals[0], 0.0) * D * np.finfo(float).eps * 10 if evals.size else 0.0
    rank = int(np.sum(evals > max(tol, 1e-300)))
    keep = min(Z, D)
    if rank < keep:
        log.warning("pose data has rank %d < requested %d components; keeping %d", rank, keep, rank)
        keep = rank
    comps = evecs[:, :keep].T
    # deterministic sign: largest-magnitude entry positive
    signs = np.sign(comps[np.arange(keep), np.argmax(np.abs(comps), axis=1)]) if keep else np.ones(0)
    comps = comps * signs[:, None]
    return PcaAutoencoder(mean, comps, evals[:keep], shrinkage)


# ----------------------------------------------------------------- relevance

def _rest_joints(model, theta, beta):
    fp = forward(model, beta, theta)
    return fp.landmarks[model.joint_indices]


def reconstruction_error(model, ae, theta, beta_fixed=None):
    """Normalized joint reconstruction error of one pose.

    Both joint sets are divided by the bounding-box diagonal of the input
    pose's joints, then eps = sqrt(mean_j ||a_j - b_j||).
    """
    beta = np.zeros(model.n_shape) if beta_fixed is None else np.asarray(beta_fixed, dtype=float)
    theta = np.asarray(theta, dtype=float).reshape(model.n_joints, 3)
    if not np.all(np.isfinite(theta)):
        raise ParameterError("pose must be finite")
    recon = np.asarray(ae.decode(ae.encode(theta)), dtype=float).reshape(model.n_joints, 3)
    a = _rest_joints(model, theta, beta)
    b = _rest_joints(model, recon, beta)
    return _normalized_rmse(a, b)


def _normalized_rmse(a, b):
    diag = np.linalg.norm(a.max(axis=0) - a.min(axis=0))
    if not diag > 0:
        raise ParameterError("degenerate pose: zero joint bounding-box diagonal")
    d = np.linalg.norm((a - b) / diag, axis=1)
    return float(np.sqrt(d.mean()))


@dataclass
class RelevanceConfig:
    variant: str = "exp1p"
    sigma: float = 1.0
    clamp_max: float = 3.0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ParameterError(f"unknown relevance variant {self.variant!r}")
        if not self.sigma > 0:
            raise ParameterError("sigma must be positive")


def relevance(epsilon, config=None):
    """Per-sample loss weight from reconstruction error(s)."""
    config = config or RelevanceConfig()
    eps = np.asarray(epsilon, dtype=float)
    if np.any(eps < 0):
        raise ParameterError("reconstruction error must be non-negative")
    x = eps / config.sigma
    with np.errstate(over="ignore"):
        if config.variant == "exp1p":
            rho = 1.0 + np.exp(x)
        elif config.variant == "sigmoid":
            # 1 + 2 (sigmoid(x) - 0.5), written to stay finite for huge x
            rho = 1.0 + 2.0 * (0.5 * np.tanh(x / 2))
        else:
            rho = np.minimum(np.exp(x), config.clamp_max)
    return float(rho) if rho.ndim == 0 else rho


def relevance_config_for(errors, variant="exp1p"):
    """Relevance settings with sigma set to the dataset's mean error."""
    mean = float(np.mean(errors))
    return RelevanceConfig(variant=variant, sigma=mean if mean > 0 else 1.0)


# ------------------------------------------------------------------- anchors

@dataclass
class AnchorSet:
    anchors: np.ndarray            # (K, Z)
    source_ids: list = field(default_factory=list)
    threshold: float = float("nan")

    def __len__(self):
        return len(self.anchors)

    def to_dict(self):
        return {"anchors": np.asarray(self.anchors).tolist(), "source_ids": list(self.source_ids),
                "threshold": self.threshold}

    @classmethod
    def from_dict(cls, d):
        A = np.asarray(d["anchors"], dtype=float)
        return cls(A.reshape(len(A), -1) if len(A) else np.zeros((0, 0)),
                   list(d["source_ids"]), float(d["threshold"]))


def select_anchors(poses, ae, model, c=2.0, beta_fixed=None, ids=None, errors=None):
    """Tail poses whose error exceeds mean + c * std, encoded as anchor codes.

    Pass ``c=-np.inf`` to take every pose. Precomputed ``errors`` skip the
    scoring pass. Anchored ids should be kept out of training/evaluation splits.
    """
    poses = np.asarray(poses, dtype=float)
    if len(poses) == 0:
        raise ParameterError("empty pose dataset")
    ids = list(range(len(poses))) if ids is None else list(ids)
    if errors is None:
        errors = np.array([reconstruction_error(model, ae, th, beta_fixed) for th in poses])
    errors = np.asarray(errors, dtype=float)
    threshold = -np.inf if c == -np.inf else float(errors.mean() + c * errors.std())
    picked = np.flatnonzero(errors > threshold)
    codes, src = [], []
    for i in picked:
        z = np.asarray(ae.encode(poses[i]), dtype=float).reshape(-1)
        if any(np.array_equal(z, other) for other in codes):
            continue
        codes.append(z)
        src.append(ids[i])
    if not codes:
        log.warning("no pose exceeds the anchor threshold %.6g", threshold)
    anchors = np.array(codes).reshape(len(codes), ae.latent_dim)
    return AnchorSet(anchors, src, threshold)


# ------------------------------------------------------------------ sampling

@dataclass
class SamplerConfig:
    s: float | np.ndarray = 0.0   # per-dimension jitter std around anchors
    B: float = 1.0                # max blend factor
    mode: str = "slerp"

    def __post_init__(self):
        if not 0.0 <= self.B <= 1.0:
            raise ParameterError("B must lie in [0, 1]")
        if np.any(np.asarray(self.s) < 0):
            raise ParameterError("s must be non-negative")
        if self.mode not in MODES:
            raise ParameterError(f"unknown sampling mode {self.mode!r}")


def slerp(za, zb, b, return_flag=False):
    """Spherical interpolation whose radius moves linearly from |za| to |zb|.

    Falls back to linear interpolation for (anti)parallel inputs; the
    fallback is reported when ``return_flag`` is set.
    """
    za = np.asarray(za, dtype=float)
    zb = np.asarray(zb, dtype=float)
    na, nb = np.linalg.norm(za), np.linalg.norm(zb)
    if na == 0 or nb == 0:
        raise ParameterError("slerp endpoints must be non-zero")
    ua, ub = za / na, zb / nb
    cos_omega = float(np.clip(ua @ ub, -1.0, 1.0))
    omega = math.acos(cos_omega)
    if omega < 1e-7 or math.pi - omega < 1e-7:
        out = (1 - b) * za + b * zb
        return (out, True) if return_flag else out
    so = math.sin(omega)
    direction = (math.sin((1 - b) * omega) * ua + math.sin(b * omega) * ub) / so
    out = ((1 - b) * na + b * nb) * direction
    return (out, False) if return_flag else out


def _pick_pair(rng, n):
    i = int(rng.integers(n))
    j = int(rng.integers(n - 1))
    return i, j + (j >= i)


def sample_latent(anchors, config, rng, latent_std=None):
    """One latent code drawn per the sampler config."""
    if config.mode == "random":
        A = np.asarray(anchors.anchors if isinstance(anchors, AnchorSet) else anchors)
        std = np.ones(A.shape[1]) if latent_std is None else np.asarray(latent_std)
        return rng.normal(size=std.shape) * std
    A = np.asarray(anchors.anchors if isinstance(anchors, AnchorSet) else anchors)
    if len(A) < 2:
        raise ParameterError("blend sampling needs at least two anchors")
    i, j = _pick_pair(rng, len(A))
    s = np.broadcast_to(np.asarray(config.s, dtype=float), A.shape[1:])
    zi = A[i] + rng.normal(size=s.shape) * s
    zj = A[j] + rng.normal(size=s.shape) * s
    b = rng.uniform(0.0, config.B) if config.B > 0 else 0.0
    if config.mode == "lerp":
        return (1 - b) * zi + b * zj
    return slerp(zi, zj, b)


def sample_tail(anchors, ae, config, rng, latent_std=None):
    """Decode one synthetic tail pose; 'random' mode ignores the anchors."""
    z = sample_latent(anchors, config, rng, latent_std)
    return np.asarray(ae.decode(z))


def default_jitter(ae, fraction=0.1):
    """Anchor jitter std: a fraction of the per-dimension latent std."""
    var = getattr(ae, "explained_variance", None)
    if var is None:
        return fraction
    gain = getattr(ae, "_gain", 1.0)
    return fraction * np.sqrt(np.asarray(var)) * gain


# ------------------------------------------------------------ synthesis metrics

def div_metric(samples_a, samples_b):
    """Mean distance between paired (re-encoded) samples of two equal subsets."""
    a = np.asarray(samples_a, dtype=float)
    b = np.asarray(samples_b, dtype=float)
    if a.shape != b.shape:
        raise ParameterError("DIV needs equal-size subsets")
    return float(np.mean(np.linalg.norm(a.reshape(len(a), -1) - b.reshape(len(b), -1), axis=1)))


def _psd_sqrt(S):
    w, V = np.linalg.eigh((S + S.T) / 2)
    return (V * np.sqrt(np.clip(w, 0, None))) @ V.T


def fid_metric(feats_real, feats_fake):
    """Frechet distance between Gaussians fitted to two feature sets."""
    X = np.asarray(feats_real, dtype=float)
    Y = np.asarray(feats_fake, dtype=float)
    if len(X) < 2 or len(Y) < 2:
        raise ParameterError("FID needs at least two samples per set")
    mu1, mu2 = X.mean(0), Y.mean(0)
    S1 = np.atleast_2d(np.cov(X, rowvar=False))
    S2 = np.atleast_2d(np.cov(Y, rowvar=False))
    # Tr((S1 S2)^1/2) = Tr((R S2 R)^1/2) with R = S1^1/2, which is symmetric PSD
    R = _psd_sqrt(S1)
    w = np.linalg.eigvalsh((R @ S2 @ R + (R @ S2 @ R).T) / 2)
    if np.any(w < -1e-8 * max(1.0, np.abs(w).max())):
        log.warning("FID covariance product not PSD; clipping %d eigenvalues", int(np.sum(w < 0)))
    tr_sqrt = np.sqrt(np.clip(w, 0, None)).sum()
    fid = float(np.sum((mu1 - mu2) ** 2) + np.trace(S1) + np.trace(S2) - 2 * tr_sqrt)
    return max(fid, 0.0)
