"""Axis-angle helpers shared by the body model, fitter and calibration code."""
import math

import numpy as np

# Below this angle the trigonometric coefficients switch to Taylor series.
# The series keep terms up to t^4, so the truncation error is O(t^6).
SERIES_ANGLE = 1e-3


def hat(w):
    """Skew-symmetric cross-product matrices for (..., 3) vectors."""
    w = np.asarray(w, dtype=float)
    K = np.zeros(w.shape[:-1] + (3, 3))
    K[..., 0, 1] = -w[..., 2]
    K[..., 0, 2] = w[..., 1]
    K[..., 1, 0] = w[..., 2]
    K[..., 1, 2] = -w[..., 0]
    K[..., 2, 0] = -w[..., 1]
    K[..., 2, 1] = w[..., 0]
    return K


_E = hat(np.eye(3))  # _E[k] = hat(e_k)


def _coefficients(t):
    """a = sin t / t, b = (1 - cos t) / t^2 and their derivatives divided by t."""
    t = np.asarray(t, dtype=float)
    small = t < SERIES_ANGLE
    ts = np.where(small, 1.0, t)  # keep the closed forms finite where unused
    t2 = t * t
    s, c = np.sin(ts), np.cos(ts)
    a = np.where(small, 1 - t2 / 6 + t2 * t2 / 120, s / ts)
    b = np.where(small, 0.5 - t2 / 24 + t2 * t2 / 720, (1 - c) / ts**2)
    da = np.where(small, -1 / 3 + t2 / 30 - t2 * t2 / 840, (ts * c - s) / ts**3)
    db = np.where(small, -1 / 12 + t2 / 180 - t2 * t2 / 6720, (ts * s - 2 + 2 * c) / ts**4)
    return a, b, da, db


def rodrigues(w):
    """Rotation matrices (..., 3, 3) from axis-angle vectors (..., 3)."""
    w = np.asarray(w, dtype=float)
    t = np.linalg.norm(w, axis=-1)
    a, b, _, _ = _coefficients(t)
    K = hat(w)
    return np.eye(3) + a[..., None, None] * K + b[..., None, None] * (K @ K)


def rodrigues_with_jacobian(w):
    """Rotations and their partials dR/dw_k, shaped (..., 3, 3) and (..., 3, 3, 3).

    The last axis of the jacobian indexes k.
    """
    w = np.asarray(w, dtype=float)
    t = np.linalg.norm(w, axis=-1)
    a, b, da, db = _coefficients(t)
    K = hat(w)
    K2 = K @ K
    R = np.eye(3) + a[..., None, None] * K + b[..., None, None] * K2
    # leading axis k below, moved to the back at the end
    Kk = K[..., None, :, :]
    wk = w[..., :, None, None]
    dR = (
        a[..., None, None, None] * _E
        + b[..., None, None, None] * (_E @ Kk + Kk @ _E)
        + (da[..., None, None, None] * wk) * Kk
        + (db[..., None, None, None] * wk) * K2[..., None, :, :]
    )
    return R, np.moveaxis(dR, -3, -1)


def log_rotation(R):
    """Axis-angle vector of a single rotation matrix (angle in [0, pi])."""
    R = np.asarray(R, dtype=float)
    cos_t = np.clip((np.trace(R) - 1) / 2, -1.0, 1.0)
    v = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    t = math.atan2(0.5 * np.linalg.norm(v), cos_t)  # better conditioned than arccos near 0, pi
    if t < 1e-6:
        return v / 2
    if np.pi - t < 1e-4:
        # near pi the antisymmetric part vanishes; the symmetric part gives u u^T
        M = ((R + R.T) / 2 - cos_t * np.eye(3)) / (1 - cos_t)
        k = int(np.argmax(np.diag(M)))
        axis = M[:, k] / np.sqrt(max(M[k, k], 1e-300))
        axis /= np.linalg.norm(axis)
        if axis @ v < 0:
            axis = -axis
        return axis * t
    return v * (t / (2 * np.sin(t)))


def is_rotation(R, atol=1e-6):
    R = np.asarray(R, dtype=float)
    if R.shape[-2:] != (3, 3):
        return False
    eye = np.broadcast_to(np.eye(3), R.shape)
    ortho = np.allclose(np.swapaxes(R, -1, -2) @ R, eye, atol=atol)
    return bool(ortho and np.allclose(np.linalg.det(R), 1.0, atol=atol))


def kabsch(src, dst):
    """Rigid (R, t) minimizing sum ||R src_i + t - dst_i||^2."""
    src = np.asarray(src, dtype=float)
    dst = np.asarray(dst, dtype=float)
    cs, cd = src.mean(axis=0), dst.mean(axis=0)
    H = (src - cs).T @ (dst - cd)
    U, _, Vt = np.linalg.svd(H)
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(Vt.T @ U.T)) or 1.0])
    R = Vt.T @ D @ U.T
    return R, cd - R @ cs


def rotation_between(a, b):
    """Smallest rotation taking unit vector a onto unit vector b."""
    a = np.asarray(a, dtype=float) / np.linalg.norm(a)
    b = np.asarray(b, dtype=float) / np.linalg.norm(b)
    axis = np.cross(a, b)
    s = np.linalg.norm(axis)
    c = float(a @ b)
    if s < 1e-15:
        if c > 0:
            return np.eye(3)
        # antiparallel: rotate by pi about any axis orthogonal to a
        perp = np.cross(a, [1.0, 0.0, 0.0])
        if np.linalg.norm(perp) < 1e-6:
            perp = np.cross(a, [0.0, 1.0, 0.0])
        return rodrigues(np.pi * perp / np.linalg.norm(perp))
    return rodrigues(axis / s * np.arctan2(s, c))
