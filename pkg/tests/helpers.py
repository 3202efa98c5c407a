"""Shared fixture builders for fitter-level tests."""
import numpy as np

from conftest import random_params
from mocapsolve.body import forward
from mocapsolve.fitter import FitProblem, default_prior


def synthetic_problem(model, seed, theta_range=0.5, outlier_fraction=0.0, outlier_distance=0.2):
    """Marker-only targets of a random body; optionally with fixed-size outliers.

    Returns (problem, true forward pass, displaced landmark indices).
    """
    rng = np.random.default_rng(seed)
    p = random_params(model, rng, theta_range)
    fp = forward(model, p.beta, p.theta, p.root_matrix, p.root_translation)
    targets = fp.landmarks.copy()
    targets[model.joint_indices] = np.nan
    markers = model.marker_indices
    bad = rng.choice(markers, int(round(outlier_fraction * len(markers))), replace=False)
    d = rng.normal(size=(len(bad), 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    targets[bad] += outlier_distance * d
    return FitProblem(model, default_prior(model), targets), fp, np.sort(bad)


def joint_error_mm(model, result, truth):
    p = result.params
    est = forward(model, p.beta, p.theta, p.root_matrix, p.root_translation).landmarks
    J = model.joint_indices
    return float(np.sqrt(np.mean(np.sum((est[J] - truth.landmarks[J]) ** 2, axis=1)))) * 1000


def marker_scene(model):
    """The 53 surface markers of the rest pose, standing on the floor."""
    from mocapsolve.body import BodyParams, landmarks
    rest = BodyParams(np.zeros(model.n_shape), np.zeros((model.n_joints, 3)))
    return landmarks(model, rest)[model.marker_indices]


def wand_tracks(sensors, rng, n=200, noise=0.0):
    """A wand waved through the capture volume, seen by every sensor in its own frame."""
    X = rng.uniform((-0.8, 0.3, -0.8), (0.8, 1.8, 0.8), (n, 3))
    tracks = []
    for s in sensors:
        local = (X - s.t) @ s.R + rng.normal(0.0, noise, X.shape)
        tracks.append({i: local[i] for i in range(n)})
    return X, tracks


def relative_extrinsics(sensors):
    """Each sensor's pose expressed in sensor 0's frame."""
    R0, t0 = sensors[0].R, sensors[0].t
    return [(R0.T @ s.R, R0.T @ (s.t - t0)) for s in sensors]
