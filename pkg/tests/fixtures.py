"""Constructed datasets shared by the balance tests and the acceptance run."""
import numpy as np

from mocapsolve.balance import fit_pca


def long_tail_poses(model, rng, n_common=285, n_tail=15):
    """Mostly near-rest poses plus a small cluster of extreme arm/leg poses."""
    P = model.n_joints
    common = rng.normal(0, 0.08, (n_common, P, 3))
    common[:, 0] = 0
    names = model.joint_names
    limbs = [names.index(n) for n in ("l_shoulder", "r_shoulder", "l_hip", "r_hip")]
    tail = rng.normal(0, 0.08, (n_tail, P, 3))
    tail[:, 0] = 0
    for k in range(n_tail):
        for j in limbs:
            tail[k, j] += rng.choice([-1, 1]) * rng.uniform(0.9, 1.3) * np.eye(3)[rng.integers(3)]
    return np.concatenate([common, tail])


def shrunk_pca(poses, Z=8, shrinkage_fraction=1.0):
    """PCA whose encoder shrinks codes, so reconstruction worsens away from the mean.

    The shrinkage is a fraction of the largest explained variance; at 1.0 every
    direction keeps at most half of its code.
    """
    base = fit_pca(poses, Z)
    base.shrinkage = shrinkage_fraction * float(np.max(base.explained_variance))
    return base
