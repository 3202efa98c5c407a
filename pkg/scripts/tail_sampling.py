"""Compare anchor-blended tail sampling against plain latent sampling.

    python scripts/tail_sampling.py --samples 500

Builds the long-tailed pose fixture, fits a shrinking PCA autoencoder,
selects anchors and reports the mean reconstruction error of poses drawn
in each sampling mode.
"""
import argparse
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "tests"))

from fixtures import long_tail_poses, shrunk_pca  # noqa: E402
from mocapsolve.balance import MODES, SamplerConfig, reconstruction_error, sample_tail, select_anchors  # noqa: E402
from mocapsolve.body import load_model  # noqa: E402


@dataclass
class TailConfig:
    samples: int = 500
    seed: int = 0
    latent_dim: int = 8
    shrinkage_fraction: float = 1.0
    jitter_fraction: float = 0.1
    anchor_sigmas: float = 2.0


def run(cfg):
    model = load_model()
    poses = long_tail_poses(model, np.random.default_rng(cfg.seed))
    ae = shrunk_pca(poses, cfg.latent_dim, cfg.shrinkage_fraction)
    data_eps = np.array([reconstruction_error(model, ae, th) for th in poses])
    anchors = select_anchors(poses, ae, model, c=cfg.anchor_sigmas, errors=data_eps)
    print(f"{len(poses)} poses, data mean eps {data_eps.mean():.4f}, "
          f"{len(anchors)} anchors above {anchors.threshold:.4f}: ids {anchors.source_ids}")
    std = np.sqrt(ae.explained_variance) * ae._gain
    out = {}
    for mode in MODES:
        rng = np.random.default_rng(cfg.seed + 1)
        sampler = SamplerConfig(s=cfg.jitter_fraction * std, mode=mode)
        eps = [reconstruction_error(model, ae, sample_tail(anchors, ae, sampler, rng, std))
               for _ in range(cfg.samples)]
        out[mode] = float(np.mean(eps))
        print(f"{mode:>6}: mean eps {out[mode]:.4f} over {cfg.samples} samples")
    return out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    d = TailConfig()
    ap.add_argument("--samples", type=int, default=d.samples)
    ap.add_argument("--seed", type=int, default=d.seed)
    ap.add_argument("--latent-dim", type=int, default=d.latent_dim)
    ap.add_argument("--shrinkage-fraction", type=float, default=d.shrinkage_fraction)
    a = ap.parse_args()
    run(TailConfig(a.samples, a.seed, a.latent_dim, a.shrinkage_fraction))


if __name__ == "__main__":
    main()
