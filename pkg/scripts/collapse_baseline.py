"""Embedding-collapse ratio D(c=0)/D(c=1) at random init, and optionally after training.

D(c) is the mean pairwise distance between the class embeddings h(y, c).
At init the ratio sits near 1 for every seed; training with coherence
conditioning drives it down.

    python scripts/collapse_baseline.py --seeds 10
    python scripts/collapse_baseline.py --run runs/reference --checkpoint cad-s0
"""

import argparse

import numpy as np

from cadlab.cli import _load_model
from cadlab.config import ExperimentConfig
from cadlab.denoiser import Denoiser, collapse_probe
from cadlab.pipeline import denoiser_config


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, default=10)
    ap.add_argument("--run", help="run directory with a trained checkpoint")
    ap.add_argument("--checkpoint", default="cad-s0")
    ap.add_argument("--grid", type=int, default=11, help="number of c values for the full probe")
    args = ap.parse_args()
    cfg = denoiser_config(ExperimentConfig())
    ratios = []
    for seed in range(args.seeds):
        p = collapse_probe(Denoiser.init(cfg, seed), [0.0, 1.0])
        ratios.append(p[0] / p[1])
        print(f"init seed {seed:<3} D(0)={p[0]:.4f} D(1)={p[1]:.4f} ratio={ratios[-1]:.3f}")
    print(f"init ratio min {min(ratios):.3f} max {max(ratios):.3f} mean {np.mean(ratios):.3f}")
    if args.run:
        model, _, _ = _load_model(args.run, args.checkpoint, "ema")
        grid = np.linspace(0.0, 1.0, args.grid)
        probe = collapse_probe(model, grid)
        for c, d in zip(grid, probe):
            print(f"trained c={c:.2f} D={d:.4f}")
        print(f"trained ratio {probe[0] / probe[-1]:.3f}")


if __name__ == "__main__":
    main()
