"""Accuracy and FD of a trained CAD model across prompted coherence.

Reads a CLI run directory, samples the same uniform label set at each c
and prints one row per grid point; with --guidance it sweeps the CA-CFG
rate at c=1 instead.

    python scripts/coherence_curve.py --run runs/reference --n 2000
    python scripts/coherence_curve.py --run runs/reference --guidance 0,1,2,5,10,20
"""

import argparse

import numpy as np

from cadlab.cli import _load_model
from cadlab.config import load_config
from cadlab.diffusion import GuidanceSpec
from cadlab.pipeline import generate_points, ring_spec, uniform_labels
from cadlab.metrics import evaluate
from cadlab.toydata import read_dataset_csv


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--run", required=True)
    ap.add_argument("--checkpoint", default="cad-s0")
    ap.add_argument("--n", type=int, default=2000)
    ap.add_argument("--steps", type=int, default=250)
    ap.add_argument("--points", type=int, default=8, help="coherence grid size")
    ap.add_argument("--guidance", help="comma-separated CA-CFG rates")
    args = ap.parse_args()
    model, std, _ = _load_model(args.run, args.checkpoint, "ema")
    spec = ring_spec(load_config(f"{args.run}/config.ini"))
    ref = read_dataset_csv(f"{args.run}/data/reference.csv")["x"]
    labels = uniform_labels(args.n, spec.n_classes)
    if args.guidance:
        axis = "omega"
        grid = [float(w) for w in args.guidance.split(",")]
        specs = [GuidanceSpec("ca-cfg", w) for w in grid]
    else:
        axis = "c"
        grid = np.linspace(0.0, 1.0, args.points)
        specs = [GuidanceSpec("none", 0.0, float(c)) for c in grid]
    print(f"{axis:<7} acc     fd       precision recall")
    for v, s in zip(grid, specs):
        rep = evaluate(ref, generate_points(model, std, labels, args.steps, s), labels, spec)
        print(f"{v:<7.3f} {rep.accuracy:.4f}  {rep.fd:.4f}   {rep.precision:.4f}    {rep.recall:.4f}", flush=True)


if __name__ == "__main__":
    main()
