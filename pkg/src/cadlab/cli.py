"""Command line: simulate, train, sample, eval, sweep.

All commands share one run directory::

    runs/<name>/
        manifest.json  config.ini
        data/  checkpoints/  samples/  metrics/  plots/

Existing files are never overwritten; a command that would clobber an
output fails instead.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, ExperimentConfig, dump_config, load_config
from .denoiser import Denoiser
from .diffusion import GuidanceSpec, check_guidance, read_samples_csv, write_loss_csv, write_samples_csv
from .manifest import Manifest, RunError, sha256_file, timestamp
from .metrics import evaluate, write_report
from .ndtensor import checkpoint
from .noisesim import filter_threshold
from .pipeline import (
    build_view,
    denoiser_config,
    generate_points,
    ring_spec,
    simulate,
    train_config,
    uniform_labels,
)
from .diffusion import train as run_training
from .toydata import Standardizer, read_dataset_csv, write_dataset_csv

log = logging.getLogger("cadlab")

SUBDIRS = ("data", "checkpoints", "samples", "metrics", "plots")


# helpers -----------------------------------------------------------------


def _run_config(run: Path, override: str | None, seed: int | None) -> ExperimentConfig:
    cfg = load_config(override) if override else load_config(run / "config.ini")
    if seed is not None:
        cfg.run.seed = seed
    return cfg


def _provenance(args, cfg: ExperimentConfig) -> dict:
    return {"config": dump_config(cfg), "started": getattr(args, "started", None), "argv": getattr(args, "argv", [])}


def _checkpoint_name(regime: str, seed: int) -> str:
    return f"{regime}-s{seed}"


def _fresh(path: Path) -> Path:
    if path.exists():
        raise RunError(f"refusing to overwrite existing output {path}")
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def _load_model(run: Path, name: str, weights: str) -> tuple[Denoiser, Standardizer, dict]:
    ckdir = run / "checkpoints" / name
    meta_path = ckdir / "model.json"
    if not meta_path.exists():
        raise RunError(f"no checkpoint {name!r} in {run} (train first)")
    meta = json.loads(meta_path.read_text())
    from .denoiser import DenoiserConfig

    model = Denoiser.init(DenoiserConfig(**meta["denoiser"]), 0, meta["regime"], meta["cond_dropout"])
    model = model.with_arrays(checkpoint.load(ckdir / f"{weights}.ckpt"))
    std = Standardizer(np.array(meta["standardizer"]["mean"]), np.array(meta["standardizer"]["scale"]))
    return model, std, meta


def _parse_labels(text: str, n: int, n_classes: int) -> np.ndarray:
    if text.strip() == "uniform":
        return uniform_labels(n, n_classes)
    ids = [int(v) for v in text.split(",") if v.strip()]
    if not ids or any(not 0 <= v < n_classes for v in ids):
        raise ConfigError(f"sample.labels: ids must lie in [0, {n_classes})")
    return np.resize(np.array(ids, dtype=np.int64), n)


def _parse_grid(text: str) -> list[float]:
    try:
        grid = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"sweep.grid: cannot parse {text!r}") from None
    if not grid:
        raise ConfigError("sweep.grid: empty grid")
    return grid


def _fmt_value(v: float) -> str:
    return f"{v:g}".replace("-", "m")


# commands --------------------------------------------------------------------


def cmd_simulate(args) -> Path:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.run.seed = args.seed
    run = Path(args.out) / (args.name or cfg.run.name)
    if run.exists() and any(run.iterdir()):
        raise RunError(f"run directory {run} already exists")
    for sub in SUBDIRS:
        (run / sub).mkdir(parents=True, exist_ok=True)
    (run / "config.ini").write_text(dump_config(cfg))
    manifest = Manifest.create(run, cfg, __version__)

    data = simulate(cfg)
    rec = data.record
    write_dataset_csv(run / "data/clean.csv", data.clean.x, data.clean.y)
    write_dataset_csv(run / "data/corrupted.csv", data.clean.x, rec.clean_label, rec.noisy_label, rec.alpha, rec.u, rec.coherence)
    write_dataset_csv(run / "data/reference.csv", data.reference.x, data.reference.y)

    hist, edges = np.histogram(rec.coherence, bins=10, range=(0.0, 1.0))
    stats = {
        "n": int(len(rec.u)),
        "n_classes": cfg.data.n_classes,
        "beta": cfg.noise.beta,
        "kappa": cfg.noise.kappa,
        "flip_rate": rec.flip_rate,
        "mean_alpha": float(rec.alpha.mean()) if len(rec.u) else 0.0,
        "coherence_histogram": {"edges": edges.tolist(), "counts": hist.tolist()},
    }
    (run / "data/stats.json").write_text(json.dumps(stats, indent=2, sort_keys=True) + "\n")
    manifest.dataset_digest = sha256_file(run / "data/corrupted.csv")
    manifest.record(
        "simulate",
        ["config.ini", "data/clean.csv", "data/corrupted.csv", "data/reference.csv", "data/stats.json"],
        info={"flip_rate": rec.flip_rate, "n": stats["n"]},
        **_provenance(args, cfg),
    )
    log.info("simulated %d samples, flip rate %.4f -> %s", stats["n"], rec.flip_rate, run)
    return run


def cmd_train(args) -> Path:
    run = Path(args.run)
    cfg = _run_config(run, args.config, args.seed)
    if args.regime:
        cfg.train.regime = args.regime
    if args.steps is not None:
        cfg.train.steps = args.steps
    cfg.validate()
    manifest = Manifest.load(run)
    d = read_dataset_csv(run / "data/corrupted.csv")
    if len(d["x"]) == 0:
        raise RunError("cannot train on an empty dataset")
    if cfg.train.regime != "baseline" and np.isnan(d["u"]).any():
        raise RunError(f"regime {cfg.train.regime} needs coherence scores but the dataset has none")
    view, std = build_view(d["x"], d["noisy_label"], d["coherence"], cfg.train.regime, cfg.noise.n_bins, cfg.noise.coherence_source)

    name = _checkpoint_name(cfg.train.regime, cfg.run.seed)
    ckdir = run / "checkpoints" / name
    if ckdir.exists():
        raise RunError(f"checkpoint {name} already exists in {run}")
    ckdir.mkdir(parents=True)
    model = Denoiser.init(denoiser_config(cfg), cfg.run.seed, cfg.train.regime, cfg.train.cond_dropout)
    checkpoint.save(ckdir / "init.ckpt", model.arrays())

    def progress(rec):
        if rec.step % (cfg.train.log_every * 20) == 0:
            log.info("step %d lr %.2e loss %.4f (smoothed %.4f)", rec.step, rec.lr, rec.loss, rec.ema_loss)

    result = run_training(model, view, train_config(cfg), progress)
    checkpoint.save(ckdir / "final.ckpt", result.model.arrays())
    checkpoint.save(ckdir / "ema.ckpt", result.ema.arrays())
    write_loss_csv(ckdir / "loss.csv", result.history)
    meta = {
        "regime": cfg.train.regime,
        "cond_dropout": cfg.train.cond_dropout,
        "seed": cfg.run.seed,
        "denoiser": denoiser_config(cfg).to_dict(),
        "train": dataclasses.asdict(train_config(cfg)),
        "standardizer": {"mean": std.mean.tolist(), "scale": std.scale.tolist()},
        "train_size": len(view),
        "source_size": view.source_size,
        "n_bins": cfg.noise.n_bins,
        "coherence_source": cfg.noise.coherence_source,
    }
    if cfg.train.regime == "filtered":
        meta["removed_bins"] = list(range(filter_threshold(cfg.noise.n_bins)))
    (ckdir / "model.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    rel = f"checkpoints/{name}"
    manifest.record(
        "train",
        [f"{rel}/{f}" for f in ("init.ckpt", "final.ckpt", "ema.ckpt", "loss.csv", "model.json")],
        info={
            "checkpoint": name,
            "train_size": len(view),
            "source_size": view.source_size,
            "removed_bins": meta.get("removed_bins", []),
            "final_loss": result.history[-1].ema_loss if result.history else None,
        },
        **_provenance(args, cfg),
    )
    log.info("trained %s on %d samples -> %s", name, len(view), ckdir)
    return ckdir


def _guidance(cfg: ExperimentConfig) -> GuidanceSpec:
    s = cfg.sample
    return GuidanceSpec(s.guidance, s.omega, s.coherence)


def _apply_sample_overrides(cfg: ExperimentConfig, args) -> None:
    s = cfg.sample
    for key in ("n", "steps", "eta", "guidance", "omega", "coherence", "labels", "weights"):
        v = getattr(args, key, None)
        if v is not None:
            setattr(s, key, v)
    if getattr(args, "sampler", None):
        s.eta = 0.0 if args.sampler == "ddim" else 1.0 if args.eta is None else args.eta
    cfg.validate()


def cmd_sample(args) -> Path:
    run = Path(args.run)
    cfg = _run_config(run, args.config, args.seed)
    _apply_sample_overrides(cfg, args)
    manifest = Manifest.load(run)
    name = args.checkpoint or _checkpoint_name(cfg.train.regime, cfg.run.seed)
    model, std, _ = _load_model(run, name, cfg.sample.weights)
    spec = _guidance(cfg)
    check_guidance(model, spec)
    s = cfg.sample
    tag = args.tag or (
        f"{name}_{s.guidance}_w{_fmt_value(s.omega)}_c{_fmt_value(s.coherence)}_eta{_fmt_value(s.eta)}_n{s.n}_s{s.steps}"
    )
    out = _fresh(run / "samples" / f"{tag}.csv")
    labels = _parse_labels(s.labels, s.n, model.config.n_classes)
    pts = generate_points(model, std, labels, s.steps, spec, s.eta, cfg.run.seed, cfg.train.schedule)
    coh = s.coherence if spec.mode != "ca-cfg" else 1.0
    write_samples_csv(out, pts, labels, coh)
    manifest.record(
        "sample",
        [f"samples/{tag}.csv"],
        info={"checkpoint": name, "weights": s.weights, "steps": s.steps, "eta": s.eta, "guidance": s.guidance, "omega": s.omega, "coherence": s.coherence, "n": s.n},
        **_provenance(args, cfg),
    )
    log.info("wrote %d samples -> %s", len(pts), out)
    return out


def cmd_eval(args) -> Path:
    run = Path(args.run)
    cfg = _run_config(run, args.config, args.seed)
    manifest = Manifest.load(run)
    samples_path = Path(args.samples)
    if not samples_path.is_absolute() and not samples_path.exists():
        samples_path = run / "samples" / (args.samples if args.samples.endswith(".csv") else f"{args.samples}.csv")
    if not samples_path.exists():
        raise RunError(f"samples file {samples_path} not found")
    ref_path = Path(args.reference) if args.reference else run / "data/reference.csv"
    if not ref_path.exists():
        raise RunError(f"reference dataset {ref_path} not found")
    pts, labels, _ = read_samples_csv(samples_path)
    if len(pts) == 0:
        raise RunError("samples file is empty; nothing to evaluate")
    ref = read_dataset_csv(ref_path)
    k = args.k or cfg.eval.k
    report = evaluate(ref["x"], pts, labels, ring_spec(cfg), k)
    tag = samples_path.stem
    csv_out = _fresh(run / "metrics" / f"{tag}.csv")
    txt_out = _fresh(run / "metrics" / f"{tag}.txt")
    write_report(csv_out, txt_out, report)
    manifest.record("eval", [f"metrics/{tag}.csv", f"metrics/{tag}.txt"], info={"samples": str(samples_path), "reference": str(ref_path), "fd": report.fd, "accuracy": report.accuracy}, **_provenance(args, cfg))
    sys.stdout.write(report.text())
    return csv_out


def sweep_rows(model, std, cfg: ExperimentConfig, axis: str, grid: list[float], reference_x, spec_ring) -> list[list[float]]:
    s = cfg.sample
    labels = _parse_labels(s.labels, s.n, model.config.n_classes)
    rows = []
    for value in grid:
        if axis == "coherence":
            g = GuidanceSpec("none", 0.0, value)
        else:
            g = GuidanceSpec("ca-cfg" if model.regime == "cad" else "cfg", value, 1.0)
        pts = generate_points(model, std, labels, s.steps, g, s.eta, cfg.run.seed, cfg.train.schedule)
        rep = evaluate(reference_x, pts, labels, spec_ring, cfg.eval.k)
        rows.append([value, rep.fd, rep.accuracy, rep.precision, rep.recall, rep.density, rep.coverage])
    return rows


def plot_sweep(path: Path, axis: str, rows: list[list[float]]) -> bool:
    """Two-axis line plot (FD left, accuracy right) as SVG; returns False if plotting failed."""
    try:
        import matplotlib

        matplotlib.use("Agg")
        matplotlib.rcParams["svg.hashsalt"] = "cadlab"
        import matplotlib.pyplot as plt

        arr = np.array(rows)
        fig, ax1 = plt.subplots(figsize=(5, 3.5))
        ax1.plot(arr[:, 0], arr[:, 1], "o-", color="tab:blue")
        ax1.set_xlabel("guidance rate" if axis == "guidance" else "coherence")
        ax1.set_ylabel("Frechet distance", color="tab:blue")
        ax2 = ax1.twinx()
        ax2.plot(arr[:, 0], arr[:, 2], "s--", color="tab:red")
        ax2.set_ylabel("accuracy", color="tab:red")
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)
        return True
    except Exception as err:  # plotting never gates the metrics
        log.warning("plot failed: %s", err)
        return False


def cmd_sweep(args) -> Path:
    run = Path(args.run)
    cfg = _run_config(run, args.config, args.seed)
    _apply_sample_overrides(cfg, args)
    if args.axis:
        cfg.sweep.axis = args.axis
    if args.grid is not None:
        cfg.sweep.grid = args.grid
    cfg.validate()
    grid = _parse_grid(cfg.sweep.grid)
    manifest = Manifest.load(run)
    name = args.checkpoint or _checkpoint_name(cfg.train.regime, cfg.run.seed)
    model, std, _ = _load_model(run, name, cfg.sample.weights)
    if cfg.sweep.axis == "coherence" and model.regime != "cad":
        raise RunError("a coherence sweep needs a coherence-conditioned checkpoint")
    axis = cfg.sweep.axis
    tag = args.tag or f"sweep_{axis}_{name}"
    csv_out = _fresh(run / "metrics" / f"{tag}.csv")
    svg_out = _fresh(run / "plots" / f"{tag}.svg")
    ref = read_dataset_csv(run / "data/reference.csv")
    rows = sweep_rows(model, std, cfg, axis, grid, ref["x"], ring_spec(cfg))
    col = "omega" if axis == "guidance" else "coherence"
    with open(csv_out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([col, "fd", "accuracy", "precision", "recall", "density", "coverage"])
        for r in rows:
            w.writerow([repr(float(v)) for v in r])
    outputs = [f"metrics/{tag}.csv"]
    if plot_sweep(svg_out, axis, rows):
        outputs.append(f"plots/{tag}.svg")
    manifest.record("sweep", outputs, info={"checkpoint": name, "axis": axis, "grid": grid}, **_provenance(args, cfg))
    log.info("sweep over %d %s values -> %s", len(grid), axis, csv_out)
    return csv_out


# entry point -----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cadlab", description="Coherence-aware diffusion experiments on toy data.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="generate clean data and simulate annotation noise")
    s.add_argument("--config", required=True)
    s.add_argument("--out", default="runs", help="parent directory for run directories")
    s.add_argument("--name", help="run directory name (default: run.name from config)")
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_simulate)

    def run_args(q):
        q.add_argument("--run", required=True, help="run directory")
        q.add_argument("--config", help="config overriding the run's config.ini")
        q.add_argument("--seed", type=int)

    t = sub.add_parser("train", help="train a denoiser under one regime")
    run_args(t)
    t.add_argument("--regime", choices=["baseline", "cad", "filtered", "weighted"])
    t.add_argument("--steps", type=int)
    t.set_defaults(func=cmd_train)

    def sample_args(q):
        q.add_argument("--checkpoint", help="checkpoint directory name, e.g. cad-s0")
        q.add_argument("--weights", choices=["ema", "final"])
        q.add_argument("--n", type=int)
        q.add_argument("--steps", type=int)
        q.add_argument("--sampler", choices=["ddim", "ddpm"])
        q.add_argument("--eta", type=float)
        q.add_argument("--guidance", choices=["none", "cfg", "ca-cfg"])
        q.add_argument("--omega", type=float)
        q.add_argument("--coherence", type=float)
        q.add_argument("--labels", help='"uniform" or comma-separated class ids')
        q.add_argument("--tag", help="output file stem")

    sm = sub.add_parser("sample", help="draw samples from a trained checkpoint")
    run_args(sm)
    sample_args(sm)
    sm.set_defaults(func=cmd_sample)

    e = sub.add_parser("eval", help="compute the metric battery for a samples file")
    run_args(e)
    e.add_argument("--samples", required=True, help="samples CSV path or tag under samples/")
    e.add_argument("--reference", help="reference dataset CSV (default data/reference.csv)")
    e.add_argument("--k", type=int)
    e.set_defaults(func=cmd_eval)

    w = sub.add_parser("sweep", help="metric curve over guidance rate or coherence")
    run_args(w)
    sample_args(w)
    w.add_argument("--axis", choices=["guidance", "coherence"])
    w.add_argument("--grid", help="comma-separated values")
    w.set_defaults(func=cmd_sweep)
    return p


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    args.argv, args.started = argv, timestamp()
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(levelname)s %(message)s")
    try:
        args.func(args)
    except (ConfigError, RunError, ValueError) as err:
        log.error("%s", err)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
