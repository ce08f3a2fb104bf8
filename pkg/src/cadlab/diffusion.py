"""Continuous-time Gaussian diffusion: corruption, training loss, guidance and DDIM/DDPM sampling.

Time runs over [0, 1]; gamma(t) is the signal fraction, so
``x_t = sqrt(gamma) x + sqrt(1 - gamma) eps``.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal

import numpy as np

from .denoiser import Denoiser, predict_eps
from .ndtensor import (
    LrSchedule,
    NonFiniteGradientError,
    Tensor,
    ema_update,
    grad,
    init_optimizer,
    lr_at,
    optimizer_step,
    sqrt,
)
from .noisesim import DatasetView
from .seeding import rng_for

log = logging.getLogger(__name__)

GAMMA_EPS = 1e-5
REGIMES = ("baseline", "cad", "filtered", "weighted")
GUIDANCE_MODES = ("none", "cfg", "ca-cfg")


# noise schedule ------------------------------------------------------------


@dataclass(frozen=True)
class NoiseSchedule:
    """gamma(t) squeezed affinely into [1e-5, 1 - 1e-5] so it stays strictly decreasing."""

    kind: Literal["cosine", "linear"] = "cosine"

    def __post_init__(self):
        if self.kind not in ("cosine", "linear"):
            raise ValueError(f"unknown schedule kind {self.kind!r}")

    def raw(self, t):
        return 0.5 + self.centered(t)

    def centered(self, t):
        # raw gamma minus 1/2; cos^2(pi t / 2) - 1/2 = cos(pi t) / 2, which is exact at t = 1/2
        t = np.asarray(t, dtype=np.float64)
        return 0.5 * np.cos(np.pi * t) if self.kind == "cosine" else 0.5 - t

    def __call__(self, t):
        return gamma(t, self)


def gamma(t, schedule: NoiseSchedule = NoiseSchedule()):
    tt = np.asarray(t, dtype=np.float64)
    if np.any(tt < 0) or np.any(tt > 1):
        raise ValueError("t must lie in [0, 1]")
    # affine squeeze about the midpoint so gamma(1/2) stays exactly 1/2
    out = 0.5 + (1.0 - 2.0 * GAMMA_EPS) * schedule.centered(tt)
    return float(out) if out.ndim == 0 else out


def corrupt(x, t, eps, schedule: NoiseSchedule = NoiseSchedule(), g=None) -> np.ndarray:
    """sqrt(gamma) x + sqrt(1 - gamma) eps; ``t`` may be a scalar or one value per row.

    ``g`` overrides gamma(t) directly (used by tests that pin the signal fraction).
    """
    x = np.asarray(x, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if x.shape != eps.shape:
        raise ValueError(f"eps shape {eps.shape} != x shape {x.shape}")
    g = gamma(t, schedule) if g is None else np.asarray(g, dtype=np.float64)
    g = np.asarray(g)
    if g.ndim == 1 and x.ndim == 2:
        g = g[:, None]
    return np.sqrt(g) * x + np.sqrt(1.0 - g) * eps


# loss ------------------------------------------------------------------------


def diffusion_loss(
    model: Denoiser,
    x0: np.ndarray,
    y: np.ndarray,
    t: np.ndarray,
    eps: np.ndarray,
    regime: str,
    c: np.ndarray | None = None,
    weight: np.ndarray | None = None,
    norm: Literal["squared", "unsquared"] = "squared",
    schedule: NoiseSchedule = NoiseSchedule(),
) -> Tensor:
    """Batch mean of ||eps - eps_theta(x_t, t, y[, c])|| (squared by default).

    ``weighted`` multiplies each sample's term by its weight; ``cad`` passes
    the coherence to the model; ``baseline`` and ``filtered`` are identical
    here (filtering acts on the dataset view).
    """
    if regime not in REGIMES:
        raise ValueError(f"unknown regime {regime!r}")
    if regime == "cad" and c is None:
        raise ValueError("regime 'cad' needs coherence scores")
    if regime == "weighted" and weight is None:
        raise ValueError("regime 'weighted' needs loss weights")
    x_t = corrupt(x0, t, eps, schedule)
    pred = predict_eps(model, x_t, t, y, c if regime == "cad" else None)
    diff = Tensor(eps) - pred
    per = (diff * diff).sum(axis=1)
    if norm == "unsquared":
        per = sqrt(per)
    elif norm != "squared":
        raise ValueError(f"unknown norm {norm!r}")
    if regime == "weighted":
        per = per * Tensor(np.asarray(weight, dtype=np.float64))
    return per.mean()


# guidance --------------------------------------------------------------------


@dataclass(frozen=True)
class GuidanceSpec:
    """How to combine predictions at sampling time.

    ``coherence`` is the value fed to the conditional branch in ``none`` and
    ``cfg`` modes; ``ca-cfg`` always contrasts coherence 1 against 0.
    """

    mode: Literal["none", "cfg", "ca-cfg"] = "none"
    omega: float = 0.0
    coherence: float = 1.0
    null_class: int | None = None

    def __post_init__(self):
        if self.mode not in GUIDANCE_MODES:
            raise ValueError(f"unknown guidance mode {self.mode!r}")
        if self.omega < 0:
            raise ValueError("guidance rate must be >= 0")
        if not 0.0 <= self.coherence <= 1.0:
            raise ValueError("coherence must lie in [0, 1]")


def check_guidance(model: Denoiser, spec: GuidanceSpec) -> None:
    if spec.mode == "ca-cfg" and model.regime != "cad":
        raise ValueError(f"ca-cfg needs a coherence-conditioned model, got regime {model.regime!r}")
    if spec.mode == "cfg" and model.cond_dropout <= 0:
        raise ValueError("cfg needs a model trained with condition dropout (null class)")


def guided_eps(model: Denoiser, x_t, t, y, spec: GuidanceSpec) -> np.ndarray:
    """Guided noise estimate; with omega = 0 this is exactly the conditional prediction."""
    check_guidance(model, spec)
    cad = model.regime == "cad"
    if spec.mode == "ca-cfg":
        cond = predict_eps(model, x_t, t, y, 1.0).data
        if spec.omega == 0:
            return cond
        uncond = predict_eps(model, x_t, t, y, 0.0).data
    else:
        c = spec.coherence if cad else None
        cond = predict_eps(model, x_t, t, y, c).data
        if spec.mode == "none" or spec.omega == 0:
            return cond
        null = model.config.null_class if spec.null_class is None else spec.null_class
        uncond = predict_eps(model, x_t, t, np.full(len(cond), null), c).data
    return cond + spec.omega * (cond - uncond)


# sampling --------------------------------------------------------------------


def ddim_update(x_t, eps_hat, g_t, g_next, eta: float, z=None):
    """One step of the eta-family update given gamma at the current and next time.

    eta = 0 is deterministic DDIM, eta = 1 is ancestral DDPM.
    """
    x0_hat = (x_t - math.sqrt(1.0 - g_t) * eps_hat) / math.sqrt(g_t)
    sigma2 = eta**2 * (1.0 - g_next) / (1.0 - g_t) * (1.0 - g_t / g_next)
    sigma2 = max(sigma2, 0.0)
    x_next = math.sqrt(g_next) * x0_hat + math.sqrt(max(1.0 - g_next - sigma2, 0.0)) * eps_hat
    if sigma2 > 0:
        x_next = x_next + math.sqrt(sigma2) * z
    return x_next, x0_hat


def sampler_step(model, x_t, t: float, t_next: float, y, spec: GuidanceSpec, eta: float = 0.0, z=None, schedule=NoiseSchedule()):
    if not 0.0 <= t_next <= t <= 1.0:
        raise ValueError("need 0 <= t_next <= t <= 1")
    if not 0.0 <= eta <= 1.0:
        raise ValueError("eta must lie in [0, 1]")
    if t_next == t:
        return np.array(x_t, dtype=np.float64, copy=True)
    eps_hat = guided_eps(model, x_t, t, y, spec)
    if z is None and eta > 0:
        raise ValueError("stochastic steps need noise z")
    x_next, _ = ddim_update(np.asarray(x_t), eps_hat, gamma(t, schedule), gamma(t_next, schedule), eta, z)
    return x_next


def chain_noise(seed: int, n: int, steps: int, dim: int) -> np.ndarray:
    """Per-chain noise of shape (steps + 1, n, dim); chain i depends only on (seed, i)."""
    out = np.empty((steps + 1, n, dim))
    for i in range(n):
        out[:, i, :] = rng_for(seed, "sample-chain", i).standard_normal((steps + 1, dim))
    return out


def sample(
    model: Denoiser,
    labels,
    steps: int,
    spec: GuidanceSpec = GuidanceSpec(),
    eta: float = 0.0,
    seed: int = 0,
    schedule: NoiseSchedule = NoiseSchedule(),
) -> np.ndarray:
    """Draw one point per entry of ``labels`` on a uniform grid from t=1 to t=0.

    The final step returns the predicted clean point x0_hat (the last grid
    time is exactly 0, where gamma is within 1e-5 of 1).
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    check_guidance(model, spec)
    labels = np.asarray(labels, dtype=np.int64)
    n, dim = len(labels), model.config.data_dim
    if n == 0:
        return np.zeros((0, dim))
    noise = chain_noise(seed, n, steps, dim)
    x = noise[0]
    grid = np.linspace(1.0, 0.0, steps + 1)
    for i in range(steps):
        t, t_next = float(grid[i]), float(grid[i + 1])
        eps_hat = guided_eps(model, x, t, labels, spec)
        g_t = gamma(t, schedule)
        if i == steps - 1:
            x = (x - math.sqrt(1.0 - g_t) * eps_hat) / math.sqrt(g_t)
        else:
            x, _ = ddim_update(x, eps_hat, g_t, gamma(t_next, schedule), eta, noise[i + 1])
    return x


def write_samples_csv(path, points: np.ndarray, labels, coherence) -> None:
    """Samples CSV: x0..x{d-1}, label, coherence."""
    points = np.atleast_2d(points)
    d = points.shape[1] if len(points) else 2
    coherence = np.broadcast_to(np.asarray(coherence, dtype=np.float64), (len(points),))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"x{i}" for i in range(d)] + ["label", "coherence"])
        for p, lab, c in zip(points, labels, coherence):
            w.writerow([repr(float(v)) for v in p] + [int(lab), repr(float(c))])


def read_samples_csv(path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    if header[-2:] != ["label", "coherence"]:
        raise ValueError(f"{path}: not a samples CSV")
    d = len(header) - 2
    pts = np.array([[float(v) for v in r[:d]] for r in body], dtype=np.float64).reshape(len(body), d)
    return pts, np.array([int(r[d]) for r in body], dtype=np.int64), np.array([float(r[d + 1]) for r in body])


# training --------------------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 6000
    batch_size: int = 256
    seed: int = 0
    regime: str = "cad"
    schedule: str = "cosine"
    loss_norm: str = "squared"
    optimizer: str = "lamb"
    lr: float = 3e-3
    warmup: int = 500
    weight_decay: float = 0.01
    ema_decay: float = 0.999
    cond_dropout: float = 0.0
    log_every: int = 50

    def __post_init__(self):
        if self.regime not in REGIMES:
            raise ValueError(f"unknown regime {self.regime!r}")
        if self.steps < 0 or self.batch_size < 1:
            raise ValueError("steps must be >= 0 and batch_size >= 1")
        if self.loss_norm not in ("squared", "unsquared"):
            raise ValueError(f"unknown loss_norm {self.loss_norm!r}")
        if not 0.0 <= self.cond_dropout < 1.0:
            raise ValueError("cond_dropout must lie in [0, 1)")
        if not 0.0 <= self.ema_decay <= 1.0:
            raise ValueError("ema_decay must lie in [0, 1]")

    def lr_schedule(self) -> LrSchedule:
        total = max(self.steps, self.warmup + 1)
        return LrSchedule(self.lr, min(self.warmup, total - 1), total)


@dataclass
class LossRecord:
    step: int
    lr: float
    loss: float
    ema_loss: float


@dataclass
class TrainResult:
    model: Denoiser
    ema: Denoiser
    history: list[LossRecord] = field(default_factory=list)


class DivergenceError(RuntimeError):
    def __init__(self, message: str, snapshot: dict):
        super().__init__(message)
        self.snapshot = snapshot


def check_view(view: DatasetView, regime: str) -> None:
    s = view.samples
    if regime == "cad" and s.c is None:
        raise ValueError("regime 'cad' needs coherence scores on every sample")
    if regime == "weighted" and s.weight is None:
        raise ValueError("regime 'weighted' needs per-sample loss weights")
    if len(s) == 0:
        raise ValueError("cannot train on an empty dataset view")


def ema_decay_at(step: int, decay: float) -> float:
    """EMA decay with warmup, min(decay, (1 + k) / (10 + k)).

    Without the warmup a 0.999 average still carries ~20% of the random
    init after 1500 steps.
    """
    return min(decay, (1.0 + step) / (10.0 + step))


def train(model: Denoiser, view: DatasetView, config: TrainConfig, progress=None) -> TrainResult:
    """Optimize ``model`` in place on ``view`` and return it with its EMA twin and loss history.

    Fully deterministic given ``config.seed``. The history keeps one row per
    ``log_every`` steps; ``ema_loss`` is a bias-corrected running mean of
    the per-step loss with decay 0.98.
    """
    if config.steps == 0:
        return TrainResult(model, model.with_arrays(model.arrays()), [])
    check_view(view, config.regime)
    model.regime = config.regime
    model.cond_dropout = config.cond_dropout
    s = view.samples
    n = len(s)
    sched = NoiseSchedule(config.schedule)
    lr_sched = config.lr_schedule()
    state = init_optimizer(model.params, weight_decay=config.weight_decay)
    ema = {k: v.copy() for k, v in model.arrays().items()}
    rng = rng_for(config.seed, "train")
    history: list[LossRecord] = []
    smooth, smooth_w = 0.0, 0.0

    for step in range(config.steps):
        idx = rng.integers(0, n, size=min(config.batch_size, n))
        t = rng.random(len(idx))
        eps = rng.standard_normal((len(idx), s.x.shape[1]))
        y = s.y[idx]
        if config.cond_dropout > 0:
            drop = rng.random(len(idx)) < config.cond_dropout
            y = np.where(drop, model.config.null_class, y)
        loss = diffusion_loss(
            model,
            s.x[idx],
            y,
            t,
            eps,
            config.regime,
            c=None if s.c is None else s.c[idx],
            weight=None if s.weight is None else s.weight[idx],
            norm=config.loss_norm,
            schedule=sched,
        )
        value = loss.item()
        if not math.isfinite(value):
            raise DivergenceError(
                f"loss became {value} at step {step}",
                {"step": step, "history": history, "params": model.arrays()},
            )
        grads = grad(loss, model.params)
        lr = lr_at(step, lr_sched)
        try:
            optimizer_step(model.params, grads, state, lr, config.optimizer)
        except NonFiniteGradientError as err:
            raise DivergenceError(str(err), {"step": step, "history": history, "params": model.arrays()}) from err
        ema_update(ema, model.params, ema_decay_at(step, config.ema_decay))
        smooth = 0.98 * smooth + 0.02 * value
        smooth_w = 0.98 * smooth_w + 0.02
        if step % config.log_every == 0 or step == config.steps - 1:
            history.append(LossRecord(step, lr, value, smooth / smooth_w))
            if progress is not None:
                progress(history[-1])
    return TrainResult(model, model.with_arrays(ema), history)


def write_loss_csv(path: str | Path, history: list[LossRecord]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "lr", "loss", "ema_loss"])
        for r in history:
            w.writerow([r.step, repr(r.lr), repr(r.loss), repr(r.ema_loss)])
