"""Synthetic annotation noise with known per-sample coherence.

Each sample gets a target entropy u drawn through a piecewise-linear CDF,
which is mapped to an error probability alpha by inverting the normalized
label entropy E(alpha). The label is then resampled: kept with probability
1 - alpha, otherwise moved uniformly to one of the other N - 1 classes. The
coherence of the resampled label is 1 - u.

Also holds rank-quantile coherence binning and the dataset views used by
the baseline / filtered / weighted / coherence-conditioned training regimes.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .seeding import rng_for
from .toydata import AnnotatedSamples

STRATEGIES = ("baseline", "filtered", "weighted", "cad")


@dataclass(frozen=True)
class NoiseSimConfig:
    n_classes: int = 10
    beta: float = 0.5
    kappa: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.n_classes < 2:
            raise ValueError("n_classes must be >= 2")
        if not 0.0 < self.beta < 1.0:
            raise ValueError(f"beta must lie in (0, 1), got {self.beta}")
        if not 0.0 < self.kappa < 1.0:
            raise ValueError(f"kappa must lie in (0, 1), got {self.kappa}")


def max_alpha(n_classes: int) -> float:
    return (n_classes - 1) / n_classes


def _check_alpha(alpha, n_classes: int) -> np.ndarray:
    a = np.asarray(alpha, dtype=np.float64)
    if np.any(a < 0) or np.any(a > max_alpha(n_classes) + 1e-15):
        raise ValueError(f"alpha must lie in [0, {max_alpha(n_classes)}]")
    return a


def flip_distribution(y: int, alpha: float, n_classes: int) -> np.ndarray:
    """Label distribution after noise: 1 - alpha on ``y``, alpha / (N - 1) on every other class."""
    _check_alpha(alpha, n_classes)
    if not 0 <= y < n_classes:
        raise ValueError(f"label {y} out of range for {n_classes} classes")
    p = np.full(n_classes, alpha / (n_classes - 1))
    p[y] = 1.0 - alpha
    return p


def entropy_of_alpha(alpha, n_classes: int):
    """Normalized entropy of the flip distribution, in [0, 1]. Uses 0 log 0 = 0."""
    a = _check_alpha(alpha, n_classes)
    with np.errstate(divide="ignore", invalid="ignore"):
        keep = np.where(a < 1.0, (1.0 - a) * np.log1p(-a), 0.0)
        # log(a) - log(N-1) rather than log(a / (N-1)): the quotient underflows for subnormal a
        spread = np.where(a > 0.0, a * (np.log(a) - math.log(n_classes - 1)), 0.0)
    out = np.clip(-(keep + spread) / math.log(n_classes), 0.0, 1.0)
    # the uniform distribution is exactly 1; rounding would otherwise give 1 - 2e-16
    out = np.where(a >= max_alpha(n_classes), 1.0, out)
    return float(out) if np.ndim(out) == 0 else out


def invert_entropy(u, n_classes: int, tol: float = 1e-10, max_iter: int = 200):
    """Bisection for alpha with |E(alpha) - u| <= tol; vectorized over ``u``.

    E is strictly increasing on [0, (N-1)/N] so bisection always brackets.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    u_arr = np.asarray(u, dtype=np.float64)
    if np.any(u_arr < 0) or np.any(u_arr > 1):
        raise ValueError("target entropy must lie in [0, 1]")
    top = max_alpha(n_classes)
    lo = np.zeros_like(u_arr)
    hi = np.full_like(u_arr, top)
    mid = np.where(u_arr >= 1.0, top, 0.0)
    done = (u_arr <= 0.0) | (u_arr >= 1.0)
    for _ in range(max_iter):
        if done.all():
            break
        m = 0.5 * (lo + hi)
        e = entropy_of_alpha(m, n_classes)
        mid = np.where(done, mid, m)
        done = done | (np.abs(e - u_arr) <= tol) | (hi - lo <= 4 * np.finfo(float).eps)
        lo = np.where(~done & (e < u_arr), m, lo)
        hi = np.where(~done & (e >= u_arr), m, hi)
    else:
        if not done.all():
            raise RuntimeError(f"entropy inversion did not converge in {max_iter} iterations")
    return float(mid) if mid.ndim == 0 else mid


def target_entropy_cdf(t, beta: float, kappa: float):
    """Piecewise-linear map t -> u passing through (0, 0), (kappa, beta), (1, 1)."""
    if not 0.0 < kappa < 1.0:
        raise ValueError(f"kappa must lie strictly inside (0, 1), got {kappa}")
    t_arr = np.asarray(t, dtype=np.float64)
    if np.any(t_arr < 0) or np.any(t_arr > 1):
        raise ValueError("t must lie in [0, 1]")
    out = np.where(
        t_arr < kappa,
        t_arr * beta / kappa,
        1.0 + (t_arr - 1.0) * (1.0 - beta) / (1.0 - kappa),
    )
    return float(out) if out.ndim == 0 else out


@dataclass
class CorruptionRecord:
    """Per-sample outcome of the noise simulation (struct of arrays)."""

    clean_label: np.ndarray
    noisy_label: np.ndarray
    u: np.ndarray
    alpha: np.ndarray

    @property
    def coherence(self) -> np.ndarray:
        return 1.0 - self.u

    @property
    def flip_rate(self) -> float:
        return float(np.mean(self.noisy_label != self.clean_label)) if len(self.u) else 0.0


def corrupt_labels(labels, config: NoiseSimConfig, tol: float = 1e-10) -> CorruptionRecord:
    labels = np.asarray(labels, dtype=np.int64)
    n, k = len(labels), config.n_classes
    if n and (labels.min() < 0 or labels.max() >= k):
        raise ValueError(f"labels must lie in [0, {k})")
    rng = rng_for(config.seed, "noisesim")
    t = rng.random(n)
    u = target_entropy_cdf(t, config.beta, config.kappa) if n else np.zeros(0)
    alpha = invert_entropy(u, k, tol) if n else np.zeros(0)
    flip = rng.random(n) < alpha
    # a uniform offset in 1..N-1 picks one of the other classes with equal mass
    offset = rng.integers(1, k, size=n)
    noisy = np.where(flip, (labels + offset) % k, labels)
    return CorruptionRecord(labels, noisy, np.atleast_1d(u), np.atleast_1d(alpha))


def corrupt_dataset(data: AnnotatedSamples, config: NoiseSimConfig, tol: float = 1e-10):
    """Resample the labels of ``data``; returns the noisy samples and the per-sample record."""
    rec = corrupt_labels(data.y, config, tol)
    return AnnotatedSamples(data.x, rec.noisy_label, c=rec.coherence), rec


@dataclass
class Binning:
    bins: np.ndarray
    coherence: np.ndarray
    n_bins: int
    has_ties: bool = False


def bin_coherence(scores, n_bins: int = 8) -> Binning:
    """Equal-population bins by score rank; coherence is the bin index scaled to [0, 1].

    Ties are ranked by original position, so repeated values can land in
    different bins. That case is legal and reported through ``has_ties``.
    """
    if n_bins < 2:
        raise ValueError("n_bins must be >= 2")
    s = np.asarray(scores, dtype=np.float64)
    if s.size == 0:
        raise ValueError("cannot bin an empty score list")
    order = np.argsort(s, kind="stable")
    rank = np.empty(len(s), dtype=np.int64)
    rank[order] = np.arange(len(s))
    bins = np.minimum(rank * n_bins // len(s), n_bins - 1)
    ties = len(np.unique(s)) < len(s)
    if ties:
        warnings.warn("tied coherence scores were split across bins by index order", stacklevel=2)
    return Binning(bins, bins / (n_bins - 1), n_bins, ties)


def filter_threshold(n_bins: int) -> int:
    """Lowest bin kept by the filtered strategy: the bottom 3/8 of bins are dropped."""
    return math.ceil(3 * n_bins / 8)


@dataclass
class DatasetView:
    """What a training regime actually sees."""

    samples: AnnotatedSamples
    strategy: str
    n_bins: int
    source_size: int
    metadata: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.samples)


def apply_strategy(data: AnnotatedSamples, binning: Binning, strategy: str) -> DatasetView:
    """Build the view for ``strategy``.

    ``binning.bins`` decides what is filtered; ``binning.coherence`` (the
    scaled bin index, or the raw score if the caller swapped it in) is what
    gets used as weight or conditioning.

    - baseline: every sample, no coherence
    - filtered: drop bins below ``filter_threshold``, no coherence
    - weighted: every sample, loss weight = coherence, no coherence input
    - cad: every sample, coherence as conditioning
    """
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}; expected one of {STRATEGIES}")
    if len(binning.bins) != len(data):
        raise ValueError("binning does not match dataset size")
    c = binning.coherence
    meta = {"has_ties": binning.has_ties}
    if strategy == "baseline":
        view = AnnotatedSamples(data.x, data.y)
    elif strategy == "filtered":
        keep = binning.bins >= filter_threshold(binning.n_bins)
        view = AnnotatedSamples(data.x[keep], data.y[keep])
        meta["removed_bins"] = list(range(filter_threshold(binning.n_bins)))
    elif strategy == "weighted":
        view = AnnotatedSamples(data.x, data.y, weight=c)
    else:
        view = AnnotatedSamples(data.x, data.y, c=c)
    return DatasetView(view, strategy, binning.n_bins, len(data), meta)
