"""Ring-of-Gaussians toy data with an exact Bayes classifier.

Class k is an isotropic Gaussian centred at radius r, angle 2*pi*k/N. With
equal priors and a shared covariance the Bayes rule is nearest-centre, so
accuracy and IS-style metrics can use the true posterior instead of a
pretrained network.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .seeding import rng_for

DATASET_COLUMNS = ("clean_label", "noisy_label", "alpha", "u", "coherence")


@dataclass(frozen=True)
class RingMixtureSpec:
    n_classes: int = 8
    radius: float = 4.0
    std: float = 0.4
    seed: int = 0

    def __post_init__(self):
        if self.n_classes < 2:
            raise ValueError("n_classes must be >= 2")
        if self.radius <= 0 or self.std <= 0:
            raise ValueError("radius and std must be positive")

    def centers(self) -> np.ndarray:
        ang = 2.0 * np.pi * np.arange(self.n_classes) / self.n_classes
        return self.radius * np.stack([np.cos(ang), np.sin(ang)], axis=1)


@dataclass
class AnnotatedSamples:
    """Struct-of-arrays view of (x, y, c, weight) samples."""

    x: np.ndarray
    y: np.ndarray
    c: np.ndarray | None = None
    weight: np.ndarray | None = None

    def __post_init__(self):
        x = np.asarray(self.x, dtype=np.float64)
        # (0, -1) is ambiguous for numpy, so only reshape inputs that are not already 2-D
        self.x = x if x.ndim == 2 else x.reshape(len(self.y), -1)
        if len(self.x) != len(self.y):
            raise ValueError(f"{len(self.x)} points but {len(self.y)} labels")
        self.y = np.asarray(self.y, dtype=np.int64)
        for name in ("c", "weight"):
            v = getattr(self, name)
            if v is not None:
                v = np.asarray(v, dtype=np.float64)
                if v.shape != self.y.shape:
                    raise ValueError(f"{name} has shape {v.shape}, expected {self.y.shape}")
                setattr(self, name, v)

    def __len__(self) -> int:
        return len(self.y)

    def subset(self, idx) -> "AnnotatedSamples":
        return AnnotatedSamples(
            self.x[idx],
            self.y[idx],
            None if self.c is None else self.c[idx],
            None if self.weight is None else self.weight[idx],
        )


def generate(spec: RingMixtureSpec, n: int, stream: str = "generate") -> AnnotatedSamples:
    if n < 0:
        raise ValueError("n must be >= 0")
    rng = rng_for(spec.seed, stream)
    y = rng.integers(0, spec.n_classes, size=n)
    x = spec.centers()[y] + spec.std * rng.standard_normal((n, 2))
    return AnnotatedSamples(x, y, c=np.ones(n))


def bayes_posterior(x: np.ndarray, spec: RingMixtureSpec) -> np.ndarray:
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    d2 = ((x[:, None, :] - spec.centers()[None, :, :]) ** 2).sum(-1)
    logits = -d2 / (2.0 * spec.std**2)
    logits -= logits.max(axis=1, keepdims=True)
    p = np.exp(logits)
    return p / p.sum(axis=1, keepdims=True)


def bayes_classify(x: np.ndarray, spec: RingMixtureSpec) -> tuple[np.ndarray, np.ndarray]:
    """Nearest-centre labels and exact posteriors for points ``x`` of shape (n, 2).

    Distances within a relative 1e-12 of the minimum count as ties and go to
    the smallest class id, so rounding in the centre coordinates cannot
    break exact symmetries.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    d2 = ((x[:, None, :] - spec.centers()[None, :, :]) ** 2).sum(-1)
    best = d2.min(axis=1, keepdims=True)
    tied = d2 <= best + 1e-12 * np.maximum(best, 1.0)
    labels = np.argmax(tied, axis=1)
    return labels, bayes_posterior(x, spec)


@dataclass(frozen=True)
class Standardizer:
    """Per-coordinate affine map to zero mean, unit variance."""

    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, x: np.ndarray) -> "Standardizer":
        x = np.asarray(x, dtype=np.float64)
        if len(x) < 2:
            return cls(np.zeros(x.shape[1]), np.ones(x.shape[1]))
        scale = x.std(axis=0)
        scale[scale == 0] = 1.0
        return cls(x.mean(axis=0), scale)

    def forward(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x) - self.mean) / self.scale

    def inverse(self, z: np.ndarray) -> np.ndarray:
        return np.asarray(z) * self.scale + self.mean


def _fmt(v) -> str:
    return "" if v is None or (isinstance(v, float) and np.isnan(v)) else repr(float(v))


def write_dataset_csv(
    path: str | Path,
    x: np.ndarray,
    clean_label: np.ndarray,
    noisy_label: np.ndarray | None = None,
    alpha: np.ndarray | None = None,
    u: np.ndarray | None = None,
    coherence: np.ndarray | None = None,
) -> None:
    """Dataset CSV: x0..x{d-1}, clean_label, noisy_label, alpha, u, coherence.

    Clean data leaves alpha and u empty, repeats the clean label and uses coherence 1.
    """
    x = np.asarray(x, dtype=np.float64)
    n = len(clean_label)
    d = x.shape[1] if x.ndim == 2 else 2
    noisy_label = clean_label if noisy_label is None else noisy_label
    coherence = np.ones(n) if coherence is None else coherence
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"x{i}" for i in range(d)] + list(DATASET_COLUMNS))
        for i in range(n):
            w.writerow(
                [repr(float(v)) for v in x[i]]
                + [
                    int(clean_label[i]),
                    int(noisy_label[i]),
                    _fmt(None if alpha is None else alpha[i]),
                    _fmt(None if u is None else u[i]),
                    repr(float(coherence[i])),
                ]
            )


def read_dataset_csv(path: str | Path) -> dict[str, np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    xcols = [i for i, h in enumerate(header) if h.startswith("x")]
    if [header[i] for i in range(len(xcols), len(header))] != list(DATASET_COLUMNS):
        raise ValueError(f"{path}: unexpected dataset header {header}")

    def col(name, dtype=float):
        j = header.index(name)
        return np.array([dtype(r[j]) if r[j] != "" else np.nan for r in body], dtype=dtype)

    x = np.array([[float(r[i]) for i in xcols] for r in body], dtype=np.float64).reshape(len(body), len(xcols))
    return {
        "x": x,
        "clean_label": col("clean_label", int),
        "noisy_label": col("noisy_label", int),
        "alpha": col("alpha"),
        "u": col("u"),
        "coherence": col("coherence"),
    }
