"""Sample-quality metrics on raw low-dimensional features.

Frechet distance between fitted Gaussians, k-NN manifold metrics
(precision / recall / density / coverage), conditional accuracy under the
Bayes classifier, and an Inception-Score analogue built from the exact
posterior.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .toydata import RingMixtureSpec, bayes_classify, bayes_posterior

REPORT_FIELDS = (
    "fd",
    "precision",
    "recall",
    "density",
    "coverage",
    "accuracy",
    "is_analog",
    "n_real",
    "n_fake",
    "k",
    "flags",
)


def _psd_sqrt(mat: np.ndarray, what: str) -> np.ndarray:
    vals, vecs = np.linalg.eigh(0.5 * (mat + mat.T))
    if vals.min() < -1e-8:
        warnings.warn(f"{what}: clamped negative eigenvalue {vals.min():.3g}", stacklevel=3)
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.T


def frechet_from_stats(mu1, sigma1, mu2, sigma2) -> float:
    """||mu1 - mu2||^2 + Tr(S1 + S2 - 2 (S1 S2)^(1/2)).

    The trace of the matrix root is taken from the symmetric product
    S1^(1/2) S2 S1^(1/2), which has the same eigenvalues as S1 S2.
    """
    mu1, mu2 = np.atleast_1d(mu1).astype(np.float64), np.atleast_1d(mu2).astype(np.float64)
    s1, s2 = np.atleast_2d(sigma1).astype(np.float64), np.atleast_2d(sigma2).astype(np.float64)
    root1 = _psd_sqrt(s1, "frechet")
    inner = root1 @ s2 @ root1
    vals = np.linalg.eigvalsh(0.5 * (inner + inner.T))
    if vals.min() < -1e-8:
        warnings.warn(f"frechet: clamped negative eigenvalue {vals.min():.3g}", stacklevel=2)
    tr_root = float(np.sqrt(np.clip(vals, 0.0, None)).sum())
    diff = mu1 - mu2
    fd = float(diff @ diff + np.trace(s1) + np.trace(s2) - 2.0 * tr_root)
    return max(fd, 0.0)


def _fit(points: np.ndarray, flags: list[str], which: str):
    mu = points.mean(axis=0)
    sigma = np.atleast_2d(np.cov(points, rowvar=False))
    if np.linalg.eigvalsh(sigma).min() <= 1e-12 * max(np.trace(sigma), 1.0):
        sigma = sigma + 1e-10 * np.eye(len(sigma))
        flags.append(f"degenerate_cov_{which}")
        warnings.warn(f"degenerate covariance in {which} set; added 1e-10 I", stacklevel=3)
    return mu, sigma


def frechet_distance(real, fake, flags: list[str] | None = None) -> float:
    """Frechet distance between Gaussians fitted to two point sets of shape (n, d)."""
    real = np.atleast_2d(np.asarray(real, dtype=np.float64))
    fake = np.atleast_2d(np.asarray(fake, dtype=np.float64))
    d = real.shape[1]
    if fake.shape[1] != d:
        raise ValueError("feature dimensions differ")
    if len(real) < d + 1 or len(fake) < d + 1:
        raise ValueError(f"need at least {d + 1} points per set")
    flags = [] if flags is None else flags
    mu1, s1 = _fit(real, flags, "real")
    mu2, s2 = _fit(fake, flags, "fake")
    return frechet_from_stats(mu1, s1, mu2, s2)


def _pairwise(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.sqrt(((a[:, None, :] - b[None, :, :]) ** 2).sum(-1))


def _knn_radius(points: np.ndarray, k: int, chunk: int = 1024) -> np.ndarray:
    # distance to the k-th nearest other point (index k counts the point itself at 0)
    out = np.empty(len(points))
    for s in range(0, len(points), chunk):
        d = _pairwise(points[s : s + chunk], points)
        out[s : s + chunk] = np.partition(d, k, axis=1)[:, k]
    return out


def prdc(real, fake, k: int = 5, chunk: int = 1024) -> tuple[float, float, float, float]:
    """Precision, recall, density, coverage with exact k-NN balls.

    A point lies inside a ball when its distance is strictly below the radius.
    """
    real = np.atleast_2d(np.asarray(real, dtype=np.float64))
    fake = np.atleast_2d(np.asarray(fake, dtype=np.float64))
    if k < 1:
        raise ValueError("k must be >= 1")
    if k >= len(real) or k >= len(fake):
        raise ValueError(f"k={k} needs more than k points in each set (got {len(real)}, {len(fake)})")
    r_real = _knn_radius(real, k, chunk)
    r_fake = _knn_radius(fake, k, chunk)

    fake_in_real = np.zeros(len(fake), dtype=bool)
    density_count = np.zeros(len(fake))
    covered = np.zeros(len(real), dtype=bool)
    real_in_fake = np.zeros(len(real), dtype=bool)
    for s in range(0, len(real), chunk):
        d = _pairwise(real[s : s + chunk], fake)
        inside = d < r_real[s : s + chunk, None]
        fake_in_real |= inside.any(axis=0)
        density_count += inside.sum(axis=0)
        covered[s : s + chunk] = inside.any(axis=1)
        real_in_fake[s : s + chunk] = (d < r_fake[None, :]).any(axis=1)
    precision = float(fake_in_real.mean())
    recall = float(real_in_fake.mean())
    density = float(density_count.mean() / k)
    coverage = float(covered.mean())
    return precision, recall, density, coverage


def accuracy(points, prompted_labels, spec: RingMixtureSpec) -> float:
    """Fraction of points the Bayes classifier assigns to the label they were prompted with."""
    labels = np.asarray(prompted_labels)
    if len(labels) == 0:
        raise ValueError("accuracy of an empty sample set is undefined")
    pred, _ = bayes_classify(points, spec)
    return float(np.mean(pred == labels))


def inception_score_analog(points, spec: RingMixtureSpec) -> float:
    """exp(mean_x KL(p(y|x) || p(y))) with the exact posterior; lies in [1, N]."""
    points = np.atleast_2d(points)
    if len(points) < 2:
        raise ValueError("need at least two points")
    post = bayes_posterior(points, spec)
    marginal = post.mean(axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(post > 0, post * (np.log(post) - np.log(marginal)), 0.0)
    kl = float(terms.sum(axis=1).mean())
    # rounding can push the mutual information a hair outside [0, log N]
    kl = min(max(kl, 0.0), math.log(spec.n_classes))
    return math.exp(kl)


@dataclass
class MetricsReport:
    fd: float
    precision: float
    recall: float
    density: float
    coverage: float
    accuracy: float
    is_analog: float
    n_real: int
    n_fake: int
    k: int
    flags: list[str] = field(default_factory=list)

    def row(self) -> list[str]:
        d = asdict(self)
        return [
            ";".join(d[f]) if f == "flags" else (str(d[f]) if isinstance(d[f], int) else repr(float(d[f])))
            for f in REPORT_FIELDS
        ]

    def text(self) -> str:
        lines = [
            f"samples: {self.n_fake} generated vs {self.n_real} reference (k={self.k})",
            f"frechet distance : {self.fd:.6f}",
            f"accuracy         : {self.accuracy:.4f}",
            f"IS analog        : {self.is_analog:.4f}",
            f"precision        : {self.precision:.4f}",
            f"recall           : {self.recall:.4f}",
            f"density          : {self.density:.4f}",
            f"coverage         : {self.coverage:.4f}",
            f"flags            : {', '.join(self.flags) or 'none'}",
        ]
        return "\n".join(lines) + "\n"


def evaluate(real, fake, prompted_labels, spec: RingMixtureSpec, k: int = 5) -> MetricsReport:
    fake = np.atleast_2d(fake)
    if len(fake) == 0:
        raise ValueError("no generated samples to evaluate")
    flags: list[str] = []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        fd = frechet_distance(real, fake, flags)
    p, r, d, c = prdc(real, fake, k)
    return MetricsReport(
        fd=fd,
        precision=p,
        recall=r,
        density=d,
        coverage=c,
        accuracy=accuracy(fake, prompted_labels, spec),
        is_analog=inception_score_analog(fake, spec),
        n_real=len(real),
        n_fake=len(fake),
        k=k,
        flags=flags,
    )


def write_report(csv_path: str | Path, text_path: str | Path | None, report: MetricsReport) -> None:
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REPORT_FIELDS)
        w.writerow(report.row())
    if text_path is not None:
        Path(text_path).write_text(report.text())
