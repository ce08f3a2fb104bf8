"""End-to-end helpers: dataset -> view -> trained model -> samples -> metrics.

The CLI and the acceptance suite both go through these so that a run
reproduced from a config file and a run built in a test are the same
computation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import ExperimentConfig
from .denoiser import Denoiser, DenoiserConfig
from .diffusion import GuidanceSpec, NoiseSchedule, TrainConfig, TrainResult, sample, train
from .metrics import MetricsReport, evaluate
from .noisesim import (
    Binning,
    CorruptionRecord,
    DatasetView,
    NoiseSimConfig,
    apply_strategy,
    bin_coherence,
    corrupt_labels,
)
from .toydata import AnnotatedSamples, RingMixtureSpec, Standardizer, generate


@dataclass
class SimulatedData:
    spec: RingMixtureSpec
    clean: AnnotatedSamples
    record: CorruptionRecord
    reference: AnnotatedSamples

    @property
    def noisy(self) -> AnnotatedSamples:
        return AnnotatedSamples(self.clean.x, self.record.noisy_label, c=self.record.coherence)


def ring_spec(cfg: ExperimentConfig) -> RingMixtureSpec:
    return RingMixtureSpec(cfg.data.n_classes, cfg.data.radius, cfg.data.std, cfg.run.seed)


def simulate(cfg: ExperimentConfig) -> SimulatedData:
    spec = ring_spec(cfg)
    clean = generate(spec, cfg.data.n_train)
    reference = generate(spec, cfg.data.n_reference, stream="reference")
    noise = NoiseSimConfig(cfg.data.n_classes, cfg.noise.beta, cfg.noise.kappa, cfg.run.seed)
    record = corrupt_labels(clean.y, noise)
    return SimulatedData(spec, clean, record, reference)


def build_view(
    x: np.ndarray, noisy_label: np.ndarray, coherence: np.ndarray, regime: str, n_bins: int, source: str = "raw"
) -> tuple[DatasetView, Standardizer]:
    """Standardize ``x`` and cut the view for ``regime``.

    Bins always come from rank-quantile binning of ``coherence`` (they decide
    what the filtered regime drops). ``source`` picks whether the coherence
    carried into conditioning / weighting is the raw score or the bin index.
    """
    std = Standardizer.fit(x)
    samples = AnnotatedSamples(std.forward(x), noisy_label)
    binning = bin_coherence(coherence, n_bins)
    if source == "raw":
        binning = Binning(binning.bins, np.asarray(coherence, dtype=np.float64), n_bins, binning.has_ties)
    elif source != "binned":
        raise ValueError(f"unknown coherence source {source!r}")
    return apply_strategy(samples, binning, regime), std


def denoiser_config(cfg: ExperimentConfig) -> DenoiserConfig:
    m = cfg.model
    return DenoiserConfig(2, cfg.data.n_classes, m.emb_dim, m.width, m.depth, m.merged, m.max_freq)


def train_config(cfg: ExperimentConfig) -> TrainConfig:
    t = cfg.train
    return TrainConfig(
        steps=t.steps,
        batch_size=t.batch_size,
        seed=cfg.run.seed,
        regime=t.regime,
        schedule=t.schedule,
        loss_norm=t.loss_norm,
        optimizer=t.optimizer,
        lr=t.lr,
        warmup=t.warmup,
        weight_decay=t.weight_decay,
        ema_decay=t.ema_decay,
        cond_dropout=t.cond_dropout,
        log_every=t.log_every,
    )


def train_from_config(cfg: ExperimentConfig, data: SimulatedData, progress=None) -> tuple[TrainResult, Standardizer, DatasetView]:
    view, std = build_view(
        data.clean.x,
        data.record.noisy_label,
        data.record.coherence,
        cfg.train.regime,
        cfg.noise.n_bins,
        cfg.noise.coherence_source,
    )
    model = Denoiser.init(denoiser_config(cfg), cfg.run.seed, cfg.train.regime, cfg.train.cond_dropout)
    return train(model, view, train_config(cfg), progress), std, view


def uniform_labels(n: int, n_classes: int) -> np.ndarray:
    return np.arange(n) % n_classes


def generate_points(
    model: Denoiser,
    std: Standardizer,
    labels: np.ndarray,
    steps: int,
    spec: GuidanceSpec,
    eta: float = 0.0,
    seed: int = 0,
    schedule: str = "cosine",
) -> np.ndarray:
    """Sample in standardized space and map back to data coordinates."""
    z = sample(model, labels, steps, spec, eta, seed, NoiseSchedule(schedule))
    return std.inverse(z) if len(z) else z


def evaluate_points(points, labels, reference: AnnotatedSamples, spec: RingMixtureSpec, k: int = 5) -> MetricsReport:
    return evaluate(reference.x, points, labels, spec, k)
