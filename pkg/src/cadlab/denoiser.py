"""Small conditional MLP denoiser with class + coherence conditioning.

The condition enters through a merged embedding h(y, c): a class-table row
and an embedded coherence value are concatenated and passed through a
two-layer map. The trunk sees [W_in x_t, sinusoid(t), h(y, c)] and predicts
the noise. Setting ``merged=False`` feeds the class row and the coherence
embedding as two separate blocks instead.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass

import numpy as np

from .ndtensor import Tensor, concat, gather_rows, grad, silu
from .seeding import rng_for

SENTINEL_COHERENCE = 1.0


@dataclass(frozen=True)
class DenoiserConfig:
    data_dim: int = 2
    n_classes: int = 8
    emb_dim: int = 64
    width: int = 256
    depth: int = 4
    merged: bool = True
    max_freq: float = 1e4

    def __post_init__(self):
        if self.emb_dim < 2 or self.emb_dim % 2:
            raise ValueError("emb_dim must be even and >= 2")
        if self.depth < 1 or self.width < 1:
            raise ValueError("depth and width must be positive")

    @property
    def null_class(self) -> int:
        return self.n_classes

    def to_dict(self) -> dict:
        return asdict(self)


class Denoiser:
    """Parameters plus the metadata needed to use them.

    ``regime`` records how the weights were trained; it decides whether the
    coherence input is live (``cad``) or pinned to a sentinel.
    ``cond_dropout`` > 0 means the null class row was trained (needed for
    plain classifier-free guidance).
    """

    def __init__(self, config: DenoiserConfig, params: dict[str, Tensor], regime: str = "cad", cond_dropout: float = 0.0):
        self.config = config
        self.params = params
        self.regime = regime
        self.cond_dropout = cond_dropout

    @classmethod
    def init(cls, config: DenoiserConfig, seed: int, regime: str = "cad", cond_dropout: float = 0.0) -> "Denoiser":
        rng = rng_for(seed, "denoiser-init")
        d = config.emb_dim
        shapes: dict[str, tuple[int, ...]] = {
            "class_table": (config.n_classes + 1, d),
            "coh.w1": (d, d),
            "coh.b1": (d,),
            "coh.w2": (d, d),
            "coh.b2": (d,),
        }
        if config.merged:
            shapes.update({"merge.w1": (2 * d, d), "merge.b1": (d,), "merge.w2": (d, d), "merge.b2": (d,)})
        shapes.update({"in.w": (config.data_dim, d), "in.b": (d,)})
        fan = (3 if config.merged else 4) * d
        for i in range(config.depth):
            shapes[f"trunk.{i}.w"] = (fan, config.width)
            shapes[f"trunk.{i}.b"] = (config.width,)
            fan = config.width
        shapes.update({"out.w": (fan, config.data_dim), "out.b": (config.data_dim,)})

        params = {}
        for name, shape in shapes.items():
            if name == "class_table":
                arr = rng.standard_normal(shape)
            elif len(shape) == 2:
                arr = rng.standard_normal(shape) / math.sqrt(shape[0])
            else:
                arr = np.zeros(shape)
            params[name] = Tensor(arr, requires_grad=True, name=name)
        return cls(config, params, regime, cond_dropout)

    def arrays(self) -> dict[str, np.ndarray]:
        return {k: p.data for k, p in self.params.items()}

    def with_arrays(self, arrays: dict[str, np.ndarray]) -> "Denoiser":
        params = {k: Tensor(np.array(arrays[k], dtype=np.float64), requires_grad=True, name=k) for k in self.params}
        return Denoiser(self.config, params, self.regime, self.cond_dropout)

    def n_params(self) -> int:
        return sum(p.data.size for p in self.params.values())

    def __call__(self, x_t, t, y, c=None) -> Tensor:
        return predict_eps(self, x_t, t, y, c)


def embed_time(t, d: int, max_freq: float = 1e4) -> np.ndarray:
    """Sinusoidal features [sin(t f_k), cos(t f_k)] with f_k geometric from 1 to ``max_freq``.

    Scalar ``t`` gives shape (d,), an array of n values gives (n, d).
    """
    if d < 2 or d % 2:
        raise ValueError("d must be even and >= 2")
    half = d // 2
    freqs = max_freq ** (np.arange(half) / max(half - 1, 1))
    tt = np.asarray(t, dtype=np.float64)
    arg = tt[..., None] * freqs
    return np.concatenate([np.sin(arg), np.cos(arg)], axis=-1)


def embed_coherence(c, model: Denoiser) -> Tensor:
    c = np.atleast_1d(np.asarray(c, dtype=np.float64))
    if np.any((c < 0) | (c > 1)):
        warnings.warn("coherence outside [0, 1] clamped", stacklevel=2)
        c = np.clip(c, 0.0, 1.0)
    feats = Tensor(embed_time(c, model.config.emb_dim, model.config.max_freq))
    p = model.params
    return silu(feats @ p["coh.w1"] + p["coh.b1"]) @ p["coh.w2"] + p["coh.b2"]


def _class_rows(y, model: Denoiser) -> np.ndarray:
    y = np.atleast_1d(np.asarray(y))
    if y.dtype.kind not in "iu":
        raise ValueError("class ids must be integers")
    if np.any((y < 0) | (y > model.config.null_class)):
        raise ValueError(f"class id out of range [0, {model.config.null_class}]")
    return y.astype(np.intp)


def cond_embedding(y, c, model: Denoiser) -> Tensor:
    """h(y, c) for arrays (or scalars) of class ids and coherences; shape (n, d)."""
    rows = _class_rows(y, model)
    c = np.broadcast_to(np.asarray(c, dtype=np.float64), rows.shape)
    cls_emb = gather_rows(model.params["class_table"], rows)
    coh = embed_coherence(c, model)
    if not model.config.merged:
        return concat([cls_emb, coh], axis=1)
    p = model.params
    z = concat([cls_emb, coh], axis=1)
    return silu(z @ p["merge.w1"] + p["merge.b1"]) @ p["merge.w2"] + p["merge.b2"]


def trunk(model: Denoiser, x_t, t, h: Tensor) -> Tensor:
    """Noise prediction from an explicit condition embedding ``h``."""
    p = model.params
    x = Tensor(np.atleast_2d(np.asarray(x_t, dtype=np.float64))) if not isinstance(x_t, Tensor) else x_t
    n = x.shape[0]
    t = np.broadcast_to(np.asarray(t, dtype=np.float64), (n,))
    temb = Tensor(embed_time(t, model.config.emb_dim, model.config.max_freq))
    z = concat([x @ p["in.w"] + p["in.b"], temb, h], axis=1)
    for i in range(model.config.depth):
        z = silu(z @ p[f"trunk.{i}.w"] + p[f"trunk.{i}.b"])
    return z @ p["out.w"] + p["out.b"]


def predict_eps(model: Denoiser, x_t, t, y, c=None) -> Tensor:
    """eps_theta(x_t, t, y, c). Non-CAD models ignore ``c`` and use the sentinel coherence."""
    x = np.atleast_2d(np.asarray(x_t.data if isinstance(x_t, Tensor) else x_t, dtype=np.float64))
    n = x.shape[0]
    if model.regime != "cad" or c is None:
        if model.regime == "cad" and c is None:
            raise ValueError("a coherence-conditioned model needs a coherence value")
        c = SENTINEL_COHERENCE
    y = np.broadcast_to(np.asarray(y), (n,))
    c = np.broadcast_to(np.asarray(c, dtype=np.float64), (n,))
    return trunk(model, x_t if isinstance(x_t, Tensor) else x, t, cond_embedding(y, c, model))


def pairwise_mean_distance(h: np.ndarray) -> float:
    n = len(h)
    diff = h[:, None, :] - h[None, :, :]
    dist = np.sqrt((diff**2).sum(-1))
    iu = np.triu_indices(n, k=1)
    return float(dist[iu].mean())


def collapse_probe(model: Denoiser, grid) -> np.ndarray:
    """Mean pairwise distance between class embeddings h(y, c) for each c in ``grid``."""
    n = model.config.n_classes
    if n < 2:
        raise ValueError("collapse probe needs at least two classes")
    ys = np.arange(n)
    out = []
    for c in grid:
        c = float(c)
        if not 0.0 <= c <= 1.0:
            raise ValueError(f"grid value {c} outside [0, 1]")
        out.append(pairwise_mean_distance(cond_embedding(ys, np.full(n, c), model).data))
    return np.array(out)


def prediction_spread(model: Denoiser, x_t: np.ndarray, t, c: float) -> np.ndarray:
    """Per probe point, max over class pairs of ||eps(x, t, y1, c) - eps(x, t, y2, c)||."""
    n_cls = model.config.n_classes
    x_t = np.atleast_2d(x_t)
    preds = np.stack([predict_eps(model, x_t, t, np.full(len(x_t), y), c).data for y in range(n_cls)], axis=1)
    diff = preds[:, :, None, :] - preds[:, None, :, :]
    return np.sqrt((diff**2).sum(-1)).max(axis=(1, 2))


def embedding_lipschitz(model: Denoiser, x_t: np.ndarray, t, h_points: np.ndarray) -> float:
    """Largest spectral norm of d eps / d h over probe points and candidate embeddings.

    Every (x_t[i], t[i]) is paired with every row of ``h_points``; the result
    is a sampled estimate of the local Lipschitz constant of the trunk in h.
    """
    x_t = np.atleast_2d(x_t)
    t = np.broadcast_to(np.asarray(t, dtype=np.float64), (len(x_t),))
    xs = np.repeat(x_t, len(h_points), axis=0)
    ts = np.repeat(t, len(h_points))
    hs = np.tile(h_points, (len(x_t), 1))
    jac = np.zeros((len(xs), model.config.data_dim, hs.shape[1]))
    for k in range(model.config.data_dim):
        h = Tensor(hs, requires_grad=True)
        out = trunk(model, xs, ts, h)
        (g,) = grad(out[:, k].sum(), [h])
        jac[:, k, :] = g
    return float(np.linalg.norm(jac, ord=2, axis=(1, 2)).max())
