"""Two-layer MLP encoder with a task head and a source-label head.

Shapes (row-vector convention, batches are ``(N, D_in)``)::

    z1 = x @ W1 + b1            (H)
    h1 = relu(z1)
    e  = h1 @ W2 + b2           (D_emb)   embedding used for retrieval
    f_task = e @ W_task + b_task  (K_train)
    f_src  = e @ W_src + b_src    (K_src)
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, NumericError
from .numerics import make_rng

PARAM_NAMES = ("W1", "b1", "W2", "b2", "W_task", "b_task", "W_src", "b_src")

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass
class ModelParams:
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    W_task: np.ndarray
    b_task: np.ndarray
    W_src: np.ndarray
    b_src: np.ndarray

    def __post_init__(self):
        d_in, h = self.W1.shape
        h2, d_emb = self.W2.shape
        expected = {
            "b1": (h,),
            "W2": (h, d_emb),
            "b2": (d_emb,),
            "W_task": (d_emb, self.W_task.shape[1]),
            "b_task": (self.W_task.shape[1],),
            "W_src": (d_emb, self.W_src.shape[1]),
            "b_src": (self.W_src.shape[1],),
        }
        for name, shape in expected.items():
            if getattr(self, name).shape != shape:
                raise DimensionError(f"{name} has shape {getattr(self, name).shape}, expected {shape}")

    @property
    def dims(self) -> tuple[int, int, int, int, int]:
        """(D_in, H, D_emb, K_train, K_src)"""
        return (
            self.W1.shape[0],
            self.W1.shape[1],
            self.W2.shape[1],
            self.W_task.shape[1],
            self.W_src.shape[1],
        )

    def arrays(self) -> list[np.ndarray]:
        return [getattr(self, n) for n in PARAM_NAMES]

    def copy(self) -> "ModelParams":
        return ModelParams(*(a.copy() for a in self.arrays()))

    def map(self, fn) -> "ModelParams":
        return ModelParams(*(fn(a) for a in self.arrays()))

    def equals(self, other: "ModelParams") -> bool:
        """Bit-identical comparison."""
        return all(
            a.shape == b.shape and a.tobytes() == b.tobytes()
            for a, b in zip(self.arrays(), other.arrays())
        )

    @classmethod
    def zeros(cls, d_in, h, d_emb, k_train, k_src) -> "ModelParams":
        return cls(
            np.zeros((d_in, h)), np.zeros(h),
            np.zeros((h, d_emb)), np.zeros(d_emb),
            np.zeros((d_emb, k_train)), np.zeros(k_train),
            np.zeros((d_emb, k_src)), np.zeros(k_src),
        )


@dataclass
class ForwardCache:
    x: np.ndarray
    z1: np.ndarray
    h1: np.ndarray
    e: np.ndarray
    f_task: np.ndarray
    f_src: np.ndarray


@dataclass
class AdamState:
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)
    t: int = 0

    @classmethod
    def fresh(cls, params: ModelParams) -> "AdamState":
        return cls(
            m=[np.zeros_like(a) for a in params.arrays()],
            v=[np.zeros_like(a) for a in params.arrays()],
            t=0,
        )


def init_params(d_in: int, h: int, d_emb: int, k_train: int, k_src: int, seed: int) -> ModelParams:
    """He-initialised weights (variance 2 / fan_in), zero biases."""
    for name, v in (("D_in", d_in), ("H", h), ("D_emb", d_emb), ("K_train", k_train), ("K_src", k_src)):
        if v < 1:
            raise DimensionError(f"{name} must be >= 1, got {v}")
    rng = make_rng(seed)

    def he(fan_in, fan_out):
        return rng.standard_normal((fan_in, fan_out)) * math.sqrt(2.0 / fan_in)

    W1 = he(d_in, h)
    W2 = he(h, d_emb)
    W_task = he(d_emb, k_train)
    W_src = he(d_emb, k_src)
    return ModelParams(
        W1, np.zeros(h), W2, np.zeros(d_emb),
        W_task, np.zeros(k_train), W_src, np.zeros(k_src),
    )


def forward(params: ModelParams, x) -> ForwardCache:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != params.W1.shape[0]:
        raise DimensionError(f"input has dimension {x.shape[-1]}, model expects {params.W1.shape[0]}")
    # overflow is caught downstream by the loss checks
    with np.errstate(over="ignore", invalid="ignore"):
        z1 = x @ params.W1 + params.b1
        h1 = np.maximum(z1, 0.0)
        e = h1 @ params.W2 + params.b2
        f_task = e @ params.W_task + params.b_task
        f_src = e @ params.W_src + params.b_src
    return ForwardCache(x, z1, h1, e, f_task, f_src)


def embed(params: ModelParams, x) -> np.ndarray:
    """Embedding only; skips the heads."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != params.W1.shape[0]:
        raise DimensionError(f"input has dimension {x.shape[-1]}, model expects {params.W1.shape[0]}")
    return np.maximum(x @ params.W1 + params.b1, 0.0) @ params.W2 + params.b2


def backward(params: ModelParams, cache: ForwardCache, d_e, d_f_task, d_f_src) -> ModelParams:
    """Reverse-mode gradients, summed over the batch when inputs are 2-D.

    ``d_e`` is the gradient arriving directly at the embedding (on top of what
    flows back from the two heads). ReLU'(0) is taken as 0.
    """
    d_e = np.asarray(d_e, dtype=np.float64)
    d_f_task = np.asarray(d_f_task, dtype=np.float64)
    d_f_src = np.asarray(d_f_src, dtype=np.float64)
    for name, g, ref in (("d_e", d_e, cache.e), ("d_f_task", d_f_task, cache.f_task), ("d_f_src", d_f_src, cache.f_src)):
        if g.shape != ref.shape:
            raise DimensionError(f"{name} has shape {g.shape}, expected {ref.shape}")

    batched = cache.x.ndim == 2
    x, h1, e = (cache.x, cache.h1, cache.e) if batched else (cache.x[None], cache.h1[None], cache.e[None])
    if not batched:
        d_e, d_f_task, d_f_src, z1 = d_e[None], d_f_task[None], d_f_src[None], cache.z1[None]
    else:
        z1 = cache.z1

    g_W_task = e.T @ d_f_task
    g_b_task = d_f_task.sum(axis=0)
    g_W_src = e.T @ d_f_src
    g_b_src = d_f_src.sum(axis=0)
    de_total = d_e + d_f_task @ params.W_task.T + d_f_src @ params.W_src.T
    g_W2 = h1.T @ de_total
    g_b2 = de_total.sum(axis=0)
    dz1 = (de_total @ params.W2.T) * (z1 > 0)
    g_W1 = x.T @ dz1
    g_b1 = dz1.sum(axis=0)
    return ModelParams(g_W1, g_b1, g_W2, g_b2, g_W_task, g_b_task, g_W_src, g_b_src)


def adam_step(params: ModelParams, grads: ModelParams, state: AdamState, lr: float) -> tuple[ModelParams, AdamState]:
    """One bias-corrected Adam update. Inputs are not modified."""
    if lr < 0:
        raise ValueError("learning rate must be non-negative")
    garrs = grads.arrays()
    for name, g in zip(PARAM_NAMES, garrs):
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for {name}; Adam step refused")
    t = state.t + 1
    bc1 = 1.0 - ADAM_BETA1**t
    bc2 = 1.0 - ADAM_BETA2**t
    new_params, new_m, new_v = [], [], []
    for p, g, m, v in zip(params.arrays(), garrs, state.m, state.v):
        m = ADAM_BETA1 * m + (1.0 - ADAM_BETA1) * g
        v = ADAM_BETA2 * v + (1.0 - ADAM_BETA2) * (g * g)
        step = lr * (m / bc1) / (np.sqrt(v / bc2) + ADAM_EPS)
        new_params.append(p - step)
        new_m.append(m)
        new_v.append(v)
    return ModelParams(*new_params), AdamState(new_m, new_v, t)


def cosine_lr(initial: float, final: float, epoch: int, total_epochs: int) -> float:
    """Cosine decay: ``initial`` at epoch 0, ``final`` at the last epoch."""
    if total_epochs <= 1:
        return float(initial)
    frac = epoch / (total_epochs - 1)
    return float(final + 0.5 * (initial - final) * (1.0 + math.cos(math.pi * frac)))
