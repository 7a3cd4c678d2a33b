"""Training objectives for the student and teacher encoders.

Every loss is a sum over the batch and returns its value together with the
gradient with respect to its direct input (logits or embeddings). Soft labels
are plain arrays, so nothing ever propagates back into the model that produced
them.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .encoder import ForwardCache
from .errors import DimensionError, LabelError, NumericError
from .numerics import KL_FLOOR, log_softmax, seeded_gaussian_vector, softmax

SKETCH = 0
PHOTO = 1


@dataclass(frozen=True)
class LossBreakdown:
    l_cls: float
    l_ma: float
    l_ka: float
    total: float


@dataclass(frozen=True)
class ReferenceDistribution:
    """Fixed target for the modality-alignment term.

    ``logits`` is the Gaussian draw, ``r`` its softmax.
    """

    logits: np.ndarray
    r: np.ndarray

    @property
    def dim(self) -> int:
        return self.r.shape[0]


def _as_batch(x, name) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None]
    if x.ndim != 2 or x.shape[0] == 0:
        raise DimensionError(f"{name} must be a non-empty batch of vectors")
    return x


def classification_loss(logits, labels) -> tuple[float, np.ndarray]:
    """Cross-entropy against hard labels. Gradient rows are softmax - onehot."""
    logits = _as_batch(logits, "logits")
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    n, k = logits.shape
    if labels.shape[0] != n:
        raise DimensionError(f"{labels.shape[0]} labels for {n} logit vectors")
    if np.any(labels < 0) or np.any(labels >= k):
        raise LabelError(f"labels must lie in [0, {k})")
    logp = log_softmax(logits)
    rows = np.arange(n)
    value = float(-np.sum(logp[rows, labels]))
    grad = np.exp(logp)
    grad[rows, labels] -= 1.0
    return value, grad


def build_reference(seed: int, dim: int) -> ReferenceDistribution:
    g = seeded_gaussian_vector(seed, dim)
    return ReferenceDistribution(g, softmax(g))


def _kl_to_reference(embs: np.ndarray, log_r: np.ndarray) -> tuple[float, np.ndarray]:
    logp = log_softmax(embs)
    p = np.exp(logp)
    # 0 * log 0 contributes nothing; log_softmax is finite so p * logp is safe.
    s = logp - log_r
    kl = np.sum(p * s, axis=1)
    grad = p * (s - kl[:, None])
    return float(np.sum(kl)), grad


def modality_alignment_loss(sketch_embs, photo_embs, ref: ReferenceDistribution) -> tuple[float, tuple[np.ndarray, np.ndarray]]:
    """Sum of KL(softmax(e) || r) over sketch and photo embeddings.

    Returns ``(value, (grad_sketch, grad_photo))``.
    """
    sk = _as_batch(sketch_embs, "sketch embeddings")
    ph = _as_batch(photo_embs, "photo embeddings")
    if sk.shape[1] != ref.dim or ph.shape[1] != ref.dim:
        raise DimensionError(f"embedding dimension must equal reference dimension {ref.dim}")
    log_r = np.log(np.maximum(ref.r, KL_FLOOR))
    v_s, g_s = _kl_to_reference(sk, log_r)
    v_p, g_p = _kl_to_reference(ph, log_r)
    return max(v_s + v_p, 0.0), (g_s, g_p)


def soft_label(f_src, a, lambda_sem: float) -> np.ndarray:
    """softmax(f_src + lambda_sem * a), row-wise for batches."""
    f_src = np.asarray(f_src, dtype=np.float64)
    a = np.asarray(a, dtype=np.float64)
    if f_src.shape != a.shape:
        raise DimensionError(f"logits {f_src.shape} and prior {a.shape} differ in shape")
    return softmax(f_src + lambda_sem * a)


def knowledge_alignment_loss(soft_labels, logits) -> tuple[float, np.ndarray]:
    """Cross-entropy of own logits against fixed soft labels."""
    g = _as_batch(soft_labels, "soft labels")
    z = _as_batch(logits, "logits")
    if g.shape != z.shape:
        raise DimensionError(f"soft labels {g.shape} and logits {z.shape} differ in shape")
    logp = log_softmax(z)
    value = float(-np.sum(g * logp))
    return value, np.exp(logp) - g


def _term(name, fn, *args):
    try:
        return fn(*args)
    except NumericError as exc:
        raise NumericError(f"loss term {name}: {exc}") from exc


def student_objective(
    cache: ForwardCache,
    teacher_soft_labels,
    labels,
    modality,
    ref: ReferenceDistribution,
    lambda_ma: float,
) -> tuple[LossBreakdown, tuple[np.ndarray, np.ndarray, np.ndarray]]:
    """Classification + knowledge alignment + weighted modality alignment.

    Returns the breakdown and the upstream gradients ``(d_e, d_f_task, d_f_src)``
    ready for :func:`sbka.encoder.backward`.
    """
    modality = np.asarray(modality).reshape(-1)
    e = _as_batch(cache.e, "embeddings")
    sketch = modality == SKETCH
    photo = modality == PHOTO
    if not (sketch.any() and photo.any()):
        raise DimensionError("modality alignment needs at least one sketch and one photo")

    l_cls, d_f_task = _term("L_cls", classification_loss, cache.f_task, labels)
    l_ka, d_f_src = _term("L_ka^S", knowledge_alignment_loss, teacher_soft_labels, cache.f_src)
    l_ma, (g_s, g_p) = _term("L_ma", modality_alignment_loss, e[sketch], e[photo], ref)

    d_e = np.zeros_like(e)
    d_e[sketch] = lambda_ma * g_s
    d_e[photo] = lambda_ma * g_p
    total = l_cls + l_ka + lambda_ma * l_ma
    for name, val in (("L_cls", l_cls), ("L_ka^S", l_ka), ("L_ma", l_ma)):
        if not np.isfinite(val):
            raise NumericError(f"loss term {name} is not finite")
    if cache.e.ndim == 1:
        d_e, d_f_task, d_f_src = d_e[0], d_f_task[0], d_f_src[0]
    return LossBreakdown(l_cls, l_ma, l_ka, total), (d_e, d_f_task, d_f_src)


def teacher_objective(cache: ForwardCache, student_soft_labels) -> tuple[float, tuple[np.ndarray, np.ndarray, np.ndarray]]:
    """Knowledge alignment of the teacher's source head to student soft labels."""
    l_ka, d_f_src = _term("L_ka^T", knowledge_alignment_loss, student_soft_labels, cache.f_src)
    if not np.isfinite(l_ka):
        raise NumericError("loss term L_ka^T is not finite")
    d_f_src = d_f_src.reshape(cache.f_src.shape)
    return l_ka, (np.zeros_like(cache.e), np.zeros_like(cache.f_task), d_f_src)
