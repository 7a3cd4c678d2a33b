"""Teacher pretraining and the alternating student/teacher training loop."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset
from .encoder import AdamState, ModelParams, adam_step, backward, cosine_lr, forward, init_params
from .errors import ConfigError, DataError, DimensionError, LabelError, NumericError
from .losses import PHOTO, SKETCH, build_reference, classification_loss, soft_label, student_objective, teacher_objective
from .numerics import derive_seed, make_rng

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    lambda_ma: float = 0.1
    lambda_sem: float = 0.1
    lr_student_initial: float = 1e-4
    lr_student_final: float = 1e-7
    lr_teacher_initial: float | None = None  # None: follow the student schedule
    lr_teacher_final: float | None = None
    warmup_epochs: int = 10
    total_epochs: int = 20
    batch_size: int = 32
    pretrain_epochs: int = 30
    pretrain_lr: float = 1e-2
    hidden: int = 64
    d_emb: int = 32
    k_src: int | None = None  # None: number of seen classes
    seed_init: int = 1
    seed_data: int = 2
    seed_reference: int = 3

    def __post_init__(self):
        if not 0 <= self.warmup_epochs <= self.total_epochs:
            raise ConfigError(f"need 0 <= warmup_epochs <= total_epochs, got {self.warmup_epochs}, {self.total_epochs}")
        if self.batch_size < 2:
            raise ConfigError("batch_size must be >= 2")
        for name in ("lambda_ma", "lambda_sem", "lr_student_initial", "lr_student_final", "pretrain_lr"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")
        for name in ("lr_teacher_initial", "lr_teacher_final"):
            v = getattr(self, name)
            if v is not None and v < 0:
                raise ConfigError(f"{name} must be non-negative")
        if self.pretrain_epochs < 0:
            raise ConfigError("pretrain_epochs must be non-negative")

    @property
    def teacher_lr_bounds(self) -> tuple[float, float]:
        lo = self.lr_teacher_initial if self.lr_teacher_initial is not None else self.lr_student_initial
        hi = self.lr_teacher_final if self.lr_teacher_final is not None else self.lr_student_final
        return lo, hi

    def resolved_k_src(self, dataset: Dataset) -> int:
        return self.k_src if self.k_src is not None else len(dataset.seen_classes)


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    l_cls: float
    l_ma: float
    l_ka_s: float
    l_ka_t: float
    total_s: float
    lr_s: float
    lr_t: float
    teacher_frozen: bool
    n_samples: int


@dataclass
class TrainHistory:
    records: list[EpochRecord] = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    def to_csv(self, mean_per_sample: bool = False) -> str:
        """One line per epoch; losses are epoch sums unless ``mean_per_sample``."""
        lines = ["epoch,l_cls,l_ma,l_ka_S,l_ka_T,total_S,lr_s,lr_t,frozen"]
        for r in self.records:
            scale = 1.0 / r.n_samples if mean_per_sample and r.n_samples else 1.0
            vals = [r.l_cls, r.l_ma, r.l_ka_s, r.l_ka_t, r.total_s]
            lines.append(",".join(
                [str(r.epoch)]
                + [repr(float(v * scale)) for v in vals]
                + [repr(r.lr_s), repr(r.lr_t), str(int(r.teacher_frozen))]
            ))
        return "\n".join(lines) + "\n"


def model_dims(dataset: Dataset, cfg: TrainConfig, k_train: int | None = None) -> tuple[int, int, int, int, int]:
    k_train = k_train if k_train is not None else len(dataset.seen_classes)
    return dataset.dim, cfg.hidden, cfg.d_emb, k_train, cfg.resolved_k_src(dataset)


def _check_compatible(params: ModelParams, dataset: Dataset, who: str, label_bound: str = "K_train") -> None:
    d_in, _, _, k_train, k_src = params.dims
    if d_in != dataset.dim:
        raise DimensionError(f"{who} expects inputs of dimension {d_in}, data has {dataset.dim}")
    bound = k_train if label_bound == "K_train" else k_src
    if len(dataset) and dataset.labels.max() >= bound:
        raise LabelError(f"{who}: label {dataset.labels.max()} out of range for {label_bound}={bound}")


def pretrain_teacher(dataset: Dataset, cfg: TrainConfig, init: ModelParams | None = None) -> ModelParams:
    """Fit the teacher's encoder and source head on seen-class photos.

    Stands in for a backbone pretrained on a large photo-only corpus: the
    teacher never sees a sketch here. Source labels are the class labels.
    """
    photos = dataset.source if dataset.source is not None else dataset.seen().photos()
    if len(photos) == 0:
        raise DataError("no photos to pretrain the teacher on")
    params = init if init is not None else init_params(*model_dims(dataset, cfg), seed=derive_seed(cfg.seed_init, "teacher"))
    _check_compatible(params, photos, "teacher", "K_src")
    if cfg.pretrain_epochs == 0:
        return params

    rng = make_rng(derive_seed(cfg.seed_data, "pretrain"))
    state = AdamState.fresh(params)
    n = len(photos)
    n_batches = max(1, math.ceil(n / cfg.batch_size))
    for epoch in range(cfg.pretrain_epochs):
        lr = cosine_lr(cfg.pretrain_lr, cfg.pretrain_lr * 1e-2, epoch, cfg.pretrain_epochs)
        order = rng.permutation(n)
        for idx in np.array_split(order, n_batches):
            cache = forward(params, photos.x[idx])
            _, d_src = classification_loss(cache.f_src, photos.labels[idx])
            grads = backward(params, cache, np.zeros_like(cache.e), np.zeros_like(cache.f_task), d_src)
            params, state = adam_step(params, grads, state, lr)
    return params


def source_accuracy(params: ModelParams, dataset: Dataset) -> float:
    cache = forward(params, dataset.x)
    return float(np.mean(np.argmax(cache.f_src, axis=1) == dataset.labels))


def stratified_batches(modality: np.ndarray, batch_size: int, rng: np.random.Generator) -> list[np.ndarray]:
    """Shuffled batches that each contain at least one sketch and one photo."""
    sk = np.flatnonzero(modality == SKETCH)
    ph = np.flatnonzero(modality == PHOTO)
    if len(sk) == 0 or len(ph) == 0:
        raise DataError("training data needs both sketches and photos")
    n = len(sk) + len(ph)
    n_batches = max(1, min(math.ceil(n / batch_size), len(sk), len(ph)))
    sk_parts = np.array_split(rng.permutation(sk), n_batches)
    ph_parts = np.array_split(rng.permutation(ph), n_batches)
    return [np.sort(np.concatenate([a, b])) for a, b in zip(sk_parts, ph_parts)]


def train_step(
    student: ModelParams,
    teacher: ModelParams,
    x: np.ndarray,
    labels: np.ndarray,
    modality: np.ndarray,
    prior_rows: np.ndarray,
    ref,
    cfg: TrainConfig,
):
    """Losses and gradients for one batch, both read from pre-step parameters.

    Returns ``(breakdown, l_ka_t, student_grads, teacher_grads)``.
    """
    s_cache = forward(student, x)
    t_cache = forward(teacher, x)
    try:
        g_teacher = soft_label(t_cache.f_src, prior_rows, cfg.lambda_sem)
        g_student = soft_label(s_cache.f_src, prior_rows, cfg.lambda_sem)
    except NumericError as exc:
        raise NumericError(f"soft labels: {exc}") from exc
    breakdown, upstream = student_objective(s_cache, g_teacher, labels, modality, ref, cfg.lambda_ma)
    s_grads = backward(student, s_cache, *upstream)
    l_ka_t, t_upstream = teacher_objective(t_cache, g_student)
    t_grads = backward(teacher, t_cache, *t_upstream)
    return breakdown, l_ka_t, s_grads, t_grads


def train_sbka(
    student: ModelParams,
    teacher: ModelParams,
    dataset: Dataset,
    prior: np.ndarray,
    cfg: TrainConfig,
    on_epoch_end=None,
) -> tuple[ModelParams, ModelParams, TrainHistory]:
    """Alternating student/teacher training over the seen-class samples.

    Epochs before ``cfg.warmup_epochs`` update the student only; afterwards each
    batch updates the student on its full objective and then the teacher on its
    knowledge-alignment term, both gradients taken at the start of the step.
    ``on_epoch_end(epoch, student, teacher)`` is called after every epoch.
    """
    train = dataset.seen()
    if len(train) == 0:
        raise DataError("no seen-class samples to train on")
    _check_compatible(student, train, "student")
    _check_compatible(teacher, train, "teacher")
    if student.dims != teacher.dims:
        raise DimensionError(f"student dims {student.dims} differ from teacher dims {teacher.dims}")
    prior = np.asarray(prior, dtype=np.float64)
    k_train, k_src = student.dims[3], student.dims[4]
    if prior.shape[1:] != (k_src,) or prior.shape[0] < k_train:
        raise DimensionError(f"prior has shape {prior.shape}, expected ({k_train}, {k_src})")

    ref = build_reference(cfg.seed_reference, student.dims[2])
    rng = make_rng(cfg.seed_data)
    s_state = AdamState.fresh(student)
    t_state = AdamState.fresh(teacher)
    lt0, lt1 = cfg.teacher_lr_bounds
    history = TrainHistory()

    for epoch in range(cfg.total_epochs):
        frozen = epoch < cfg.warmup_epochs
        lr_s = cosine_lr(cfg.lr_student_initial, cfg.lr_student_final, epoch, cfg.total_epochs)
        lr_t = 0.0 if frozen else cosine_lr(lt0, lt1, epoch, cfg.total_epochs)
        sums = np.zeros(5)
        for idx in stratified_batches(train.modality, cfg.batch_size, rng):
            labels = train.labels[idx]
            bd, l_ka_t, s_grads, t_grads = train_step(
                student, teacher, train.x[idx], labels, train.modality[idx], prior[labels], ref, cfg
            )
            sums += (bd.l_cls, bd.l_ma, bd.l_ka, l_ka_t, bd.total)
            student, s_state = adam_step(student, s_grads, s_state, lr_s)
            if not frozen:
                teacher, t_state = adam_step(teacher, t_grads, t_state, lr_t)
        history.records.append(EpochRecord(epoch, *map(float, sums), lr_s, lr_t, frozen, len(train)))
        if on_epoch_end is not None:
            on_epoch_end(epoch, student, teacher)
        log.debug("epoch %d: L_S=%.4f L_ka^T=%.4f frozen=%s", epoch, sums[4], sums[3], frozen)
    return student, teacher, history
