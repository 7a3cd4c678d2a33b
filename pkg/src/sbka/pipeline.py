"""End-to-end runs on synthetic data: train, fit the codebook, rank, score."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .cluster import SubspaceCodebook, fit_subspace_codebook, retrieve_all
from .config import RunConfig
from .data import Dataset, generate_synthetic_dataset, synthetic_prior
from .encoder import ModelParams, embed, init_params
from .errors import ConfigError, DataError
from .metrics import MetricsReport, evaluate_rankings
from .trainer import TrainConfig, TrainHistory, model_dims, pretrain_teacher, train_sbka

log = logging.getLogger(__name__)


def make_dataset(cfg: RunConfig) -> Dataset:
    return generate_synthetic_dataset(
        cfg.n_classes, cfg.n_seen, cfg.per_class_per_modality, cfg.d_in,
        cfg.modality_gap, cfg.intra_class_spread, cfg.seed_dataset,
        cfg.n_source_classes, cfg.source_per_class,
    )


@dataclass
class TrainedModels:
    student: ModelParams
    teacher: ModelParams
    pretrained_teacher: ModelParams
    history: TrainHistory


def train_models(dataset: Dataset, prior: np.ndarray, tcfg: TrainConfig, teacher: ModelParams | None = None) -> TrainedModels:
    """Pretrain the teacher (unless given), initialise the student and run the alternating loop."""
    if teacher is None:
        teacher = pretrain_teacher(dataset, tcfg)
    student = init_params(*model_dims(dataset, tcfg), seed=tcfg.seed_init)
    s, t, hist = train_sbka(student, teacher, dataset, prior, tcfg)
    return TrainedModels(s, t, teacher, hist)


def split_queries_gallery(data: Dataset) -> tuple[Dataset, Dataset]:
    queries, gallery = data.sketches(), data.photos()
    if len(queries) == 0 or len(gallery) == 0:
        raise DataError("need sketch queries and a photo gallery")
    return queries, gallery


def fit_gallery_codebook(student: ModelParams, gallery: Dataset, cfg: RunConfig, clusters: int | None = None) -> SubspaceCodebook:
    k = clusters or cfg.clusters or len(np.unique(gallery.labels))
    return fit_subspace_codebook(embed(student, gallery.x), cfg.subspaces, k, cfg.em_config())


def evaluate_student(
    student: ModelParams,
    test: Dataset,
    cfg: RunConfig,
    one_to_one: bool = False,
    codebook: SubspaceCodebook | None = None,
    clusters: int | None = None,
) -> MetricsReport:
    """Sketch-to-photo retrieval scores on ``test`` (normally the unseen split)."""
    queries, gallery = split_queries_gallery(test)
    g_emb = embed(student, gallery.x)
    if not one_to_one and codebook is None:
        codebook = fit_gallery_codebook(student, gallery, cfg, clusters)
    rankings = retrieve_all(embed(student, queries.x), g_emb, codebook, one_to_one)
    return evaluate_rankings(rankings, queries.labels, gallery.labels, cfg.metric_k)


ABLATION_ROWS = (
    # (bidirectional alignment, one-to-many matching)
    (False, False),
    (True, False),
    (True, True),
)
ABLATION_METRICS = ("map_all", "prec_at_k")


@dataclass
class AblationRow:
    bidirectional: bool
    one_to_many: bool
    metric: str
    mean: float
    std: float
    values: list[float]


def run_ablation(cfg: RunConfig, repetitions: int, base_seed: int | None = None) -> list[AblationRow]:
    """Three-row ablation on the unseen split.

    Row 1 keeps the teacher frozen for the whole run (``warmup_epochs =
    total_epochs``) and ranks one-to-one; row 2 enables the teacher updates
    after ``cfg.warmup_epochs``; row 3 adds cluster matching to row 2. Every
    repetition ``r`` re-derives all seeds from ``base_seed + r``; ``base_seed``
    defaults to ``cfg.seed_dataset``.
    """
    if repetitions < 1:
        raise ConfigError("repetitions must be >= 1")
    base = cfg.seed_dataset if base_seed is None else base_seed
    scores = {(row, m): [] for row in ABLATION_ROWS for m in ABLATION_METRICS}
    for rep in range(repetitions):
        rcfg = cfg.reseeded(base + rep)
        data = make_dataset(rcfg)
        tcfg = rcfg.train_config()
        prior = synthetic_prior(data, tcfg.resolved_k_src(data))
        teacher = pretrain_teacher(data, tcfg)
        frozen_cfg = rcfg.replace(warmup_epochs=rcfg.total_epochs).train_config()
        baseline = train_models(data, prior, frozen_cfg, teacher)
        bidir = baseline if rcfg.warmup_epochs >= rcfg.total_epochs else train_models(data, prior, tcfg, teacher)
        test = data.unseen()
        reports = {
            ABLATION_ROWS[0]: evaluate_student(baseline.student, test, rcfg, one_to_one=True),
            ABLATION_ROWS[1]: evaluate_student(bidir.student, test, rcfg, one_to_one=True),
            ABLATION_ROWS[2]: evaluate_student(bidir.student, test, rcfg, one_to_one=False),
        }
        for row, rep_report in reports.items():
            for m in ABLATION_METRICS:
                scores[row, m].append(getattr(rep_report, m))
        log.info("ablation rep %d: %s", rep, [round(r.map_all, 4) for r in reports.values()])
    return [
        AblationRow(row[0], row[1], m, float(np.mean(v)), float(np.std(v)), v)
        for row in ABLATION_ROWS
        for m in ABLATION_METRICS
        for v in [scores[row, m]]
    ]


LAMBDA_MA_SWEEP = (0.01, 0.1, 1.0, 10.0)


def cluster_sweep_values(true_k: int) -> list[int]:
    """Cluster counts around ``true_k``: half, one fewer, exact, one more, double."""
    return sorted({v for v in (true_k // 2, true_k - 1, true_k, true_k + 1, 2 * true_k) if v >= 1})


@dataclass
class SweepPoint:
    parameter: str
    value: float
    map_all: float
    map_all_std: float
    prec_at_k: float
    reports: list[MetricsReport]


def _summarise(parameter, value, reports) -> SweepPoint:
    maps = [r.map_all for r in reports]
    return SweepPoint(parameter, value, float(np.mean(maps)), float(np.std(maps)),
                      float(np.mean([r.prec_at_k for r in reports])), reports)


def sweep_lambda_ma(cfg: RunConfig, values=LAMBDA_MA_SWEEP, repetitions: int = 1, base_seed: int | None = None) -> list[SweepPoint]:
    """Retrain with each modality-alignment weight; fused retrieval on the unseen split."""
    base = cfg.seed_dataset if base_seed is None else base_seed
    out = []
    for lam in values:
        reports = []
        for rep in range(repetitions):
            rcfg = cfg.reseeded(base + rep).replace(lambda_ma=lam)
            data = make_dataset(rcfg)
            tcfg = rcfg.train_config()
            models = train_models(data, synthetic_prior(data, tcfg.resolved_k_src(data)), tcfg)
            reports.append(evaluate_student(models.student, data.unseen(), rcfg))
        out.append(_summarise("lambda_ma", lam, reports))
    return out


def sweep_clusters(cfg: RunConfig, values=None, repetitions: int = 1, base_seed: int | None = None) -> list[SweepPoint]:
    """One trained student per repetition, re-clustered at every cluster count."""
    base = cfg.seed_dataset if base_seed is None else base_seed
    true_k = cfg.n_classes - cfg.n_seen
    values = list(values) if values is not None else cluster_sweep_values(true_k)
    reports: dict[int, list[MetricsReport]] = {k: [] for k in values}
    for rep in range(repetitions):
        rcfg = cfg.reseeded(base + rep)
        data = make_dataset(rcfg)
        tcfg = rcfg.train_config()
        models = train_models(data, synthetic_prior(data, tcfg.resolved_k_src(data)), tcfg)
        test = data.unseen()
        for k in values:
            reports[k].append(evaluate_student(models.student, test, rcfg, clusters=k))
    return [_summarise("clusters", k, reports[k]) for k in values]
