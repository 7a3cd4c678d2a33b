"""Ranking metrics: average precision (full and truncated) and precision@K."""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConfigError, DataError, UndefinedMetricError

log = logging.getLogger(__name__)


def average_precision(flags, n_relevant: int, k: int | None = None) -> float:
    """AP over the first ``k`` ranks (all ranks when ``k`` is None).

    The sum of precision@i at each relevant rank i is divided by
    ``min(n_relevant, k)``.

    >>> average_precision([1, 0, 1], 2)
    0.8333333333333333
    """
    if n_relevant < 1:
        raise UndefinedMetricError("average precision is undefined without relevant items")
    rel = np.asarray(flags, dtype=bool)
    if k is not None:
        if k < 1:
            raise ConfigError("cutoff K must be >= 1")
        rel = rel[:k]
        norm = min(n_relevant, k)
    else:
        norm = n_relevant
    if not rel.any():
        return 0.0
    hits = np.cumsum(rel)
    ranks = np.arange(1, rel.size + 1)
    return float(np.sum(hits[rel] / ranks[rel]) / norm)


def precision_at(flags, k: int) -> float:
    """Relevant items among the top ``k``, divided by ``k``."""
    if k < 1:
        raise ConfigError("K must be >= 1")
    rel = np.asarray(flags, dtype=bool)
    return float(np.count_nonzero(rel[:k]) / k)


@dataclass
class RankedResult:
    query_label: int
    ranking: np.ndarray
    gallery_labels: np.ndarray

    def relevance(self) -> np.ndarray:
        return np.asarray(self.gallery_labels)[np.asarray(self.ranking)] == self.query_label


@dataclass
class MetricsReport:
    map_all: float
    map_at_k: float
    prec_at_k: float
    k: int
    evaluated_queries: int
    skipped_queries: int
    per_query_ap: list[float] = field(default_factory=list)

    def to_json(self, include_per_query: bool = False) -> str:
        d = asdict(self)
        if not include_per_query:
            d.pop("per_query_ap")
        return json.dumps(d, indent=2, sort_keys=False) + "\n"


def evaluate(results: list[RankedResult], k: int) -> MetricsReport:
    """mAP@all, mAP@K and Prec@K over queries that have a relevant gallery item."""
    if not results:
        raise DataError("no queries to evaluate")
    if k < 1:
        raise ConfigError("K must be >= 1")
    aps, aps_k, precs = [], [], []
    skipped = 0
    for res in results:
        n_rel = int(np.count_nonzero(np.asarray(res.gallery_labels) == res.query_label))
        if n_rel == 0:
            skipped += 1
            continue
        rel = res.relevance()
        aps.append(average_precision(rel, n_rel))
        aps_k.append(average_precision(rel, n_rel, k))
        precs.append(precision_at(rel, k))
    if not aps:
        raise DataError("every query lacks a relevant gallery item")
    if skipped:
        log.warning("skipped %d queries with no relevant gallery item", skipped)
    return MetricsReport(
        map_all=float(np.mean(aps)),
        map_at_k=float(np.mean(aps_k)),
        prec_at_k=float(np.mean(precs)),
        k=k,
        evaluated_queries=len(aps),
        skipped_queries=skipped,
        per_query_ap=[float(a) for a in aps],
    )


def evaluate_rankings(rankings: np.ndarray, query_labels, gallery_labels, k: int) -> MetricsReport:
    gallery_labels = np.asarray(gallery_labels)
    return evaluate(
        [RankedResult(int(lbl), r, gallery_labels) for lbl, r in zip(query_labels, rankings)], k
    )
