import numpy as np
import pytest

from sbka.config import RunConfig
from sbka.errors import ConfigError
from sbka.pipeline import (
    ABLATION_METRICS,
    ABLATION_ROWS,
    cluster_sweep_values,
    evaluate_student,
    make_dataset,
    run_ablation,
    sweep_clusters,
    sweep_lambda_ma,
    train_models,
)
from sbka.data import synthetic_prior

SMALL = RunConfig(n_classes=6, n_seen=4, per_class_per_modality=6, d_in=6, hidden=8, d_emb=4,
                  total_epochs=4, warmup_epochs=2, batch_size=8, pretrain_epochs=5, metric_k=5,
                  em_init_rounds=1)


def test_ablation_schema():
    rows = run_ablation(SMALL, 1)
    assert [(r.bidirectional, r.one_to_many, r.metric) for r in rows] == [
        (b, o, m) for b, o in ABLATION_ROWS for m in ABLATION_METRICS
    ]
    assert all(0.0 <= r.mean <= 1.0 and r.std == 0.0 and len(r.values) == 1 for r in rows)
    with pytest.raises(ConfigError):
        run_ablation(SMALL, 0)


def test_ablation_without_training_differs_only_by_matching():
    cfg = SMALL.replace(lr_student_initial=0.0, lr_student_final=0.0)
    rows = {(r.bidirectional, r.one_to_many, r.metric): r.mean for r in run_ablation(cfg, 1)}
    for m in ABLATION_METRICS:
        assert rows[False, False, m] == rows[True, False, m]


def test_ablation_repetitions_use_distinct_seeds():
    rows = run_ablation(SMALL, 2)
    assert rows[0].values[0] != rows[0].values[1] or rows[4].values[0] != rows[4].values[1]
    again = run_ablation(SMALL, 2)
    assert [r.values for r in rows] == [r.values for r in again]


def test_cluster_sweep_values():
    assert cluster_sweep_values(6) == [3, 5, 6, 7, 12]
    assert cluster_sweep_values(1) == [1, 2]
    assert cluster_sweep_values(2) == [1, 2, 3, 4]


def test_sweeps_emit_one_point_per_setting():
    lam = sweep_lambda_ma(SMALL, values=(0.01, 10.0))
    assert [p.value for p in lam] == [0.01, 10.0]
    assert all(np.isfinite(p.map_all) and len(p.reports) == 1 for p in lam)
    ks = sweep_clusters(SMALL, repetitions=2)
    assert [p.value for p in ks] == cluster_sweep_values(2)
    assert all(len(p.reports) == 2 for p in ks)


def test_fused_not_worse_than_one_to_one_on_noisy_data():
    """Centroid terms pull same-class photos together when classes are spread out."""
    cfg = RunConfig(intra_class_spread=0.9)
    fused, plain = [], []
    for seed in range(5):
        rcfg = cfg.reseeded(100 + seed)
        data = make_dataset(rcfg)
        tcfg = rcfg.train_config()
        student = train_models(data, synthetic_prior(data, tcfg.resolved_k_src(data)), tcfg).student
        fused.append(evaluate_student(student, data.unseen(), rcfg).map_all)
        plain.append(evaluate_student(student, data.unseen(), rcfg, one_to_one=True).map_all)
    assert np.mean(fused) >= np.mean(plain)
