"""Acceptance gate: one group of checks per criterion, tagged with ``criterion(n)``.

The per-criterion verdicts are printed by the terminal-summary hook in conftest.
"""
import math
from fractions import Fraction

import numpy as np
import pytest

from sbka import formats
from sbka.cluster import EmConfig, fit_gmm, fit_subspace_codebook, fused_dissimilarity, retrieve
from sbka.config import RunConfig
from sbka.encoder import init_params
from sbka.errors import FormatError
from sbka.gradcheck import COMPONENTS, run_gradcheck
from sbka.metrics import average_precision, evaluate_rankings
from sbka.numerics import make_rng
from sbka.pipeline import cluster_sweep_values, run_ablation, sweep_clusters, sweep_lambda_ma

import test_trainer
from test_cluster import _brute_d, fixed_codebook


# 1 -------------------------------------------------------------------------------

@pytest.mark.criterion(1)
@pytest.mark.parametrize("seed", [0, 1])
def test_c1_gradients_match_finite_differences(seed):
    results = run_gradcheck(seed=seed, cases=50)
    assert [r.component for r in results] == list(COMPONENTS)
    for r in results:
        assert r.cases == 50
        assert r.worst_error < 1e-4, (r.component, r.worst_error)


# 2 -------------------------------------------------------------------------------

@pytest.mark.criterion(2)
def test_c2a_teacher_frozen_during_warmup():
    test_trainer.test_teacher_frozen_during_warmup()


@pytest.mark.criterion(2)
def test_c2b_full_warmup_is_unidirectional():
    test_trainer.test_full_freeze_is_unidirectional_distillation()


@pytest.mark.criterion(2)
def test_c2c_single_step_trace():
    test_trainer.test_single_step_matches_hand_trace()


# 3 -------------------------------------------------------------------------------

@pytest.mark.criterion(3)
def test_c3_log_likelihood_monotone_on_every_fit():
    for seed in range(60):
        rng = make_rng(seed)
        d = int(rng.integers(1, 5))
        k = int(rng.integers(1, 6))
        x = rng.standard_normal((40, d)) * rng.uniform(0.1, 3.0, d) + rng.integers(-3, 4, (40, 1))
        ll = fit_gmm(x, k, EmConfig(seed=seed, init_rounds=2)).log_likelihoods
        assert all(b >= a - 1e-8 for a, b in zip(ll, ll[1:])), seed


@pytest.mark.criterion(3)
def test_c3_single_component_closed_form():
    x = make_rng(3).standard_normal((50, 4)) * [0.3, 1.0, 2.0, 5.0] - 1.0
    gm = fit_gmm(x, 1)
    assert gm.weights.tolist() == [1.0]
    assert np.max(np.abs(gm.means[0] - x.mean(axis=0))) <= 1e-9
    assert np.max(np.abs(gm.variances[0] - np.maximum(x.var(axis=0), 1e-6))) <= 1e-9


@pytest.mark.criterion(3)
def test_c3_two_blob_recovery():
    rng = make_rng(0)
    x = np.vstack([rng.normal([5.0, 0.0], 0.2, (100, 2)), rng.normal([-5.0, 0.0], 0.2, (100, 2))])
    gm = fit_gmm(x, 2)
    order = np.argsort(gm.means[:, 0])
    assert np.max(np.abs(gm.means[order] - [[-5.0, 0.0], [5.0, 0.0]])) <= 0.1
    assert np.max(np.abs(gm.weights - 0.5)) <= 0.05


@pytest.mark.criterion(3)
def test_c3_deterministic():
    x = make_rng(8).standard_normal((60, 3))
    a, b = fit_gmm(x, 3, EmConfig(seed=5)), fit_gmm(x, 3, EmConfig(seed=5))
    assert all(getattr(a, f).tobytes() == getattr(b, f).tobytes() for f in ("weights", "means", "variances"))


# 4 -------------------------------------------------------------------------------

@pytest.mark.criterion(4)
def test_c4_worked_example():
    cb = fixed_codebook([[[3.0]], [[4.0]]], [[0, 0]])
    assert fused_dissimilarity([0.0, 0.0], [3.0, 4.0], 0, cb) == 12.0


@pytest.mark.criterion(4)
def test_c4_retrieve_matches_exhaustive_oracle():
    for inst in range(100):
        rng = make_rng(10_000 + inst)
        n = int(rng.integers(2, 21))
        m = int(rng.choice([1, 2, 3]))
        g = rng.standard_normal((n, 6))
        if inst % 10 == 0:
            g[n // 2] = g[0]  # exact duplicate to exercise the tie rule
        cb = fit_subspace_codebook(g, m, int(rng.integers(1, min(n, 4) + 1)), EmConfig(seed=inst))
        q = rng.standard_normal(6)
        d = [_brute_d(q.tolist(), g.tolist(), cb, j) for j in range(n)]
        assert retrieve(q, g, cb).tolist() == sorted(range(n), key=lambda j: (d[j], j)), inst


# 5 -------------------------------------------------------------------------------

@pytest.mark.criterion(5)
def test_c5_ap_examples():
    assert abs(average_precision([1, 1, 1, 0, 0], 3) - 1.0) <= 1e-9
    assert abs(average_precision([1, 0, 1], 2) - 5 / 6) <= 1e-9


@pytest.mark.criterion(5)
def test_c5_evaluate_matches_definition():
    rng = make_rng(2024)
    glabels = rng.integers(0, 6, 50)
    qlabels = glabels[rng.integers(0, 50, 10)]
    rankings = np.stack([rng.permutation(50) for _ in range(10)])
    rep = evaluate_rankings(rankings, qlabels, glabels, k=10)
    aps, apk, prec = [], [], []
    for q, r in zip(qlabels, rankings):
        flags = [glabels[j] == q for j in r]
        hits, full, cut = 0, Fraction(0), Fraction(0)
        for i, f in enumerate(flags, 1):
            if f:
                hits += 1
                full += Fraction(hits, i)
                if i <= 10:
                    cut += Fraction(hits, i)
        aps.append(full / hits)
        apk.append(cut / min(hits, 10))
        prec.append(Fraction(sum(flags[:10]), 10))
    assert abs(rep.map_all - float(sum(aps) / 10)) <= 1e-12
    assert abs(rep.map_at_k - float(sum(apk) / 10)) <= 1e-12
    assert abs(rep.prec_at_k - float(sum(prec) / 10)) <= 1e-12


# 6 -------------------------------------------------------------------------------

@pytest.mark.criterion(6)
def test_c6_ablation_ordering(capsys):
    rows = [r for r in run_ablation(RunConfig(), 5) if r.metric == "map_all"]
    means = [r.mean for r in rows]
    with capsys.disabled():
        print("\nablation mAP@all (frozen/1-1, +bidir, +1-to-many):", ", ".join(f"{m:.4f}" for m in means))
    assert means[0] < means[1] < means[2]


# 7 -------------------------------------------------------------------------------

@pytest.mark.criterion(7)
def test_c7_lambda_sweep_completes():
    points = sweep_lambda_ma(RunConfig(), repetitions=5)
    assert [p.value for p in points] == [0.01, 0.1, 1.0, 10.0]
    for p in points:
        assert len(p.reports) == 5
        assert all(math.isfinite(r.map_all) for r in p.reports)


@pytest.mark.criterion(7)
def test_c7_cluster_sweep_prefers_true_count(capsys):
    cfg = RunConfig()
    assert cfg.intra_class_spread >= 0.5
    true_k = cfg.n_classes - cfg.n_seen
    points = sweep_clusters(cfg, repetitions=5)
    assert [p.value for p in points] == cluster_sweep_values(true_k)
    assert all(len(p.reports) == 5 and math.isfinite(p.map_all) for p in points)
    ranked = [p.value for p in sorted(points, key=lambda p: -p.map_all)]
    with capsys.disabled():
        print("\ncluster sweep mAP@all:", ", ".join(f"k={p.value}: {p.map_all:.4f}" for p in points))
    assert true_k in ranked[:2]


# 8 -------------------------------------------------------------------------------

def _artifacts():
    rng = make_rng(5)
    x = rng.standard_normal((9, 4)).astype(np.float32).astype(np.float64)
    y, m = rng.integers(0, 3, 9), rng.integers(0, 2, 9)
    cb = fit_subspace_codebook(x, 2, 2)
    return {
        "embeddings": (formats.write_embeddings, formats.read_embeddings, (x, y, m),
                       lambda p, v: formats.write_embeddings(p, *v)),
        "checkpoint": (formats.write_checkpoint, formats.read_checkpoint, (init_params(4, 3, 2, 3, 5, seed=2),),
                       formats.write_checkpoint),
        "codebook": (formats.write_codebook, formats.read_codebook, (cb,), formats.write_codebook),
        "prior": (formats.write_prior, formats.read_prior, (rng.standard_normal((3, 5)),), formats.write_prior),
    }


@pytest.mark.criterion(8)
@pytest.mark.parametrize("kind", ["embeddings", "checkpoint", "codebook", "prior"])
def test_c8_round_trip_byte_identical(kind, tmp_path):
    write, read, args, rewrite = _artifacts()[kind]
    a, b = tmp_path / "a", tmp_path / "b"
    write(a, *args)
    rewrite(b, read(a))
    assert a.read_bytes() == b.read_bytes()


@pytest.mark.criterion(8)
@pytest.mark.parametrize("kind,magic", [("embeddings", b"SBKAEMB1"), ("checkpoint", b"SBKAMDL1"), ("codebook", b"SBKACBK1")])
def test_c8_corrupt_magic_rejected(kind, magic, tmp_path):
    write, read, args, _ = _artifacts()[kind]
    p = tmp_path / "f"
    write(p, *args)
    raw = bytearray(p.read_bytes())
    raw[0] ^= 0x20
    p.write_bytes(bytes(raw))
    with pytest.raises(FormatError) as info:
        read(p)
    assert repr(magic) in str(info.value) and "offset 0" in str(info.value)
