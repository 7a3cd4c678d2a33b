"""Finite-difference audit of every analytic gradient in the training objective."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .encoder import PARAM_NAMES, ModelParams, backward, forward, init_params
from .losses import (
    build_reference,
    classification_loss,
    knowledge_alignment_loss,
    modality_alignment_loss,
    soft_label,
    student_objective,
    teacher_objective,
)
from .numerics import finite_diff_grad, make_rng, relative_error

COMPONENTS = ("encoder", "L_cls", "L_ma", "soft_label_chain", "L_ka", "composite")
TOLERANCE = 1e-4
DIMS = dict(d_in=6, h=5, d_emb=4, k_train=3, k_src=7)


@dataclass
class GradcheckResult:
    component: str
    worst_error: float
    cases: int

    @property
    def passed(self) -> bool:
        return self.worst_error < TOLERANCE


def _params_fd(loss_of_params, params: ModelParams) -> ModelParams:
    """Finite differences of a scalar function of ``params``, one tensor at a time."""
    out = []
    for name in PARAM_NAMES:
        def f(arr, name=name):
            p = params.copy()
            setattr(p, name, arr)
            return loss_of_params(p)
        out.append(finite_diff_grad(f, getattr(params, name)))
    return ModelParams(*out)


def _worst(a: ModelParams, b: ModelParams) -> float:
    return max(relative_error(x, y) for x, y in zip(a.arrays(), b.arrays()))


def _random_model(rng, dims=DIMS) -> ModelParams:
    p = init_params(dims["d_in"], dims["h"], dims["d_emb"], dims["k_train"], dims["k_src"],
                    seed=int(rng.integers(2**63)))
    # non-zero biases so every term of the chain rule is exercised
    return p.map(lambda a: a + 0.1 * rng.standard_normal(a.shape))


def _batch(rng, n, dims=DIMS):
    x = rng.standard_normal((n, dims["d_in"]))
    labels = rng.integers(0, dims["k_train"], n)
    modality = np.arange(n) % 2
    prior = rng.standard_normal((n, dims["k_src"]))
    return x, labels, modality, prior


def check_encoder(rng) -> float:
    params = _random_model(rng)
    x = rng.standard_normal((3, DIMS["d_in"]))
    c = forward(params, x)
    de, dt, ds = (rng.standard_normal(a.shape) for a in (c.e, c.f_task, c.f_src))

    def scalar(p):
        cc = forward(p, x)
        return float(np.sum(de * cc.e) + np.sum(dt * cc.f_task) + np.sum(ds * cc.f_src))

    return _worst(backward(params, c, de, dt, ds), _params_fd(scalar, params))


def check_cls(rng) -> float:
    logits = rng.standard_normal((4, DIMS["k_train"])) * 2
    labels = rng.integers(0, DIMS["k_train"], 4)
    _, g = classification_loss(logits, labels)
    return relative_error(g, finite_diff_grad(lambda z: classification_loss(z, labels)[0], logits))


def check_ma(rng) -> float:
    ref = build_reference(int(rng.integers(2**63)), 5)
    sk = rng.standard_normal((3, 5))
    ph = rng.standard_normal((2, 5))
    _, (gs, gp) = modality_alignment_loss(sk, ph, ref)
    fs = finite_diff_grad(lambda e: modality_alignment_loss(e, ph, ref)[0], sk)
    fp = finite_diff_grad(lambda e: modality_alignment_loss(sk, e, ref)[0], ph)
    return max(relative_error(gs, fs), relative_error(gp, fp))


def check_ka(rng) -> float:
    k = DIMS["k_src"]
    g = soft_label(rng.standard_normal((4, k)), rng.standard_normal((4, k)), 0.1)
    z = rng.standard_normal((4, k)) * 2
    _, grad = knowledge_alignment_loss(g, z)
    return relative_error(grad, finite_diff_grad(lambda v: knowledge_alignment_loss(g, v)[0], z))


def check_soft_label_chain(rng) -> float:
    """Teacher-side objective through the teacher encoder, student soft labels held fixed."""
    student, teacher = _random_model(rng), _random_model(rng)
    x, _, _, prior = _batch(rng, 4)
    g_s = soft_label(forward(student, x).f_src, prior, 0.1)
    c = forward(teacher, x)
    _, up = teacher_objective(c, g_s)
    analytic = backward(teacher, c, *up)
    numeric = _params_fd(lambda p: teacher_objective(forward(p, x), g_s)[0], teacher)
    return _worst(analytic, numeric)


def check_composite(rng) -> float:
    student, teacher = _random_model(rng), _random_model(rng)
    x, labels, modality, prior = _batch(rng, 4)
    ref = build_reference(int(rng.integers(2**63)), DIMS["d_emb"])
    g_t = soft_label(forward(teacher, x).f_src, prior, 0.1)
    lam = 0.1 + rng.random()
    c = forward(student, x)
    _, up = student_objective(c, g_t, labels, modality, ref, lam)
    analytic = backward(student, c, *up)

    def total(p):
        return student_objective(forward(p, x), g_t, labels, modality, ref, lam)[0].total

    return _worst(analytic, _params_fd(total, student))


CHECKS = {
    "encoder": check_encoder,
    "L_cls": check_cls,
    "L_ma": check_ma,
    "soft_label_chain": check_soft_label_chain,
    "L_ka": check_ka,
    "composite": check_composite,
}


def run_gradcheck(seed: int = 0, cases: int = 10) -> list[GradcheckResult]:
    """Worst relative error per component over ``cases`` random tiny instances."""
    results = []
    for name in COMPONENTS:
        rng = make_rng(seed * 1000 + COMPONENTS.index(name))
        worst = max(CHECKS[name](rng) for _ in range(cases))
        results.append(GradcheckResult(name, worst, cases))
    return results


def format_report(results: list[GradcheckResult]) -> str:
    lines = [f"{'component':<18} {'worst_rel_err':>14}  status"]
    for r in results:
        lines.append(f"{r.component:<18} {r.worst_error:>14.3e}  {'PASS' if r.passed else 'FAIL'}")
    return "\n".join(lines) + "\n"
