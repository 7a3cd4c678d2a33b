"""Flat run configuration shared by every CLI command.

A config file is a JSON object whose keys are a subset of :class:`RunConfig`'s
fields; anything else is rejected. ``--set key=value`` flags override the file
and ``--seed`` replaces every ``seed_*`` key with
``derive_seed(seed, key)`` (first 8 bytes of sha256 of ``"<seed>:<key>"``).
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path

from .cluster import EmConfig
from .errors import ConfigError
from .numerics import derive_seed
from .trainer import TrainConfig


@dataclass
class RunConfig:
    # synthetic data
    n_classes: int = 16
    n_seen: int = 10
    per_class_per_modality: int = 20
    d_in: int = 16
    modality_gap: float = 2.0
    intra_class_spread: float = 0.5
    seed_dataset: int = 11
    n_source_classes: int = 0  # 0: teacher pretrains on seen-class photos
    source_per_class: int = 0  # 0: per_class_per_modality
    # model and training
    hidden: int = 64
    d_emb: int = 32
    k_src: int = 0  # 0: number of seen classes
    lambda_ma: float = 0.1
    lambda_sem: float = 0.1
    # 100x the full-scale rates: a desk-scale run takes a few hundred steps
    lr_student_initial: float = 1e-2
    lr_student_final: float = 1e-5
    lr_teacher_initial: float = 0.0  # 0: same as student
    lr_teacher_final: float = 0.0
    warmup_epochs: int = 10
    total_epochs: int = 20
    batch_size: int = 32
    pretrain_epochs: int = 30
    pretrain_lr: float = 1e-2
    seed_init: int = 1
    seed_shuffle: int = 2
    seed_reference: int = 3
    # cluster matching
    subspaces: int = 2
    clusters: int = 0  # 0: number of gallery classes
    em_max_iters: int = 200
    em_rel_tol: float = 1e-6
    em_var_floor: float = 1e-6
    em_init_rounds: int = 5
    seed_em: int = 4
    # evaluation
    metric_k: int = 20  # gallery classes hold 20 photos each

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        for f in fields(self):
            v = getattr(self, f.name)
            want = float if f.type in ("float", float) else int
            if isinstance(v, bool) or not isinstance(v, (int, float)):
                raise ConfigError(f"config key {f.name!r} must be numeric, got {v!r}")
            if want is int and not float(v).is_integer():
                raise ConfigError(f"config key {f.name!r} must be an integer, got {v!r}")
            setattr(self, f.name, want(v))
        for name in ("n_classes", "n_seen", "per_class_per_modality", "d_in", "hidden", "d_emb",
                     "subspaces", "metric_k", "em_max_iters", "em_init_rounds"):
            if getattr(self, name) < 1:
                raise ConfigError(f"config key {name!r} must be >= 1")
        for name in ("k_src", "clusters", "pretrain_epochs", "warmup_epochs", "total_epochs"):
            if getattr(self, name) < 0:
                raise ConfigError(f"config key {name!r} must be >= 0")
        for f in fields(self):
            if f.name.startswith("seed_") and not 0 <= getattr(self, f.name) < 2**64:
                raise ConfigError(f"config key {f.name!r} must be an unsigned 64-bit integer")
        if self.n_source_classes:
            if self.k_src and self.k_src != self.n_source_classes:
                raise ConfigError("k_src must be 0 or equal n_source_classes")
        elif self.k_src and self.k_src < self.n_seen:
            raise ConfigError("k_src must be 0 or >= n_seen (source labels are seen-class labels)")
        if self.d_emb % self.subspaces:
            raise ConfigError(f"D_emb={self.d_emb} is not divisible by subspaces M={self.subspaces}")
        self.train_config()
        self.em_config()

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            lambda_ma=self.lambda_ma,
            lambda_sem=self.lambda_sem,
            lr_student_initial=self.lr_student_initial,
            lr_student_final=self.lr_student_final,
            lr_teacher_initial=self.lr_teacher_initial or None,
            lr_teacher_final=self.lr_teacher_final or None,
            warmup_epochs=self.warmup_epochs,
            total_epochs=self.total_epochs,
            batch_size=self.batch_size,
            pretrain_epochs=self.pretrain_epochs,
            pretrain_lr=self.pretrain_lr,
            hidden=self.hidden,
            d_emb=self.d_emb,
            k_src=self.k_src or self.n_source_classes or None,
            seed_init=self.seed_init,
            seed_data=self.seed_shuffle,
            seed_reference=self.seed_reference,
        )

    def em_config(self) -> EmConfig:
        return EmConfig(self.em_max_iters, self.em_rel_tol, self.em_var_floor, self.seed_em, self.em_init_rounds)

    def replace(self, **changes) -> "RunConfig":
        d = asdict(self)
        unknown = set(changes) - set(d)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        d.update(changes)
        return RunConfig(**d)

    def reseeded(self, seed: int) -> "RunConfig":
        """Every seed key replaced by a sub-seed derived from ``seed``."""
        return self.replace(**{k: derive_seed(seed, k) for k in seed_keys()})

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2) + "\n"


def seed_keys() -> list[str]:
    return [f.name for f in fields(RunConfig) if f.name.startswith("seed_")]


def schema() -> dict[str, object]:
    """Key -> default, the published config schema."""
    return asdict(RunConfig())


def from_mapping(data: dict) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    unknown = set(data) - set(schema())
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}; valid keys: {sorted(schema())}")
    return RunConfig(**data)


def load_config(path=None, overrides: list[str] | None = None, seed: int | None = None) -> RunConfig:
    data: dict = {}
    if path is not None:
        try:
            data = json.loads(Path(path).read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    cfg = from_mapping(data)
    if seed is not None:
        cfg = cfg.reseeded(seed)
    if overrides:
        changes = {}
        for item in overrides:
            key, sep, value = item.partition("=")
            if not sep:
                raise ConfigError(f"override {item!r} is not of the form key=value")
            try:
                changes[key.strip()] = json.loads(value)
            except json.JSONDecodeError:
                raise ConfigError(f"override {item!r}: value is not a number") from None
        cfg = cfg.replace(**changes)
    return cfg
