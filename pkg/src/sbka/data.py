"""Two-modality labelled datasets and the synthetic zero-shot generator."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError
from .losses import PHOTO, SKETCH
from .numerics import make_rng


@dataclass
class Dataset:
    """Raw inputs ``x`` (N, D_in) with class ``labels`` and ``modality`` tags.

    ``class_centers`` is only known for generated data and feeds the synthetic
    semantic prior.
    """

    x: np.ndarray
    labels: np.ndarray
    modality: np.ndarray
    seen_classes: tuple[int, ...]
    unseen_classes: tuple[int, ...]
    class_centers: np.ndarray | None = None
    source: "Dataset | None" = None
    source_centers: np.ndarray | None = None

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.modality = np.asarray(self.modality, dtype=np.uint8)
        n = self.x.shape[0]
        if self.x.ndim != 2 or self.labels.shape != (n,) or self.modality.shape != (n,):
            raise DataError("x, labels and modality must describe the same number of samples")
        if set(self.seen_classes) & set(self.unseen_classes):
            raise DataError("seen and unseen class sets overlap")
        if np.any((self.modality != SKETCH) & (self.modality != PHOTO)):
            raise DataError("modality tags must be 0 (sketch) or 1 (photo)")

    def __len__(self) -> int:
        return self.x.shape[0]

    @property
    def dim(self) -> int:
        return self.x.shape[1]

    def subset(self, mask) -> "Dataset":
        mask = np.asarray(mask)
        return Dataset(
            self.x[mask], self.labels[mask], self.modality[mask],
            self.seen_classes, self.unseen_classes, self.class_centers,
            self.source, self.source_centers,
        )

    def seen(self) -> "Dataset":
        return self.subset(np.isin(self.labels, self.seen_classes))

    def unseen(self) -> "Dataset":
        return self.subset(np.isin(self.labels, self.unseen_classes))

    def sketches(self) -> "Dataset":
        return self.subset(self.modality == SKETCH)

    def photos(self) -> "Dataset":
        return self.subset(self.modality == PHOTO)


def _orthogonal(rng: np.random.Generator, d: int) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((d, d)))
    return q * np.sign(np.diag(r))


def generate_synthetic_dataset(
    n_classes: int,
    n_seen: int,
    per_class_per_modality: int,
    d_in: int,
    modality_gap: float,
    intra_class_spread: float,
    seed: int,
    n_source_classes: int = 0,
    source_per_class: int = 0,
) -> Dataset:
    """Synthetic sketch/photo data with a shared latent class structure.

    Class ``c`` has latent centre ``mu_c ~ N(0, I)``. Photos are
    ``A_P mu_c + noise`` and sketches ``A_S mu_c + noise`` with
    ``A_S = A_P + modality_gap * dA``; ``A_P`` is a random orthogonal matrix,
    ``dA`` has N(0, 1/d_in) entries and noise is N(0, spread^2 I). Classes
    ``0..n_seen-1`` are seen, the rest unseen. Values are rounded to float32 so
    the dataset survives a round trip through an embedding file unchanged.
    """
    if not 2 <= n_seen < n_classes:
        raise ConfigError(f"need 2 <= n_seen < n_classes, got n_seen={n_seen}, n_classes={n_classes}")
    if per_class_per_modality < 2:
        raise ConfigError("per_class_per_modality must be >= 2")
    if d_in < 1:
        raise ConfigError("d_in must be >= 1")
    if modality_gap < 0 or intra_class_spread < 0:
        raise ConfigError("modality_gap and intra_class_spread must be non-negative")

    rng = make_rng(seed)
    centers = rng.standard_normal((n_classes, d_in))
    a_photo = _orthogonal(rng, d_in)
    delta = rng.standard_normal((d_in, d_in)) / np.sqrt(d_in)
    a_sketch = a_photo + modality_gap * delta

    n = per_class_per_modality
    xs, labels, mods = [], [], []
    for c in range(n_classes):
        for tag, mat in ((SKETCH, a_sketch), (PHOTO, a_photo)):
            noise = rng.standard_normal((n, d_in)) * intra_class_spread
            xs.append(centers[c] @ mat.T + noise)
            labels.append(np.full(n, c))
            mods.append(np.full(n, tag))
    x = np.concatenate(xs).astype(np.float32).astype(np.float64)

    source = source_centers = None
    if n_source_classes:
        source_centers = rng.standard_normal((n_source_classes, d_in))
        m = source_per_class or n
        sx = np.repeat(source_centers, m, axis=0) @ a_photo.T
        sx = sx + rng.standard_normal(sx.shape) * intra_class_spread
        k = np.arange(n_source_classes)
        source = Dataset(
            sx.astype(np.float32).astype(np.float64), np.repeat(k, m),
            np.full(n_source_classes * m, PHOTO), tuple(k.tolist()), (),
        )
    return Dataset(
        x,
        np.concatenate(labels),
        np.concatenate(mods),
        tuple(range(n_seen)),
        tuple(range(n_seen, n_classes)),
        class_centers=centers,
        source=source,
        source_centers=source_centers,
    )


def synthetic_prior(dataset: Dataset, k_src: int) -> np.ndarray:
    """Cosine similarity of each seen class centre to the first ``k_src`` class centres.

    Plays the part of the lexical-similarity table: row ``c`` scores how close
    training class ``c`` is to each source label.
    """
    if dataset.class_centers is None:
        raise DataError("dataset carries no class centres; supply a prior file instead")
    def unit(c):
        return c / np.linalg.norm(c, axis=1, keepdims=True)

    seen = unit(dataset.class_centers)[np.asarray(dataset.seen_classes)]
    src = dataset.source_centers if dataset.source_centers is not None else dataset.class_centers
    if k_src > src.shape[0]:
        raise ConfigError(f"k_src={k_src} exceeds the {src.shape[0]} available source classes")
    return seen @ unit(src[:k_src]).T


def zero_prior(k_train: int, k_src: int) -> np.ndarray:
    return np.zeros((k_train, k_src))
