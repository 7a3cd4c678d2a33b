"""Bit-exact file formats. All integers and floats are little-endian; floats are float32.

Embedding file::

    b"SBKAEMB1" | u32 dim | u64 count | f32[count*dim] | u32[count] labels | u8[count] modality

Model checkpoint::

    b"SBKAMDL1" | u32 D_in, H, D_emb, K_train, K_src | f32 W1, b1, W2, b2, W_task, b_task, W_src, b_src

Matrices are row-major with the shapes documented in :mod:`sbka.encoder`.

Codebook::

    b"SBKACBK1" | u32 M | u32 K | u32 subdim | u64 gallery_count
    | per subspace: f32 weights[K], means[K*subdim], variances[K*subdim]
    | u32 assignments[gallery_count*M]  (item-major)

Semantic prior: text, one row per training class, whitespace-separated decimals.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .cluster import GmmModel, SubspaceCodebook
from .encoder import PARAM_NAMES, ModelParams
from .errors import DimensionError, FormatError

EMB_MAGIC = b"SBKAEMB1"
MDL_MAGIC = b"SBKAMDL1"
CBK_MAGIC = b"SBKACBK1"


class _Reader:
    def __init__(self, buf: bytes, what: str):
        self.buf = buf
        self.pos = 0
        self.what = what

    def take(self, n: int, field: str) -> bytes:
        if self.pos + n > len(self.buf):
            raise FormatError(
                f"{self.what}: truncated at offset {self.pos} reading {field} "
                f"(need {n} bytes, {len(self.buf) - self.pos} left)"
            )
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def magic(self, expected: bytes) -> None:
        got = self.buf[:len(expected)]
        if got != expected:
            raise FormatError(f"{self.what}: expected magic {expected!r} at offset 0, found {got!r}")
        self.pos = len(expected)

    def u32(self, field: str, n: int | None = None):
        raw = self.take(4 * (1 if n is None else n), field)
        return struct.unpack("<I", raw)[0] if n is None else np.frombuffer(raw, "<u4").astype(np.int64)

    def u64(self, field: str) -> int:
        return struct.unpack("<Q", self.take(8, field))[0]

    def f32(self, n: int, field: str) -> np.ndarray:
        return np.frombuffer(self.take(4 * n, field), "<f4").astype(np.float64)

    def done(self) -> None:
        if self.pos != len(self.buf):
            raise FormatError(f"{self.what}: {len(self.buf) - self.pos} unexpected trailing bytes at offset {self.pos}")


def _f32(a) -> bytes:
    a = np.asarray(a, dtype=np.float64)
    if not np.all(np.isfinite(a)):
        raise FormatError("refusing to serialise non-finite values")
    return np.ascontiguousarray(a, dtype="<f4").tobytes()


def _u32(a) -> bytes:
    a = np.asarray(a)
    if a.size and (a.min() < 0 or a.max() >= 2**32):
        raise FormatError("value out of u32 range")
    return np.ascontiguousarray(a, dtype="<u4").tobytes()


def _read_bytes(path) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise FormatError(f"cannot read {path}: {exc}") from exc


def _write_bytes(path, data: bytes) -> None:
    try:
        Path(path).write_bytes(data)
    except OSError as exc:
        raise FormatError(f"cannot write {path}: {exc}") from exc


# embeddings ---------------------------------------------------------------

def encode_embeddings(x, labels, modality) -> bytes:
    x = np.asarray(x)
    if x.ndim != 2:
        raise DimensionError("embeddings must be a 2-D array")
    count, dim = x.shape
    labels = np.asarray(labels).reshape(-1)
    modality = np.asarray(modality).reshape(-1)
    if labels.shape[0] != count or modality.shape[0] != count:
        raise DimensionError("labels and modality tags must have one entry per row")
    if np.any((modality != 0) & (modality != 1)):
        raise FormatError("modality tags must be 0 or 1")
    return b"".join([
        EMB_MAGIC, struct.pack("<IQ", dim, count), _f32(x), _u32(labels),
        np.ascontiguousarray(modality, dtype=np.uint8).tobytes(),
    ])


def decode_embeddings(buf: bytes, n_classes: int | None = None):
    """Returns ``(x, labels, modality)``."""
    r = _Reader(buf, "embedding file")
    r.magic(EMB_MAGIC)
    dim = r.u32("dim")
    count = r.u64("count")
    x = r.f32(count * dim, "values").reshape(count, dim)
    labels = r.u32("labels", count)
    modality = np.frombuffer(r.take(count, "modality tags"), np.uint8).copy()
    r.done()
    if np.any(modality > 1):
        raise FormatError("embedding file: modality tags must be 0 or 1")
    if n_classes is not None and count and labels.max() >= n_classes:
        raise FormatError(f"embedding file: label {labels.max()} >= declared class count {n_classes}")
    return x, labels, modality


def write_embeddings(path, x, labels, modality) -> None:
    _write_bytes(path, encode_embeddings(x, labels, modality))


def read_embeddings(path, n_classes: int | None = None):
    return decode_embeddings(_read_bytes(path), n_classes)


# checkpoints --------------------------------------------------------------

def encode_checkpoint(params: ModelParams) -> bytes:
    return MDL_MAGIC + struct.pack("<5I", *params.dims) + b"".join(_f32(a) for a in params.arrays())


def decode_checkpoint(buf: bytes) -> ModelParams:
    r = _Reader(buf, "model checkpoint")
    r.magic(MDL_MAGIC)
    d_in, h, d_emb, k_train, k_src = (r.u32(n) for n in ("D_in", "H", "D_emb", "K_train", "K_src"))
    shapes = [(d_in, h), (h,), (h, d_emb), (d_emb,), (d_emb, k_train), (k_train,), (d_emb, k_src), (k_src,)]
    arrays = [r.f32(int(np.prod(s)), name).reshape(s) for name, s in zip(PARAM_NAMES, shapes)]
    r.done()
    return ModelParams(*arrays)


def write_checkpoint(path, params: ModelParams) -> None:
    _write_bytes(path, encode_checkpoint(params))


def read_checkpoint(path) -> ModelParams:
    return decode_checkpoint(_read_bytes(path))


# codebooks ----------------------------------------------------------------

def encode_codebook(cb: SubspaceCodebook) -> bytes:
    parts = [CBK_MAGIC, struct.pack("<IIIQ", cb.M, cb.K, cb.subdim, cb.gallery_count)]
    for g in cb.gmms:
        parts += [_f32(g.weights), _f32(g.means), _f32(g.variances)]
    parts.append(_u32(cb.assignments))
    return b"".join(parts)


def decode_codebook(buf: bytes) -> SubspaceCodebook:
    r = _Reader(buf, "codebook")
    r.magic(CBK_MAGIC)
    M = r.u32("M")
    K = r.u32("K")
    subdim = r.u32("subdim")
    count = r.u64("gallery_count")
    if M == 0 or K == 0 or subdim == 0:
        raise FormatError("codebook: M, K and subdim must be positive")
    gmms = []
    for m in range(M):
        w = r.f32(K, f"weights[{m}]")
        mu = r.f32(K * subdim, f"means[{m}]").reshape(K, subdim)
        var = r.f32(K * subdim, f"variances[{m}]").reshape(K, subdim)
        gmms.append(GmmModel(w, mu, var))
    assignments = r.u32("assignments", count * M).reshape(count, M)
    r.done()
    if assignments.size and assignments.max() >= K:
        raise FormatError(f"codebook: assignment index {assignments.max()} >= K={K}")
    return SubspaceCodebook(gmms, assignments, subdim)


def write_codebook(path, cb: SubspaceCodebook) -> None:
    _write_bytes(path, encode_codebook(cb))


def read_codebook(path) -> SubspaceCodebook:
    return decode_codebook(_read_bytes(path))


# semantic prior -----------------------------------------------------------

def format_prior(prior) -> str:
    prior = np.asarray(prior, dtype=np.float64)
    return "".join(" ".join(repr(float(v)) for v in row) + "\n" for row in prior)


def parse_prior(text: str, k_train: int | None = None, k_src: int | None = None) -> np.ndarray:
    rows = []
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        try:
            rows.append([float(tok) for tok in line.split()])
        except ValueError as exc:
            raise FormatError(f"prior file line {lineno}: {exc}") from exc
    if not rows or len({len(r) for r in rows}) != 1:
        raise FormatError("prior file must hold equal-length, non-empty rows")
    prior = np.array(rows)
    if not np.all(np.isfinite(prior)):
        raise FormatError("prior file contains non-finite values")
    if k_train is not None and prior.shape[0] != k_train:
        raise FormatError(f"prior file has {prior.shape[0]} rows, expected K_train={k_train}")
    if k_src is not None and prior.shape[1] != k_src:
        raise FormatError(f"prior file has {prior.shape[1]} columns, expected K_src={k_src}")
    return prior


def write_prior(path, prior) -> None:
    _write_bytes(path, format_prior(prior).encode())


def read_prior(path, k_train: int | None = None, k_src: int | None = None) -> np.ndarray:
    return parse_prior(_read_bytes(path).decode(), k_train, k_src)
