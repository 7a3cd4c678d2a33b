"""One-to-many cluster matching over a photo gallery.

Each gallery embedding is cut into ``M`` contiguous sub-vectors. A diagonal
Gaussian mixture with ``K`` components is fitted by EM in every subspace and
each gallery item is hard-assigned to its most responsible component. A query
is then scored against gallery item ``j`` by

    d(q, j) = ||q - g_j|| + sum_m ||q_m - mu[m, a(j, m)]||

and the gallery is ranked by ascending ``d``.
"""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .errors import ConfigError, DataError, DegenerateDataError, DimensionError, GalleryIndexError
from .numerics import make_rng

LOG_2PI = np.log(2.0 * np.pi)


def worker_count() -> int:
    """Worker cap from ``SBKA_THREADS``; defaults to the machine's CPU count."""
    env = os.environ.get("SBKA_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(f"SBKA_THREADS must be an integer, got {env!r}") from None
    return os.cpu_count() or 1


@dataclass
class EmConfig:
    max_iters: int = 200
    rel_tol: float = 1e-6
    var_floor: float = 1e-6
    seed: int = 0
    init_rounds: int = 1

    def __post_init__(self):
        if self.max_iters < 1:
            raise ConfigError("max_iters must be >= 1")
        if self.rel_tol <= 0 or self.var_floor <= 0:
            raise ConfigError("rel_tol and var_floor must be positive")
        if self.init_rounds < 1:
            raise ConfigError("init_rounds must be >= 1")


@dataclass
class GmmModel:
    weights: np.ndarray    # (K,)
    means: np.ndarray      # (K, d)
    variances: np.ndarray  # (K, d), diagonal covariances
    log_likelihoods: list[float] = field(default_factory=list)  # mean per point, one per E-step

    @property
    def n_components(self) -> int:
        return self.weights.shape[0]

    def component_log_density(self, x: np.ndarray) -> np.ndarray:
        """log w_k + log N(x | mu_k, diag(var_k)) for every point and component, (N, K)."""
        x = np.asarray(x, dtype=np.float64)
        diff2 = (x[:, None, :] - self.means[None, :, :]) ** 2
        maha = np.sum(diff2 / self.variances[None], axis=2)
        log_det = np.sum(np.log(self.variances), axis=1)
        d = x.shape[1]
        with np.errstate(divide="ignore"):
            log_w = np.log(self.weights)
        return log_w[None] - 0.5 * (d * LOG_2PI + log_det[None] + maha)

    def responsibilities(self, x) -> np.ndarray:
        lp = self.component_log_density(x)
        return np.exp(lp - logsumexp(lp, axis=1, keepdims=True))

    def log_likelihood(self, x) -> float:
        """Mean log density of ``x`` under the mixture."""
        return float(np.mean(logsumexp(self.component_log_density(x), axis=1)))

    def assign(self, x) -> np.ndarray:
        """Index of the most responsible component; ties go to the lowest index."""
        return np.argmax(self.component_log_density(x), axis=1)


def kmeans_plusplus(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """D^2-weighted seeding of ``k`` initial means."""
    n = x.shape[0]
    centers = np.empty((k, x.shape[1]))
    centers[0] = x[rng.integers(n)]
    d2 = np.sum((x - centers[0]) ** 2, axis=1)
    for i in range(1, k):
        total = d2.sum()
        if total <= 0:
            idx = rng.integers(n)
        else:
            idx = rng.choice(n, p=d2 / total)
        centers[i] = x[idx]
        d2 = np.minimum(d2, np.sum((x - centers[i]) ** 2, axis=1))
    return centers


def _m_step(x: np.ndarray, resp: np.ndarray, prev: GmmModel | None, var_floor: float):
    nk = resp.sum(axis=0)
    weights = nk / x.shape[0]
    safe = np.maximum(nk, 1e-300)[:, None]
    means = resp.T @ x / safe
    variances = np.empty_like(means)
    # centred form; E[x^2] - mean^2 cancels badly for tight clusters
    for k in range(resp.shape[1]):
        diff = x - means[k]
        variances[k] = resp[:, k] @ (diff * diff) / safe[k]
    empty = nk < 1e-10
    if prev is not None and empty.any():
        means[empty] = prev.means[empty]
        variances[empty] = prev.variances[empty]
    variances = np.maximum(variances, var_floor)
    return weights, means, variances


def _run_em(x: np.ndarray, init_means: np.ndarray, cfg: EmConfig) -> GmmModel:
    k = init_means.shape[0]
    base_var = np.maximum(x.var(axis=0), cfg.var_floor)
    model = GmmModel(np.full(k, 1.0 / k), init_means.copy(), np.tile(base_var, (k, 1)))
    history: list[float] = []
    for _ in range(cfg.max_iters):
        lp = model.component_log_density(x)
        norm = logsumexp(lp, axis=1, keepdims=True)
        ll = float(np.mean(norm))
        resp = np.exp(lp - norm)
        if history and (ll - history[-1]) < cfg.rel_tol * abs(history[-1]):
            history.append(ll)
            break
        history.append(ll)
        model = GmmModel(*_m_step(x, resp, model, cfg.var_floor))
    else:
        history.append(model.log_likelihood(x))
    model.log_likelihoods = history
    return model


def fit_gmm(features, k: int, cfg: EmConfig | None = None) -> GmmModel:
    """Diagonal-covariance GMM fitted by EM from a seeded k-means++ start.

    The returned model carries the per-iteration mean log-likelihoods in
    ``log_likelihoods``. With ``cfg.init_rounds > 1`` the run with the best
    final likelihood is kept.
    """
    cfg = cfg or EmConfig()
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2:
        raise DimensionError("features must be a 2-D batch")
    if k < 1:
        raise ConfigError("K must be >= 1")
    if x.shape[0] < k:
        raise DataError(f"{x.shape[0]} points cannot support {k} components")
    if not np.all(np.isfinite(x)):
        raise DataError("features contain non-finite values")
    if k > 1 and np.all(x == x[0]):
        raise DegenerateDataError("all features identical; cannot fit more than one component")

    rng = make_rng(cfg.seed)
    best = None
    for _ in range(cfg.init_rounds):
        model = _run_em(x, kmeans_plusplus(x, k, rng), cfg)
        if best is None or model.log_likelihoods[-1] > best.log_likelihoods[-1]:
            best = model
    return best


@dataclass
class SubspaceCodebook:
    gmms: list[GmmModel]
    assignments: np.ndarray  # (gallery_count, M), component index per subspace
    subdim: int

    @property
    def M(self) -> int:
        return len(self.gmms)

    @property
    def K(self) -> int:
        return self.gmms[0].n_components

    @property
    def dim(self) -> int:
        return self.M * self.subdim

    @property
    def gallery_count(self) -> int:
        return self.assignments.shape[0]

    def centroid_vectors(self) -> np.ndarray:
        """Concatenated assigned centroids for every gallery item, (gallery_count, D_emb)."""
        parts = [g.means[self.assignments[:, m]] for m, g in enumerate(self.gmms)]
        return np.concatenate(parts, axis=1)


def fit_subspace_codebook(gallery_embs, M: int, K: int, cfg: EmConfig | None = None) -> SubspaceCodebook:
    """Fit one ``K``-component GMM per contiguous subspace; subspace ``m`` uses seed ``cfg.seed + m``."""
    cfg = cfg or EmConfig()
    g = np.asarray(gallery_embs, dtype=np.float64)
    if g.ndim != 2 or g.shape[0] == 0:
        raise DataError("gallery must be a non-empty batch of embeddings")
    if M < 1 or g.shape[1] % M:
        raise ConfigError(f"embedding dimension D_emb={g.shape[1]} is not divisible by M={M}")
    sub = g.shape[1] // M

    def fit(m):
        sub_cfg = EmConfig(cfg.max_iters, cfg.rel_tol, cfg.var_floor, (cfg.seed + m) % 2**64, cfg.init_rounds)
        return fit_gmm(g[:, m * sub:(m + 1) * sub], K, sub_cfg)

    workers = min(worker_count(), M)
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            gmms = list(pool.map(fit, range(M)))
    else:
        gmms = [fit(m) for m in range(M)]
    assignments = np.stack(
        [gm.assign(g[:, m * sub:(m + 1) * sub]) for m, gm in enumerate(gmms)], axis=1
    ).astype(np.int64)
    return SubspaceCodebook(gmms, assignments, sub)


def _row_norms(diff: np.ndarray) -> np.ndarray:
    return np.sqrt(np.sum(diff * diff, axis=-1))


def _fused_scores(query: np.ndarray, gallery: np.ndarray, centroids: np.ndarray, M: int, subdim: int) -> np.ndarray:
    direct = _row_norms(gallery - query)
    q_sub = query.reshape(M, subdim)
    c_sub = centroids.reshape(centroids.shape[0], M, subdim)
    return direct + np.sum(_row_norms(c_sub - q_sub), axis=1)


def fused_dissimilarity(query_emb, gallery_emb, gallery_index: int, codebook: SubspaceCodebook) -> float:
    q = np.asarray(query_emb, dtype=np.float64)
    g = np.asarray(gallery_emb, dtype=np.float64)
    if q.shape != (codebook.dim,) or g.shape != (codebook.dim,):
        raise DimensionError(f"embeddings must have dimension {codebook.dim}")
    if not 0 <= gallery_index < codebook.gallery_count:
        raise GalleryIndexError(f"gallery index {gallery_index} outside [0, {codebook.gallery_count})")
    cent = np.concatenate(
        [gm.means[codebook.assignments[gallery_index, m]] for m, gm in enumerate(codebook.gmms)]
    )
    return float(_fused_scores(q, g[None], cent[None], codebook.M, codebook.subdim)[0])


def retrieve(query_emb, gallery_embs, codebook: SubspaceCodebook | None, one_to_one: bool = False) -> np.ndarray:
    """Full gallery ranking by ascending dissimilarity, ties by gallery index.

    ``one_to_one`` drops the centroid terms and ranks by plain Euclidean distance;
    ``codebook`` may then be ``None``.
    """
    q = np.asarray(query_emb, dtype=np.float64)
    g = np.asarray(gallery_embs, dtype=np.float64)
    if g.ndim != 2 or g.shape[0] == 0:
        raise DataError("gallery is empty")
    if g.shape[1] != q.shape[-1]:
        raise DimensionError(f"query dimension {q.shape[-1]} differs from gallery dimension {g.shape[1]}")
    if one_to_one:
        scores = _row_norms(g - q)
    else:
        if codebook is None:
            raise ConfigError("fused retrieval needs a codebook")
        if codebook.gallery_count != g.shape[0] or codebook.dim != g.shape[1]:
            raise DimensionError(
                f"codebook covers {codebook.gallery_count} items of dim {codebook.dim}, "
                f"gallery has {g.shape[0]} of dim {g.shape[1]}"
            )
        scores = _fused_scores(q, g, codebook.centroid_vectors(), codebook.M, codebook.subdim)
    return np.argsort(scores, kind="stable")


def retrieve_all(queries, gallery_embs, codebook: SubspaceCodebook | None, one_to_one: bool = False) -> np.ndarray:
    """Rankings for a batch of queries, (n_queries, gallery_count)."""
    queries = np.asarray(queries, dtype=np.float64)
    return np.stack([retrieve(q, gallery_embs, codebook, one_to_one) for q in queries]) if len(queries) else np.empty((0, len(gallery_embs)), dtype=np.int64)
