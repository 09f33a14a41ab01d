"""Visual token compression inside the vision encoder.

Patch tokens are ranked by the attention the [CLS] token pays them. The
top ``k`` survive verbatim; the rest are grouped by spherical k-means and
each group collapses into one importance-weighted token. Spatial
down-sampling and last-layer pruning are the two baselines.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import FactorError, ScheduleError, ShapeError, ZeroVectorError
from .linalg import Rng, as_matrix, matmul, row_sums, top_rank_indices


def round_half_up(x):
    return int(math.floor(x + 0.5))


@dataclass
class KMeansConfig:
    max_iter: int = 50
    tol: float = 1e-6
    seed: int = 0
    n_init: int = 8


@dataclass
class VmtcConfig:
    target_keep_ratio: float = 0.5
    num_stages: int = 3
    clusters_per_stage: int = 4
    normalize_merge: bool = False
    insertion_layers: list = None
    # "row": [CLS] as query (default); "column": [CLS] as key.
    ips_direction: str = "row"
    kmeans: KMeansConfig = field(default_factory=KMeansConfig)


@dataclass
class TokenPartition:
    primary: np.ndarray
    redundant: np.ndarray


@dataclass
class ClusterAssignment:
    n_clusters: int
    labels: np.ndarray
    centroids: np.ndarray
    # Objective after every assign/update round; empty for the singleton branch.
    objective_history: list = field(default_factory=list)
    iterations: int = 0


@dataclass
class StagePlan:
    n_in: int
    k: int
    clusters: int
    n_out: int

    @property
    def skipped(self):
        return self.n_out == self.n_in


def importance_scores(a_w, direction="row"):
    """Per-patch importance read off the [CLS] attention (index 0 is [CLS])."""
    a_w = as_matrix(a_w, "a_w")
    if a_w.shape[0] != a_w.shape[1] or a_w.shape[0] < 1:
        raise ShapeError(f"a_w must be square and non-empty, got {a_w.shape}")
    if direction == "row":
        return a_w[0, 1:].copy()
    if direction == "column":
        return a_w[1:, 0].copy()
    raise ValueError(f"unknown ips direction {direction!r}")


def partition_tokens(ips, k):
    ips = np.asarray(ips, dtype=np.float64)
    primary = top_rank_indices(ips, k)
    keep = np.zeros(len(ips), dtype=bool)
    keep[primary] = True
    return TokenPartition(primary=primary, redundant=np.flatnonzero(~keep))


def _unit_rows(x):
    norms = np.sqrt(row_sums(x * x))
    if np.any(norms == 0.0):
        raise ZeroVectorError(f"zero-norm token at rows {np.flatnonzero(norms == 0.0).tolist()}")
    return x / norms[:, None]


def _objective(x, labels, centroids):
    sims = np.einsum("ij,ij->i", x, centroids[labels])
    return float(np.cumsum(1.0 - sims)[-1])


def _kmeans_pp(x, c, rng):
    r = x.shape[0]
    chosen = [rng.below(r)]
    dist = np.full(r, np.inf)
    while len(chosen) < c:
        sims = matmul(x, x[chosen[-1], None].T)[:, 0]
        dist = np.minimum(dist, np.maximum(0.0, 1.0 - sims))
        dist[chosen] = 0.0
        w = dist * dist
        cum = np.cumsum(w)
        if cum[-1] <= 0.0:
            chosen.append(next(i for i in range(r) if i not in chosen))
            continue
        pick = int(np.searchsorted(cum, rng.uniform(1)[0] * cum[-1], side="right"))
        pick = min(pick, r - 1)
        while w[pick] == 0.0:
            pick -= 1
        chosen.append(pick)
    return x[chosen].copy()


def _repair_empty(x, labels, centroids, c):
    """Reseed each empty cluster with the member farthest from its own centroid."""
    for j in range(c):
        counts = np.bincount(labels, minlength=c)
        if counts[j]:
            continue
        sims = np.einsum("ij,ij->i", x, centroids[labels])
        sims[counts[labels] < 2] = np.inf
        far = int(np.argmin(sims))
        labels[far] = j
        centroids[j] = x[far]
    return labels


def _lloyd(x, centroids, c, max_iter, tol):
    history = []
    labels = None
    it = 0
    for it in range(1, max_iter + 1):
        labels = np.argmax(matmul(x, centroids.T), axis=1)
        labels = _repair_empty(x, labels, centroids, c)
        new = np.zeros_like(centroids)
        for j in range(c):
            members = np.flatnonzero(labels == j)
            total = np.cumsum(x[members], axis=0)[-1]
            norm = math.sqrt(float(np.cumsum(total * total)[-1]))
            new[j] = total / norm if norm > 1e-12 else centroids[j]
        movement = float(np.max(np.sqrt(row_sums((new - centroids) ** 2))))
        centroids = new
        history.append(_objective(x, labels, centroids))
        if movement < tol:
            break
    return labels, centroids, history, it


def spherical_kmeans(tokens, c, rng, max_iter=50, tol=1e-6, n_init=8):
    """Cluster rows of ``tokens`` by cosine similarity into ``min(c, r)`` groups.

    Runs ``n_init`` k-means++ seedings drawn in sequence from ``rng`` and keeps
    the lowest final objective (first one wins ties). Returned cluster ids are
    ordered by each cluster's smallest member index.
    """
    tokens = as_matrix(tokens, "tokens")
    r = tokens.shape[0]
    if r < 1:
        raise ShapeError("spherical_kmeans needs at least one token")
    if c < 1 or n_init < 1:
        raise ValueError("cluster count and n_init must be at least 1")
    x = _unit_rows(tokens)
    if r <= c:
        return ClusterAssignment(r, np.arange(r), x.copy())

    best = None
    for _ in range(n_init):
        run = _lloyd(x, _kmeans_pp(x, c, rng), c, max_iter, tol)
        if best is None or run[2][-1] < best[2][-1]:
            best = run
    labels, centroids, history, it = best

    # canonical ids: ascending smallest member index
    firsts = [int(np.flatnonzero(labels == j)[0]) for j in range(c)]
    order = np.argsort(firsts, kind="stable")
    remap = np.empty(c, dtype=int)
    remap[order] = np.arange(c)
    return ClusterAssignment(c, remap[labels], centroids[order], history, it)


def merge_clusters(tokens, redundant, assignment, ips, normalize=False):
    """Collapse each cluster of redundant tokens into one IPS-weighted token.

    ``tokens`` and ``ips`` are indexed by patch position; ``assignment.labels``
    runs parallel to ``redundant``.
    """
    tokens = as_matrix(tokens, "tokens")
    redundant = np.asarray(redundant, dtype=int)
    ips = np.asarray(ips, dtype=np.float64)
    if len(assignment.labels) != len(redundant):
        raise ShapeError("assignment does not cover the redundant tokens")
    out = np.zeros((assignment.n_clusters, tokens.shape[1]))
    for cid in range(assignment.n_clusters):
        members = np.sort(redundant[assignment.labels == cid])
        acc = np.zeros(tokens.shape[1])
        weight = 0.0
        for j in members:
            acc = acc + ips[j] * tokens[j]
            weight += ips[j]
        if normalize:
            acc = acc / weight if weight >= 1e-12 else np.cumsum(tokens[members], axis=0)[-1] / len(members)
        out[cid] = acc
    return out


def compress(z_prime, a_w, k, cfg, n_clusters=None, rng=None):
    """Keep [CLS] and the top-``k`` patches, merge the rest into clusters.

    Output rows: [CLS], primaries in ascending original order, then
    ``min(c, n - k)`` merged tokens.
    """
    z_prime = as_matrix(z_prime, "z_prime")
    n = z_prime.shape[0] - 1
    if n < 0:
        raise ShapeError("z_prime must contain the [CLS] row")
    if not 0 <= k <= n:
        raise ValueError(f"k={k} outside [0, {n}]")
    patches = z_prime[1:]
    ips = importance_scores(a_w, cfg.ips_direction)
    if len(ips) != n:
        raise ShapeError(f"a_w covers {len(ips)} patches, z_prime has {n}")
    part = partition_tokens(ips, k)
    kept = [z_prime[:1], patches[part.primary]]
    if len(part.redundant):
        c = cfg.clusters_per_stage if n_clusters is None else n_clusters
        if rng is None:
            rng = Rng(cfg.kmeans.seed)
        km = cfg.kmeans
        assignment = spherical_kmeans(patches[part.redundant], c, rng, km.max_iter, km.tol, km.n_init)
        kept.append(merge_clusters(patches, part.redundant, assignment, ips, cfg.normalize_merge))
    return np.concatenate(kept, axis=0)


def insertion_layers(depth, num_stages):
    """Equally spaced block indices ``floor(D * (t + 1) / (S + 1))``."""
    layers = [depth * (t + 1) // (num_stages + 1) for t in range(num_stages)]
    if any(b <= a for a, b in zip(layers, layers[1:])) or (layers and layers[-1] >= depth):
        raise ScheduleError(f"cannot place {num_stages} stages in {depth} blocks: {layers}")
    return layers


def schedule_stages(n0, cfg):
    """Per-stage token counts for a geometric schedule ending at ``round(n0 * rho)``.

    Counts exclude [CLS]. Each stage keeps ``k`` patches and adds
    ``min(c, n_out)`` merged tokens so its output has exactly ``n_out`` rows.
    """
    rho, stages, c = cfg.target_keep_ratio, cfg.num_stages, cfg.clusters_per_stage
    if not 0.0 < rho <= 1.0:
        raise ScheduleError(f"target_keep_ratio {rho} outside (0, 1]")
    if stages < 1:
        raise ScheduleError("num_stages must be at least 1")
    per_stage = rho ** (1.0 / stages)
    plans = []
    n_prev = n0
    for t in range(stages):
        n_out = round_half_up(n0 * rho) if t == stages - 1 else round_half_up(n_prev * per_stage)
        if n_out <= 0 or n_out > n_prev:
            raise ScheduleError(f"stage {t}: infeasible token count {n_out} from {n_prev}")
        if n_out == n_prev:
            plans.append(StagePlan(n_prev, n_prev, 0, n_out))
        else:
            s = min(c, n_out)
            plans.append(StagePlan(n_prev, n_out - s, s, n_out))
        n_prev = n_out
    return plans


def spatial_downsample(tokens, grid_side, factor):
    """Average each ``factor x factor`` block of a row-major token grid."""
    tokens = as_matrix(tokens, "tokens")
    g, f = grid_side, factor
    if f < 1 or g % f:
        raise FactorError(f"grid side {g} not divisible by factor {f}")
    if tokens.shape[0] != g * g:
        raise ShapeError(f"expected {g * g} tokens, got {tokens.shape[0]}")
    grid = tokens.reshape(g, g, -1)
    acc = np.zeros((g // f, g // f, tokens.shape[1]))
    for di in range(f):
        for dj in range(f):
            acc = acc + grid[di::f, dj::f]
    return (acc / (f * f)).reshape(-1, tokens.shape[1])


def upsample_replicate(tokens, grid_side, factor):
    """Inverse layout of :func:`spatial_downsample`: copy each token over its block."""
    tokens = as_matrix(tokens, "tokens")
    grid = tokens.reshape(grid_side, grid_side, -1)
    grid = np.repeat(np.repeat(grid, factor, axis=0), factor, axis=1)
    return grid.reshape(-1, tokens.shape[1])


def last_layer_prune(tokens, a_w, keep_ratio, direction="row"):
    """Keep [CLS] and the top ``round(keep_ratio * n)`` patches by IPS; no merging."""
    tokens = as_matrix(tokens, "tokens")
    n = tokens.shape[0] - 1
    ips = importance_scores(a_w, direction)
    part = partition_tokens(ips, round_half_up(keep_ratio * n))
    return np.concatenate([tokens[:1], tokens[1:][part.primary]], axis=0)
