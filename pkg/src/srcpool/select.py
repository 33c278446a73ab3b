"""Select: deterministic algorithms that map N nodes onto K supernodes."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from .errors import (
    AsymmetricInput,
    GraphTooLarge,
    NoConvergence,
    NonFinite,
    NonFiniteScore,
    PowerIterationNoConvergence,
    UnreachableNode,
)
from .graph import Graph, laplacian

NMF_MAX_NODES = 20_000


@dataclass(frozen=True, eq=False)
class SelectOutput:
    """The assignment matrix ``S`` (N x K) and its metadata.

    Exactly one representation is populated. Sparse assignments are stored
    as parallel ``node_index``/``cluster_index``/``values`` arrays with each
    node appearing at most once; dense ones as ``dense`` (N x K,
    row-stochastic).

    ``extra`` holds optional per-node gate values (for Top-K, ``tanh`` of
    the score). They are applied by Reduce and Lift, never by Connect.
    """

    num_nodes: int
    num_clusters: int
    node_index: Optional[np.ndarray] = None
    cluster_index: Optional[np.ndarray] = None
    values: Optional[np.ndarray] = None
    dense: Optional[np.ndarray] = None
    kept_nodes: Optional[np.ndarray] = None
    extra: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        if self.num_clusters < 1:
            raise ValueError("K must be at least 1")
        if self.dense is not None:
            s = self.dense
            if s.shape != (self.num_nodes, self.num_clusters):
                raise ValueError(f"dense S has shape {s.shape}")
            if np.any(s < 0) or not np.allclose(s.sum(axis=1), 1.0, rtol=0, atol=1e-9):
                raise ValueError("dense S must be non-negative and row-stochastic")
            return
        if self.node_index is None or self.cluster_index is None or self.values is None:
            raise ValueError("SelectOutput needs either a dense or a sparse assignment")
        ni, ci, v = self.node_index, self.cluster_index, self.values
        if not (ni.shape == ci.shape == v.shape):
            raise ValueError("sparse assignment arrays differ in length")
        if ni.size:
            if ni.min() < 0 or ni.max() >= self.num_nodes:
                raise ValueError("node index out of range")
            if ci.min() < 0 or ci.max() >= self.num_clusters:
                raise ValueError("cluster index out of range")
            if np.unique(ni).size != ni.size:
                raise ValueError("a node appears in more than one sparse entry")
            if np.any(v == 0):
                raise ValueError("zero-valued sparse entries are not allowed")
        if self.extra is not None and self.extra.shape != (self.num_nodes,):
            raise ValueError("extra must hold one value per node")

    @property
    def is_sparse(self) -> bool:
        return self.dense is None

    @property
    def is_partition(self) -> bool:
        """True when every node is assigned (sparse) or S is dense."""
        return not self.is_sparse or self.node_index.size == self.num_nodes

    def matrix(self, gated: bool = False) -> sp.csr_matrix:
        """``S`` as a CSR matrix; ``gated`` scales row ``i`` by ``extra[i]``."""
        if self.is_sparse:
            v = self.values
            if gated and self.extra is not None:
                v = v * self.extra[self.node_index]
            s = sp.csr_matrix(
                (v, (self.node_index, self.cluster_index)),
                shape=(self.num_nodes, self.num_clusters),
            )
        else:
            s = self.dense
            if gated and self.extra is not None:
                s = s * self.extra[:, None]
            s = sp.csr_matrix(s)
        s.sort_indices()
        return s

    def to_dense(self, gated: bool = False) -> np.ndarray:
        if not self.is_sparse and not (gated and self.extra is not None):
            return self.dense.copy()
        return self.matrix(gated=gated).toarray()

    def hard_assignment(self) -> np.ndarray:
        """Cluster id per node; -1 for unassigned nodes. Dense S uses argmax."""
        if not self.is_sparse:
            return np.argmax(self.dense, axis=1)
        out = np.full(self.num_nodes, -1, dtype=np.int64)
        out[self.node_index] = self.cluster_index
        return out

    def same_as(self, other: "SelectOutput") -> bool:
        def eq(a, b):
            if a is None or b is None:
                return a is None and b is None
            return a.shape == b.shape and np.array_equal(a, b)

        return (
            self.num_nodes == other.num_nodes
            and self.num_clusters == other.num_clusters
            and all(
                eq(getattr(self, f), getattr(other, f))
                for f in ("node_index", "cluster_index", "values", "dense", "kept_nodes", "extra")
            )
        )


def sparse_select(
    num_nodes: int,
    node_index: Sequence[int],
    cluster_index: Sequence[int],
    num_clusters: int,
    values: Optional[Sequence[float]] = None,
    kept_nodes: Optional[Sequence[int]] = None,
    extra: Optional[np.ndarray] = None,
) -> SelectOutput:
    """Build a sparse :class:`SelectOutput` with entries sorted by node."""
    ni = np.asarray(node_index, dtype=np.int64)
    ci = np.asarray(cluster_index, dtype=np.int64)
    v = np.ones(ni.size) if values is None else np.asarray(values, dtype=np.float64)
    order = np.argsort(ni, kind="stable")
    return SelectOutput(
        num_nodes=int(num_nodes),
        num_clusters=int(num_clusters),
        node_index=ni[order],
        cluster_index=ci[order],
        values=v[order],
        kept_nodes=None if kept_nodes is None else np.asarray(kept_nodes, dtype=np.int64),
        extra=extra,
    )


@dataclass(frozen=True)
class SelectorConfig:
    """Parameters of every deterministic selector.

    ``topk_score`` names the fixed scoring rule used when Top-K runs inside
    the pipeline or CLI: ``"degree"`` or ``"feature:<j>"``.
    """

    kind: str = "ndp"
    ratio: float = 0.5
    k: int = 1
    num_clusters: int = 2
    nmf_max_iters: int = 500
    nmf_tol: float = 1e-4
    eig_tol: float = 1e-7
    eig_max_iters: int = 100_000
    seed: int = 0
    topk_score: str = "degree"
    graclus_random_order: bool = False

    def __post_init__(self) -> None:
        if self.kind not in SELECTOR_KINDS:
            raise ValueError(f"unknown selector kind {self.kind!r}")
        if not 0 < self.ratio <= 1:
            raise ValueError("ratio must lie in (0, 1]")
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.num_clusters < 1:
            raise ValueError("num_clusters must be >= 1")
        if self.nmf_tol < 0 or self.eig_tol <= 0:
            raise ValueError("tolerances must be positive")
        if self.nmf_max_iters < 1 or self.eig_max_iters < 1:
            raise ValueError("iteration budgets must be positive")

    def as_dict(self) -> dict:
        return asdict(self)

    def with_(self, **kw) -> "SelectorConfig":
        return replace(self, **kw)


SELECTOR_KINDS = ("ndp", "graclus", "kmis", "nmf", "topk", "dense-logits")
# capability flags: (is_dense, is_trainable, has_loss, keeps_nodes)
CAPABILITIES = {
    "ndp": (False, False, False, True),
    "graclus": (False, False, False, False),
    "kmis": (False, False, False, True),
    "nmf": (True, False, False, False),
    "topk": (False, True, False, True),
    "dense-logits": (True, True, True, False),
}


# ---------------------------------------------------------------------------
# Top-K
# ---------------------------------------------------------------------------


def select_topk(scores: np.ndarray, ratio: float) -> SelectOutput:
    """Keep the ``ceil(ratio * N)`` highest-scoring nodes.

    Ties go to the lower index. Each kept node becomes its own cluster,
    ordered by node index. The gate ``tanh(score)`` is stored in ``extra``.
    """
    s = np.asarray(scores, dtype=np.float64).ravel()
    n = s.size
    if n < 1:
        raise ValueError("select_topk needs at least one score")
    if not np.all(np.isfinite(s)):
        raise NonFiniteScore("scores must be finite")
    if not 0 < ratio <= 1:
        raise ValueError("ratio must lie in (0, 1]")
    k = min(n, max(1, math.ceil(ratio * n - 1e-9)))
    order = np.argsort(-s, kind="stable")
    kept = np.sort(order[:k])
    return sparse_select(
        n, kept, np.arange(k), k, kept_nodes=kept, extra=np.tanh(s)
    )


def topk_scores(g: Graph, rule: str) -> np.ndarray:
    """Fixed (non-trainable) scores for Top-K: weighted degree or a feature column."""
    if rule == "degree":
        return np.asarray(g.degree, dtype=np.float64)
    if rule.startswith("feature:"):
        j = int(rule.split(":", 1)[1])
        if not 0 <= j < g.num_features:
            raise ValueError(f"feature column {j} out of range (F={g.num_features})")
        return g.features[:, j].copy()
    raise ValueError(f"unknown Top-K score rule {rule!r}")


# ---------------------------------------------------------------------------
# NDP: sign of the top Laplacian eigenvector
# ---------------------------------------------------------------------------


def _require_symmetric_nonneg(g: Graph, who: str) -> None:
    if not g.symmetric:
        raise AsymmetricInput(f"{who} requires a symmetric graph")
    if np.any(g.weight < 0):
        raise ValueError(f"{who} requires non-negative weights")


def top_laplacian_eigenvector(
    lap: sp.csr_matrix, tol: float = 1e-7, max_iters: int = 100_000, seed: int = 0
) -> tuple[np.ndarray, float]:
    """Power iteration for the largest eigenpair of a PSD Laplacian.

    The operator is scaled by the Gershgorin bound ``max_i 2 L_ii`` so the
    spectrum lies in ``[0, 1]``. Stops when successive unit iterates differ
    by less than ``tol`` in 2-norm.
    """
    n = lap.shape[0]
    sigma = 2.0 * float(lap.diagonal().max()) if n else 0.0
    if sigma <= 0:
        return np.zeros(n), 0.0
    op = sp.csr_matrix(lap / sigma)
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(n)
    v /= np.linalg.norm(v)
    for _ in range(max_iters):
        w = op @ v
        nrm = np.linalg.norm(w)
        if nrm == 0.0:
            # start vector was in the null space; restart off it
            v = rng.standard_normal(n)
            v /= np.linalg.norm(v)
            continue
        w /= nrm
        if np.linalg.norm(w - v) < tol:
            return w, float(w @ (lap @ w))
        v = w
    raise PowerIterationNoConvergence(
        f"power iteration did not reach tol={tol} in {max_iters} iterations"
    )


def _fix_sign(v: np.ndarray, tie_tol: float) -> np.ndarray:
    """Flip ``v`` so its largest-magnitude entry is non-negative.

    Magnitudes within ``tie_tol`` of the maximum count as tied; the lowest
    such index decides.
    """
    mag = np.abs(v)
    i = int(np.flatnonzero(mag >= mag.max() - tie_tol)[0])
    return -v if v[i] < 0 else v


def select_ndp(
    g: Graph, eig_tol: float = 1e-7, eig_max_iters: int = 100_000, seed: int = 0
) -> SelectOutput:
    """Keep the nodes where the top Laplacian eigenvector is non-negative.

    Each connected component is handled separately; single-node components
    (and edgeless graphs) keep all their nodes. Within a component the
    eigenvector's sign is fixed so that its largest-magnitude entry is
    non-negative.
    """
    _require_symmetric_nonneg(g, "select_ndp")
    n = g.num_nodes
    keep = np.zeros(n, dtype=bool)
    lap = laplacian(g)
    ncomp, comp = connected_components(g.adjacency, directed=False)
    for c in range(ncomp):
        idx = np.flatnonzero(comp == c)
        if idx.size == 1:
            keep[idx] = True
            continue
        sub = lap[idx][:, idx]
        v, _ = top_laplacian_eigenvector(sub, eig_tol, eig_max_iters, seed)
        if not np.any(v):
            keep[idx] = True
            continue
        # iterates carry O(eig_tol) noise; entries that small count as zero
        noise = max(10.0 * eig_tol, 1e-12)
        keep[idx] = _fix_sign(v, noise) >= -noise
    kept = np.flatnonzero(keep)
    return sparse_select(n, kept, np.arange(kept.size), kept.size, kept_nodes=kept)


# ---------------------------------------------------------------------------
# Graclus: greedy normalized-cut matching
# ---------------------------------------------------------------------------


def select_graclus(g: Graph, seed: int = 0, random_order: bool = False) -> SelectOutput:
    """Greedy heavy-edge matching with normalized-cut edge scores.

    Vertices are visited in ascending order (or a seeded permutation when
    ``random_order``). An unmatched vertex ``i`` pairs with its unmatched
    neighbour ``j`` maximizing ``w_ij (1/d_i + 1/d_j)``, ties to lower ``j``;
    a vertex with no unmatched neighbour becomes a singleton. Cluster ids
    follow creation order.
    """
    _require_symmetric_nonneg(g, "select_graclus")
    n = g.num_nodes
    a = g.adjacency
    d = g.degree
    inv_d = np.zeros(n)
    inv_d[d > 0] = 1.0 / d[d > 0]
    indptr, indices, data = a.indptr, a.indices, a.data
    order = np.arange(n)
    if random_order:
        order = np.random.default_rng(seed).permutation(n)
    cluster = np.full(n, -1, dtype=np.int64)
    k = 0
    for i in order.tolist():
        if cluster[i] >= 0:
            continue
        lo, hi = indptr[i], indptr[i + 1]
        nbrs = indices[lo:hi]
        ok = (nbrs != i) & (cluster[nbrs] < 0) & (data[lo:hi] > 0)
        cluster[i] = k
        if ok.any():
            cand = nbrs[ok]
            score = data[lo:hi][ok] * (inv_d[i] + inv_d[cand])
            best = score.max()
            # indices are sorted, so the first maximum is the lowest j
            j = int(cand[np.flatnonzero(score == best)[0]])
            cluster[j] = k
        k += 1
    return sparse_select(n, np.arange(n), cluster, max(k, 1))


# ---------------------------------------------------------------------------
# k-MIS
# ---------------------------------------------------------------------------


def _nearest_owner(
    indptr: np.ndarray, indices: np.ndarray, sources: np.ndarray, n: int
) -> tuple[np.ndarray, np.ndarray]:
    """Level-synchronous multi-source BFS.

    Returns, per node, the hop distance to the nearest source and that
    source's id; ties go to the smallest source id. Unreached nodes get
    distance -1 and owner -1.
    """
    dist = np.full(n, -1, dtype=np.int64)
    owner = np.full(n, -1, dtype=np.int64)
    dist[sources] = 0
    owner[sources] = sources
    frontier = np.sort(np.asarray(sources, dtype=np.int64))
    level = 0
    while frontier.size:
        level += 1
        starts, ends = indptr[frontier], indptr[frontier + 1]
        lens = ends - starts
        if lens.sum() == 0:
            break
        rep_owner = np.repeat(owner[frontier], lens)
        nb = np.concatenate([indices[s:e] for s, e in zip(starts, ends)])
        fresh = dist[nb] < 0
        nb, rep_owner = nb[fresh], rep_owner[fresh]
        if nb.size == 0:
            break
        best = np.full(n, np.iinfo(np.int64).max, dtype=np.int64)
        np.minimum.at(best, nb, rep_owner)
        new = np.unique(nb)
        dist[new] = level
        owner[new] = best[new]
        frontier = new
    return dist, owner


def _khop_ball(indptr, indices, src: int, k: int) -> np.ndarray:
    seen = {src}
    frontier = [src]
    for _ in range(k):
        nxt = []
        for u in frontier:
            for v in indices[indptr[u] : indptr[u + 1]].tolist():
                if v not in seen:
                    seen.add(v)
                    nxt.append(v)
        if not nxt:
            break
        frontier = nxt
    return np.fromiter(seen, dtype=np.int64, count=len(seen))


def select_kmis(g: Graph, k: int = 1) -> SelectOutput:
    """Greedy maximal independent set in the k-th power of the graph.

    Nodes are considered in ascending index order. Every other node joins
    the hop-nearest MIS node (ties to the lower MIS index).
    """
    if not g.symmetric:
        raise AsymmetricInput("select_kmis requires a symmetric graph")
    if k < 1:
        raise ValueError("k must be >= 1")
    n = g.num_nodes
    a = g.adjacency
    indptr, indices = a.indptr, a.indices
    blocked = np.zeros(n, dtype=bool)
    mis: list[int] = []
    for i in range(n):
        if blocked[i]:
            continue
        mis.append(i)
        blocked[_khop_ball(indptr, indices, i, k)] = True
    kept = np.asarray(mis, dtype=np.int64)
    _, owner = _nearest_owner(indptr, indices, kept, n)
    cluster_of = np.full(n, -1, dtype=np.int64)
    cluster_of[kept] = np.arange(kept.size)
    return sparse_select(n, np.arange(n), cluster_of[owner], max(kept.size, 1), kept_nodes=kept)


# ---------------------------------------------------------------------------
# NMF
# ---------------------------------------------------------------------------


@dataclass
class NMFResult:
    w: np.ndarray
    h: np.ndarray
    error: float
    iterations: int
    converged: bool
    errors: list = field(default_factory=list)


def nmf_factorize(
    a: np.ndarray, k: int, max_iters: int = 500, tol: float = 1e-4, seed: int = 0
) -> NMFResult:
    """Frobenius NMF ``A ~ W H`` by Lee-Seung multiplicative updates.

    ``W`` and ``H`` start from seeded uniform(0, 1) draws. Converged means
    the relative error improvement of the last step fell below ``tol``.
    """
    a = np.asarray(a, dtype=np.float64)
    if np.any(a < 0):
        raise ValueError("NMF requires a non-negative matrix")
    n, m = a.shape
    rng = np.random.default_rng(seed)
    w = rng.uniform(0.0, 1.0, size=(n, k))
    h = rng.uniform(0.0, 1.0, size=(k, m))
    eps = np.finfo(np.float64).tiny
    err = float(np.linalg.norm(a - w @ h))
    errors = [err]
    for it in range(1, max_iters + 1):
        h *= (w.T @ a) / (w.T @ w @ h + eps)
        w *= (a @ h.T) / (w @ (h @ h.T) + eps)
        new_err = float(np.linalg.norm(a - w @ h))
        errors.append(new_err)
        improvement = (err - new_err) / err if err > 0 else 0.0
        err = new_err
        if improvement < tol:
            return NMFResult(w, h, err, it, True, errors)
    return NMFResult(w, h, err, max_iters, False, errors)


def select_nmf(
    g: Graph, k: int, max_iters: int = 500, tol: float = 1e-4, seed: int = 0
) -> SelectOutput:
    """Soft clustering from an NMF of the dense adjacency.

    ``S[i, c] = H[c, i] / sum_c' H[c', i]``; nodes whose column of ``H`` is
    all zero get a uniform row.

    Raises:
        NoConvergence: the budget ran out (reported as ``N/C``).
        GraphTooLarge: more than 20k nodes.
    """
    n = g.num_nodes
    if n > NMF_MAX_NODES:
        raise GraphTooLarge(f"NMF is limited to {NMF_MAX_NODES} nodes (got {n})")
    if not 1 <= k <= n:
        raise ValueError(f"NMF needs 1 <= K <= N (K={k}, N={n})")
    res = nmf_factorize(g.dense_adjacency(), k, max_iters, tol, seed)
    if not res.converged:
        raise NoConvergence(f"NMF did not converge in {max_iters} iterations")
    ht = res.h.T
    tot = ht.sum(axis=1, keepdims=True)
    s = np.where(tot > 0, ht / np.where(tot > 0, tot, 1.0), 1.0 / k)
    return SelectOutput(num_nodes=n, num_clusters=k, dense=s)


# ---------------------------------------------------------------------------
# dense soft assignment from logits
# ---------------------------------------------------------------------------


def softmax(theta: np.ndarray) -> np.ndarray:
    z = theta - theta.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def dense_from_logits(theta: np.ndarray) -> SelectOutput:
    """Row-wise softmax of an ``N x K`` logit matrix."""
    theta = np.asarray(theta, dtype=np.float64)
    if theta.ndim != 2:
        raise ValueError("theta must be N x K")
    if not np.all(np.isfinite(theta)):
        raise NonFinite("logits must be finite")
    return SelectOutput(num_nodes=theta.shape[0], num_clusters=theta.shape[1], dense=softmax(theta))


# ---------------------------------------------------------------------------
# completing a node selection into a partition
# ---------------------------------------------------------------------------


def assign_all_nodes(so: SelectOutput, g: Graph) -> SelectOutput:
    """Attach every unassigned node to the cluster of its hop-nearest kept node.

    Ties go to the kept node with the lowest original index. New entries
    get value 1.0.

    Raises:
        UnreachableNode: some node has no path to any kept node.
    """
    if not so.is_sparse:
        raise ValueError("assign_all_nodes needs a sparse selection")
    if so.is_partition:
        return so
    n = g.num_nodes
    if n != so.num_nodes:
        raise ValueError("graph and selection disagree on N")
    kept = so.kept_nodes if so.kept_nodes is not None else so.node_index
    kept = np.asarray(kept, dtype=np.int64)
    a = g.adjacency.maximum(g.adjacency.T).tocsr() if not g.symmetric else g.adjacency
    dist, owner = _nearest_owner(a.indptr, a.indices, kept, n)
    assigned = so.hard_assignment()
    missing = np.flatnonzero(assigned < 0)
    if np.any(dist[missing] < 0):
        bad = int(missing[dist[missing] < 0][0])
        raise UnreachableNode(f"node {bad} cannot reach any kept node")
    new_cluster = assigned[owner[missing]]
    ni = np.concatenate([so.node_index, missing])
    ci = np.concatenate([so.cluster_index, new_cluster])
    vals = np.concatenate([so.values, np.ones(missing.size)])
    return sparse_select(
        n, ni, ci, so.num_clusters, values=vals, kept_nodes=so.kept_nodes, extra=so.extra
    )


# ---------------------------------------------------------------------------
# config dispatch
# ---------------------------------------------------------------------------


def run_selector(g: Graph, cfg: SelectorConfig, theta: Optional[np.ndarray] = None) -> SelectOutput:
    """Run the selector named by ``cfg.kind`` on ``g``."""
    if cfg.kind == "ndp":
        return select_ndp(g, cfg.eig_tol, cfg.eig_max_iters, cfg.seed)
    if cfg.kind == "graclus":
        return select_graclus(g, cfg.seed, cfg.graclus_random_order)
    if cfg.kind == "kmis":
        return select_kmis(g, cfg.k)
    if cfg.kind == "nmf":
        return select_nmf(g, cfg.num_clusters, cfg.nmf_max_iters, cfg.nmf_tol, cfg.seed)
    if cfg.kind == "topk":
        return select_topk(topk_scores(g, cfg.topk_score), cfg.ratio)
    if cfg.kind == "dense-logits":
        if theta is None:
            raise ValueError("dense-logits selection needs a logit matrix")
        return dense_from_logits(theta)
    raise ValueError(f"unknown selector kind {cfg.kind!r}")
