"""Reduce, Connect and Lift.

Connectors are interchangeable: :class:`SparseConnect` computes
``S^T A S``; :class:`KronConnect` eliminates the non-kept nodes from the
Laplacian via a Schur complement.
"""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from .errors import EmptyCluster, IncompatibleConnector, SingularEliminationBlock, UnknownReduce
from .graph import Graph, laplacian
from .select import SelectOutput

AGGREGATIONS = ("sum", "mean", "max")
CHOLESKY_MAX_BLOCK = 512
CG_TOL = 1e-10


def reduce(x: np.ndarray, so: SelectOutput, aggr: str = "sum") -> np.ndarray:
    """Supernode features from node features.

    ``sum`` is ``S^T X`` after scaling each assigned row by its gate
    (``so.extra``). ``mean`` divides each cluster by its member count
    (dense ``S``: by its column sum). ``max`` is the elementwise maximum
    over hard members; dense ``S`` is hardened by row argmax first.
    """
    if aggr not in AGGREGATIONS:
        raise UnknownReduce(f"unknown aggregation {aggr!r}")
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if x.shape[0] != so.num_nodes:
        raise ValueError(f"x has {x.shape[0]} rows, selection expects {so.num_nodes}")
    k = so.num_clusters
    if so.extra is not None:
        x = x * so.extra[:, None]

    if aggr == "max":
        hard = so.hard_assignment()
        members = hard >= 0
        counts = np.bincount(hard[members], minlength=k)
        if np.any(counts == 0):
            raise EmptyCluster(f"cluster {int(np.flatnonzero(counts == 0)[0])} has no members")
        out = np.full((k, x.shape[1]), -np.inf)
        np.maximum.at(out, hard[members], x[members])
        return out

    s = so.matrix()
    out = np.asarray(s.T @ x)
    if aggr == "mean":
        if so.is_sparse:
            counts = np.bincount(so.cluster_index, minlength=k).astype(np.float64)
        else:
            counts = so.dense.sum(axis=0)
        if np.any(counts == 0):
            raise EmptyCluster(f"cluster {int(np.flatnonzero(counts == 0)[0])} has no members")
        out = out / counts[:, None]
    return out


def lift(x_pooled: np.ndarray, so: SelectOutput) -> np.ndarray:
    """Project supernode features back to nodes: ``S X'`` with gated ``S``.

    Unassigned nodes of a sparse selection get zero rows.
    """
    xp = np.asarray(x_pooled, dtype=np.float64)
    if xp.ndim == 1:
        xp = xp[:, None]
    if xp.shape[0] != so.num_clusters:
        raise ValueError(f"x_pooled has {xp.shape[0]} rows, selection has K={so.num_clusters}")
    return np.asarray(so.matrix(gated=True) @ xp)


def _canonical(a: sp.spmatrix, drop_zeros: bool = True) -> sp.csr_matrix:
    a = sp.csr_matrix(a)
    a.sum_duplicates()
    if drop_zeros:
        a.eliminate_zeros()
    a.sort_indices()
    return a


def connect_sparse(g: Graph, so: SelectOutput, remove_self_loops: bool = False) -> sp.csr_matrix:
    """``A' = S^T A S`` as a coalesced CSR matrix."""
    if so.num_nodes != g.num_nodes:
        raise ValueError("graph and selection disagree on N")
    s = so.matrix()
    a_new = _canonical(s.T @ g.adjacency @ s)
    if remove_self_loops:
        a_new.setdiag(0.0)
        a_new = _canonical(a_new)
    return a_new


def _solve_block(lmm: sp.csr_matrix, rhs: np.ndarray) -> np.ndarray:
    """Solve ``L_-- Y = rhs`` for a (positive definite) elimination block."""
    m = lmm.shape[0]
    if m <= CHOLESKY_MAX_BLOCK:
        try:
            c = sla.cho_factor(lmm.toarray(), lower=True, check_finite=False)
        except np.linalg.LinAlgError as exc:
            raise SingularEliminationBlock("elimination block is not positive definite") from exc
        return sla.cho_solve(c, rhs, check_finite=False)
    return _block_cg(lmm, rhs)


def _block_cg(a: sp.csr_matrix, b: np.ndarray, tol: float = CG_TOL, max_iters: Optional[int] = None) -> np.ndarray:
    """Jacobi-preconditioned conjugate gradient run on all columns at once."""
    n = a.shape[0]
    max_iters = max_iters or 10 * n
    diag = a.diagonal()
    if np.any(diag <= 0):
        raise SingularEliminationBlock("elimination block has a non-positive diagonal")
    minv = (1.0 / diag)[:, None]
    x = np.zeros_like(b)
    r = b.copy()
    z = minv * r
    p = z.copy()
    rz = np.einsum("ij,ij->j", r, z)
    bnorm = np.linalg.norm(b, axis=0)
    bnorm[bnorm == 0] = 1.0
    for _ in range(max_iters):
        if np.all(np.linalg.norm(r, axis=0) <= tol * bnorm):
            return x
        ap = a @ p
        pap = np.einsum("ij,ij->j", p, ap)
        active = pap > 0
        alpha = np.where(active, rz / np.where(active, pap, 1.0), 0.0)
        x += p * alpha
        r -= ap * alpha
        z = minv * r
        rz_new = np.einsum("ij,ij->j", r, z)
        beta = np.where(rz > 0, rz_new / np.where(rz > 0, rz, 1.0), 0.0)
        p = z + p * beta
        rz = rz_new
    raise SingularEliminationBlock("conjugate gradient did not converge on the elimination block")


def connect_kron(
    g: Graph, kept_nodes: Sequence[int], sparsify_eps: float = 1e-6
) -> sp.csr_matrix:
    """Kron reduction of the graph onto ``kept_nodes``.

    Computes the Schur complement ``L' = L_++ - L_+- L_--^-1 L_-+`` of the
    combinatorial Laplacian and returns ``A'_ij = -L'_ij`` off the diagonal,
    dropping entries with ``|w| < sparsify_eps``. Row/column ``i`` of the
    result corresponds to ``kept_nodes[i]``.

    Raises:
        SingularEliminationBlock: some eliminated component has no kept node.
    """
    kept = np.asarray(kept_nodes, dtype=np.int64)
    n = g.num_nodes
    k = kept.size
    if k == 0:
        raise ValueError("Kron reduction needs at least one kept node")
    if np.unique(kept).size != k or kept.min() < 0 or kept.max() >= n:
        raise ValueError("kept_nodes must be distinct valid node indices")
    is_kept = np.zeros(n, dtype=bool)
    is_kept[kept] = True
    removed = np.flatnonzero(~is_kept)

    lap = laplacian(g)
    if removed.size == 0:
        a_new = g.adjacency[kept][:, kept].tolil()
        a_new.setdiag(0.0)
        out = _canonical(a_new)
    else:
        ncomp, comp = connected_components(g.adjacency, directed=False)
        has_kept = np.zeros(ncomp, dtype=bool)
        has_kept[comp[kept]] = True
        if not np.all(has_kept[comp[removed]]):
            raise SingularEliminationBlock("an eliminated component touches no kept node")
        lpp = lap[kept][:, kept].toarray()
        lpm = lap[kept][:, removed]
        lmm = lap[removed][:, removed]
        # Only kept nodes adjacent to the eliminated set contribute.
        lmp = sp.csc_matrix(lpm.T)
        touch = np.flatnonzero(np.diff(lmp.indptr))
        schur = lpp
        if touch.size:
            y = _solve_block(lmm, lmp[:, touch].toarray())
            corr = np.asarray(lpm @ y)
            schur = lpp.copy()
            schur[:, touch] -= corr
        schur = 0.5 * (schur + schur.T)
        a_dense = -schur
        np.fill_diagonal(a_dense, 0.0)
        a_dense[np.abs(a_dense) < sparsify_eps] = 0.0
        out = _canonical(sp.csr_matrix(a_dense))
    return out


def effective_resistance(lap: np.ndarray) -> np.ndarray:
    """All-pairs effective resistance from the Laplacian pseudoinverse."""
    lp = np.linalg.pinv(np.asarray(lap, dtype=np.float64), hermitian=True)
    d = np.diag(lp)
    return d[:, None] + d[None, :] - 2.0 * lp


# ---------------------------------------------------------------------------
# swappable components
# ---------------------------------------------------------------------------


class Reduce:
    def __init__(self, aggr: str = "sum"):
        if aggr not in AGGREGATIONS:
            raise UnknownReduce(f"unknown aggregation {aggr!r}")
        self.aggr = aggr

    def __call__(self, x: np.ndarray, so: SelectOutput) -> np.ndarray:
        return reduce(x, so, self.aggr)

    def __repr__(self) -> str:
        return f"Reduce(aggr={self.aggr!r})"


class Lift:
    def __call__(self, x_pooled: np.ndarray, so: SelectOutput) -> np.ndarray:
        return lift(x_pooled, so)

    def __repr__(self) -> str:
        return "Lift()"


class SparseConnect:
    name = "sparse"
    needs_kept_nodes = False

    def __init__(self, remove_self_loops: bool = False):
        self.remove_self_loops = remove_self_loops

    def __call__(self, g: Graph, so: SelectOutput) -> sp.csr_matrix:
        return connect_sparse(g, so, self.remove_self_loops)

    def fingerprint(self) -> dict:
        return {"connect": self.name, "remove_self_loops": self.remove_self_loops}

    def __repr__(self) -> str:
        return f"SparseConnect(remove_self_loops={self.remove_self_loops})"


class KronConnect:
    name = "kron"
    needs_kept_nodes = True

    def __init__(self, sparsify_eps: float = 1e-6):
        self.sparsify_eps = sparsify_eps

    def __call__(self, g: Graph, so: SelectOutput) -> sp.csr_matrix:
        if so.kept_nodes is None:
            raise IncompatibleConnector("Kron connect needs a node-selection (kept-node) selector")
        # Supernode i of a kept-node selection is kept_nodes[i]; reorder
        # the Kron output to match the selection's cluster ids.
        kept = np.asarray(so.kept_nodes)
        cid = so.hard_assignment()[kept]
        order = np.argsort(cid)
        a_new = connect_kron(g, kept[order], self.sparsify_eps)
        return a_new

    def fingerprint(self) -> dict:
        return {"connect": self.name, "sparsify_eps": self.sparsify_eps}

    def __repr__(self) -> str:
        return f"KronConnect(sparsify_eps={self.sparsify_eps})"


def make_connector(name: str, **kw):
    if name == "sparse":
        return SparseConnect(remove_self_loops=kw.get("remove_self_loops", False))
    if name == "kron":
        return KronConnect(sparsify_eps=kw.get("sparsify_eps", 1e-6))
    raise ValueError(f"unknown connector {name!r}")
