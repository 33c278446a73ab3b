"""Immutable sparse weighted graphs, Laplacians and the graph text format."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Iterable, Optional, Sequence, Union

import numpy as np
import scipy.sparse as sp

from .errors import (
    AsymmetricInput,
    FeatureShapeMismatch,
    GraphFormatError,
    IndexOutOfRange,
    NonFiniteWeight,
)

EdgeInput = Union[np.ndarray, Sequence[Sequence[float]], Iterable[Sequence[float]]]


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Graph:
    """A weighted graph stored as a canonical coordinate list.

    Edges are directed entries ``(src[e], dst[e], weight[e])`` sorted by
    ``(src, dst)`` with duplicates already summed. An undirected graph is
    represented by both directions and reports ``symmetric=True``.

    Build instances with :func:`build_graph`; the constructor does not
    validate.
    """

    num_nodes: int
    src: np.ndarray
    dst: np.ndarray
    weight: np.ndarray
    features: np.ndarray
    labels: Optional[np.ndarray] = None
    symmetric: bool = False
    has_self_loops: bool = False

    @property
    def num_edges(self) -> int:
        """Number of stored directed entries."""
        return int(self.src.shape[0])

    @property
    def num_features(self) -> int:
        return int(self.features.shape[1])

    @cached_property
    def adjacency(self) -> sp.csr_matrix:
        """The adjacency matrix as CSR, built on first access."""
        n = self.num_nodes
        a = sp.csr_matrix((self.weight, (self.src, self.dst)), shape=(n, n))
        a.sort_indices()
        return a

    @cached_property
    def degree(self) -> np.ndarray:
        """Weighted out-degree (row sums of the adjacency)."""
        d = np.zeros(self.num_nodes)
        np.add.at(d, self.src, self.weight)
        return _frozen(d)

    def dense_adjacency(self) -> np.ndarray:
        a = np.zeros((self.num_nodes, self.num_nodes))
        a[self.src, self.dst] = self.weight
        return a

    def edge_triples(self) -> list[tuple[int, int, float]]:
        return list(zip(self.src.tolist(), self.dst.tolist(), self.weight.tolist()))

    def same_as(self, other: "Graph") -> bool:
        """Exact structural, feature and label equality."""
        if self.num_nodes != other.num_nodes:
            return False
        if (self.labels is None) != (other.labels is None):
            return False
        same = (
            np.array_equal(self.src, other.src)
            and np.array_equal(self.dst, other.dst)
            and np.array_equal(self.weight, other.weight)
            and self.features.shape == other.features.shape
            and np.array_equal(self.features, other.features)
        )
        if same and self.labels is not None:
            same = np.array_equal(self.labels, other.labels)
        return bool(same)


def _as_edge_arrays(edges: EdgeInput) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    if isinstance(edges, tuple) and len(edges) in (2, 3) and all(
        isinstance(e, np.ndarray) and e.ndim == 1 for e in edges
    ):
        src, dst = np.asarray(edges[0]), np.asarray(edges[1])
        w = np.asarray(edges[2], dtype=np.float64) if len(edges) == 3 else np.ones(len(src))
        return src, dst, w
    if isinstance(edges, np.ndarray):
        rows = edges
    else:
        rows = [tuple(e) for e in edges]
        if any(len(r) == 2 for r in rows) and any(len(r) == 3 for r in rows):
            rows = [r if len(r) == 3 else (*r, 1.0) for r in rows]
    try:
        arr = np.asarray(rows, dtype=np.float64)
    except ValueError as exc:
        raise ValueError("edges must be (src, dst) or (src, dst, weight) tuples") from exc
    if arr.size == 0:
        return np.zeros(0, np.int64), np.zeros(0, np.int64), np.zeros(0)
    if arr.ndim != 2 or arr.shape[1] not in (2, 3):
        raise ValueError("edges must be (src, dst) or (src, dst, weight) tuples")
    w = arr[:, 2].copy() if arr.shape[1] == 3 else np.ones(arr.shape[0])
    return arr[:, 0], arr[:, 1], w


def _coalesce(src, dst, w) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    # Sorting on weight as the last key makes duplicate sums independent of
    # the input order.
    order = np.lexsort((w, dst, src))
    src, dst, w = src[order], dst[order], w[order]
    if src.size == 0:
        return src, dst, w
    new = np.ones(src.size, dtype=bool)
    new[1:] = (src[1:] != src[:-1]) | (dst[1:] != dst[:-1])
    starts = np.flatnonzero(new)
    return src[starts], dst[starts], np.add.reduceat(w, starts)


def _is_symmetric(src, dst, w) -> bool:
    order = np.lexsort((src, dst))
    return bool(
        np.array_equal(src, dst[order])
        and np.array_equal(dst, src[order])
        and np.array_equal(w, w[order])
    )


def build_graph(
    edges: EdgeInput,
    num_nodes: Optional[int] = None,
    features: Optional[np.ndarray] = None,
    labels: Optional[Sequence[int]] = None,
    symmetrize: bool = False,
) -> Graph:
    """Validate and coalesce an edge list into a :class:`Graph`.

    Args:
        edges: ``(src, dst)`` or ``(src, dst, weight)`` rows, or a tuple of
            index/weight arrays. Unweighted edges get weight 1.0.
        num_nodes: Node count. Inferred from ``features`` when omitted.
        features: ``N x F`` real matrix; defaults to ``N x 0``.
        labels: Optional integer class per node.
        symmetrize: Add the reverse of every edge before coalescing. A pair
            given in both directions then ends up with doubled weight.

    Raises:
        IndexOutOfRange: an endpoint is outside ``[0, N)``.
        NonFiniteWeight: a weight is NaN or infinite.
        FeatureShapeMismatch: feature or label rows disagree with ``N``.
    """
    if num_nodes is None:
        if features is None:
            raise ValueError("num_nodes is required when features are not given")
        num_nodes = int(np.asarray(features).shape[0])
    n = int(num_nodes)
    if n < 0:
        raise ValueError("num_nodes must be non-negative")

    src_f, dst_f, w = _as_edge_arrays(edges)
    if src_f.size:
        if not (np.all(np.isfinite(src_f)) and np.all(np.isfinite(dst_f))):
            raise IndexOutOfRange("non-finite node index")
        if np.any(src_f != np.floor(src_f)) or np.any(dst_f != np.floor(dst_f)):
            raise IndexOutOfRange("node indices must be integers")
    src = np.asarray(src_f, dtype=np.int64)
    dst = np.asarray(dst_f, dtype=np.int64)
    w = np.asarray(w, dtype=np.float64)
    if src.size and (src.min() < 0 or dst.min() < 0 or src.max() >= n or dst.max() >= n):
        bad = np.flatnonzero((src < 0) | (src >= n) | (dst < 0) | (dst >= n))[0]
        raise IndexOutOfRange(f"edge ({src[bad]}, {dst[bad]}) out of range for N={n}")
    if not np.all(np.isfinite(w)):
        raise NonFiniteWeight("edge weights must be finite")
    if symmetrize:
        src, dst, w = np.concatenate([src, dst]), np.concatenate([dst, src]), np.concatenate([w, w])
    src, dst, w = _coalesce(src, dst, w)

    if features is None:
        x = np.zeros((n, 0))
    else:
        x = np.array(features, dtype=np.float64)
        if x.ndim == 1:
            x = x.reshape(n, -1) if n else x.reshape(0, 0)
        if x.ndim != 2 or x.shape[0] != n:
            raise FeatureShapeMismatch(f"features have shape {x.shape}, expected ({n}, F)")
    y = None
    if labels is not None:
        y = np.asarray(labels, dtype=np.int64).copy()
        if y.shape != (n,):
            raise FeatureShapeMismatch(f"labels have shape {y.shape}, expected ({n},)")
        _frozen(y)

    return Graph(
        num_nodes=n,
        src=_frozen(src),
        dst=_frozen(dst),
        weight=_frozen(w),
        features=_frozen(x),
        labels=y,
        symmetric=_is_symmetric(src, dst, w),
        has_self_loops=bool(np.any(src == dst)),
    )


def from_scipy(
    adj: sp.spmatrix,
    features: Optional[np.ndarray] = None,
    labels: Optional[Sequence[int]] = None,
) -> Graph:
    """Build a graph from a square sparse (or dense) adjacency matrix."""
    coo = sp.coo_matrix(adj)
    keep = coo.data != 0
    return build_graph(
        (coo.row[keep].astype(np.int64), coo.col[keep].astype(np.int64), coo.data[keep]),
        num_nodes=coo.shape[0],
        features=features,
        labels=labels,
    )


def laplacian(g: Graph, kind: str = "combinatorial") -> sp.csr_matrix:
    """Graph Laplacian of a symmetric graph.

    ``kind="combinatorial"`` gives ``D - A``; ``kind="symmetric"`` gives
    ``I - D^-1/2 A D^-1/2`` where isolated nodes keep a unit diagonal.
    """
    if not g.symmetric:
        raise AsymmetricInput("laplacian requires a symmetric graph")
    a = g.adjacency
    d = g.degree
    if kind == "combinatorial":
        lap = sp.diags(d) - a
    elif kind in ("symmetric", "symmetric-normalized", "sym"):
        inv_sqrt = np.zeros_like(d)
        pos = d > 0
        inv_sqrt[pos] = 1.0 / np.sqrt(d[pos])
        dm = sp.diags(inv_sqrt)
        lap = sp.identity(g.num_nodes, format="csr") - dm @ a @ dm
    else:
        raise ValueError(f"unknown Laplacian kind {kind!r}")
    lap = sp.csr_matrix(lap)
    lap.sort_indices()
    return lap


# ---------------------------------------------------------------------------
# text format
#
#   N M F [L]
#   M lines:  src dst weight
#   N lines:  F feature reals   (omitted when F == 0)
#   N lines:  label             (present when L == 1)
# ---------------------------------------------------------------------------


def parse_graph(text: str) -> Graph:
    """Parse the whitespace-delimited graph text format."""
    lines = [ln.split("#", 1)[0].split() for ln in text.splitlines()]
    lines = [ln for ln in lines if ln]
    if not lines:
        raise GraphFormatError("missing header 'N M F [L]'")
    header, body = lines[0], [t for ln in lines[1:] for t in ln]
    if len(header) not in (3, 4):
        raise GraphFormatError(f"header must be 'N M F [L]', got {header}")
    try:
        n, m, f = (int(t) for t in header[:3])
        has_labels = bool(int(header[3])) if len(header) == 4 else False
    except ValueError as exc:
        raise GraphFormatError(f"bad header: {header}") from exc
    if min(n, m, f) < 0:
        raise GraphFormatError("header counts must be non-negative")
    expected = 3 * m + n * f + (n if has_labels else 0)
    if len(body) != expected:
        raise GraphFormatError(f"expected {expected} body tokens, got {len(body)}")
    try:
        nums = np.array(body[: 3 * m + n * f], dtype=np.float64)
        labels = np.array(body[3 * m + n * f :], dtype=np.int64) if has_labels else None
    except ValueError as exc:
        raise GraphFormatError("malformed token in graph body") from exc
    e = nums[: 3 * m].reshape(m, 3)
    x = nums[3 * m :].reshape(n, f)
    return build_graph(e, num_nodes=n, features=x, labels=labels)


def format_graph(g: Graph) -> str:
    """Serialize ``g`` in the text format; ``repr`` floats round-trip exactly."""
    lines = [f"{g.num_nodes} {g.num_edges} {g.num_features} {0 if g.labels is None else 1}"]
    lines.extend(f"{s} {d} {w!r}" for s, d, w in g.edge_triples())
    if g.num_features:
        lines.extend(" ".join(repr(v) for v in row) for row in g.features.tolist())
    if g.labels is not None:
        lines.extend(str(v) for v in g.labels.tolist())
    return "\n".join(lines) + "\n"


def read_graph(path: Union[str, Path]) -> Graph:
    return parse_graph(Path(path).read_text())


def write_graph(g: Graph, path: Union[str, Path]) -> None:
    Path(path).write_text(format_graph(g))
