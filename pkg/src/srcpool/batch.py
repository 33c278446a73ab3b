"""Mini-batch representations and the unified global readout.

Dense poolers consume padded ``[B, N_max, ...]`` tensors plus a node mask;
sparse poolers consume the disjoint union of the graphs plus a batch vector.
:func:`global_pool` accepts either and returns the same ``B x F`` result.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np

from .errors import EmptyGraphInBatch, FeatureWidthMismatch, UnknownReduce
from .graph import Graph, _frozen

REDUCTIONS = ("sum", "mean", "max")


@dataclass(frozen=True, eq=False)
class DenseBatch:
    adj: np.ndarray  # B x N_max x N_max
    feat: np.ndarray  # B x N_max x F
    mask: np.ndarray  # B x N_max, bool

    @property
    def num_graphs(self) -> int:
        return int(self.mask.shape[0])

    @property
    def max_nodes(self) -> int:
        return int(self.mask.shape[1])

    def unbatch(self, b: int) -> tuple[np.ndarray, np.ndarray]:
        """Adjacency and features of graph ``b`` with padding stripped."""
        idx = np.flatnonzero(self.mask[b])
        return self.adj[b][np.ix_(idx, idx)], self.feat[b][idx]


@dataclass(frozen=True, eq=False)
class SparseBatch:
    union_graph: Graph
    batch_vec: np.ndarray
    num_graphs: int

    @property
    def ptr(self) -> np.ndarray:
        """Node offsets: graph ``b`` owns nodes ``ptr[b]:ptr[b+1]``."""
        counts = np.bincount(self.batch_vec, minlength=self.num_graphs)
        return np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)


def _feature_width(graphs: Sequence[Graph]) -> int:
    widths = {g.num_features for g in graphs}
    if len(widths) > 1:
        raise FeatureWidthMismatch(f"graphs have differing feature widths {sorted(widths)}")
    return widths.pop() if widths else 0


def to_dense_batch(graphs: Sequence[Graph]) -> DenseBatch:
    """Pad and stack graphs into a :class:`DenseBatch`."""
    if not graphs:
        raise ValueError("to_dense_batch needs at least one graph")
    f = _feature_width(graphs)
    b = len(graphs)
    n_max = max(g.num_nodes for g in graphs)
    adj = np.zeros((b, n_max, n_max))
    feat = np.zeros((b, n_max, f))
    mask = np.zeros((b, n_max), dtype=bool)
    for i, g in enumerate(graphs):
        adj[i, g.src, g.dst] = g.weight
        feat[i, : g.num_nodes] = g.features
        mask[i, : g.num_nodes] = True
    return DenseBatch(adj=adj, feat=feat, mask=mask)


def to_sparse_batch(graphs: Sequence[Graph]) -> SparseBatch:
    """Disjoint union of ``graphs`` with node ids offset by prefix sums."""
    f = _feature_width(graphs)
    sizes = np.array([g.num_nodes for g in graphs], dtype=np.int64)
    offsets = np.concatenate([[0], np.cumsum(sizes)[:-1]]) if len(graphs) else sizes
    total = int(sizes.sum())
    src = np.concatenate([g.src + o for g, o in zip(graphs, offsets)] or [np.zeros(0, np.int64)])
    dst = np.concatenate([g.dst + o for g, o in zip(graphs, offsets)] or [np.zeros(0, np.int64)])
    w = np.concatenate([g.weight for g in graphs] or [np.zeros(0)])
    x = np.concatenate([g.features for g in graphs]) if graphs else np.zeros((0, f))
    labels = None
    if graphs and all(g.labels is not None for g in graphs):
        labels = np.concatenate([g.labels for g in graphs])
    # Each part is already canonical and offsets grow with the graph index,
    # so the concatenation is sorted and coalesced as is.
    union = Graph(
        num_nodes=total,
        src=_frozen(src.astype(np.int64)),
        dst=_frozen(dst.astype(np.int64)),
        weight=_frozen(w.astype(np.float64)),
        features=_frozen(x.astype(np.float64)),
        labels=None if labels is None else _frozen(labels.astype(np.int64)),
        symmetric=all(g.symmetric for g in graphs),
        has_self_loops=any(g.has_self_loops for g in graphs),
    )
    batch_vec = np.repeat(np.arange(len(graphs), dtype=np.int64), sizes)
    return SparseBatch(union_graph=union, batch_vec=batch_vec, num_graphs=len(graphs))


def _segment_reduce(
    x: np.ndarray, batch: np.ndarray, num_graphs: int, reduce: str
) -> np.ndarray:
    out = np.zeros((num_graphs, x.shape[1]))
    counts = np.bincount(batch, minlength=num_graphs)
    if reduce != "sum" and np.any(counts == 0):
        raise EmptyGraphInBatch(f"{reduce}-readout over a graph with no nodes")
    if reduce == "max":
        out.fill(-np.inf)
        np.maximum.at(out, batch, x)
        return out
    np.add.at(out, batch, x)
    if reduce == "mean":
        out /= counts[:, None]
    return out


def global_pool(
    x: np.ndarray,
    batch: Union[np.ndarray, DenseBatch, SparseBatch, None] = None,
    reduce: str = "sum",
    num_graphs: Optional[int] = None,
) -> np.ndarray:
    """Per-graph readout of node features.

    Dispatches on ``batch``: a boolean ``B x N_max`` mask (or a
    :class:`DenseBatch`) selects the padded path where ``x`` is
    ``B x N_max x F``; an integer batch vector (or a :class:`SparseBatch`)
    selects the segment path where ``x`` is ``N x F``. ``None`` treats ``x``
    as one graph.
    """
    if reduce not in REDUCTIONS:
        raise UnknownReduce(f"unknown reduce {reduce!r}; expected one of {REDUCTIONS}")
    x = np.asarray(x, dtype=np.float64)
    if isinstance(batch, DenseBatch):
        batch = batch.mask
    elif isinstance(batch, SparseBatch):
        num_graphs = batch.num_graphs if num_graphs is None else num_graphs
        batch = batch.batch_vec

    if batch is None:
        batch = np.zeros(x.shape[0], dtype=np.int64)
        num_graphs = 1
    batch = np.asarray(batch)

    if batch.dtype == bool:
        if x.ndim != 3 or x.shape[:2] != batch.shape:
            raise ValueError(f"dense readout needs x of shape {batch.shape + ('F',)}")
        counts = batch.sum(axis=1)
        if reduce != "sum" and np.any(counts == 0):
            raise EmptyGraphInBatch(f"{reduce}-readout over a fully masked graph")
        m = batch[:, :, None]
        if reduce == "max":
            return np.where(m, x, -np.inf).max(axis=1)
        s = np.where(m, x, 0.0).sum(axis=1)
        return s / counts[:, None] if reduce == "mean" else s

    if x.ndim != 2 or batch.shape != (x.shape[0],):
        raise ValueError("sparse readout needs x of shape (N, F) and a length-N batch vector")
    if num_graphs is None:
        num_graphs = int(batch.max()) + 1 if batch.size else 0
    return _segment_reduce(x, batch.astype(np.int64), num_graphs, reduce)
