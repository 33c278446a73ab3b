"""Poolers assembled from swappable Select, Reduce, Connect and Lift parts."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np
import scipy.sparse as sp

from .batch import DenseBatch, SparseBatch, global_pool
from .errors import IncompatibleConnector
from .graph import Graph
from .objectives import Objective, ObjectiveSpec
from .rcl import KronConnect, Lift, Reduce, SparseConnect, make_connector
from .select import CAPABILITIES, SelectOutput, SelectorConfig, dense_from_logits, run_selector


@dataclass(eq=False)
class PoolingOutput:
    x_pooled: np.ndarray
    adj_pooled: sp.csr_matrix
    batch_pooled: np.ndarray
    select: SelectOutput
    losses: dict[str, float] = field(default_factory=dict)

    @property
    def has_loss(self) -> bool:
        return bool(self.losses)

    def get_loss_value(self) -> float:
        return float(sum(self.losses.values()))

    def same_as(self, other: "PoolingOutput") -> bool:
        a, b = self.adj_pooled, other.adj_pooled
        return (
            np.array_equal(self.x_pooled, other.x_pooled)
            and a.shape == b.shape
            and np.array_equal(a.indptr, b.indptr)
            and np.array_equal(a.indices, b.indices)
            and np.array_equal(a.data, b.data)
            and np.array_equal(self.batch_pooled, other.batch_pooled)
            and self.select.same_as(other.select)
            and self.losses == other.losses
        )


class Selector:
    """Callable wrapper around a :class:`SelectorConfig`."""

    def __init__(self, cfg: SelectorConfig):
        self.cfg = cfg

    def __call__(self, g: Graph) -> SelectOutput:
        return run_selector(g, self.cfg)

    @property
    def is_dense(self) -> bool:
        return CAPABILITIES[self.cfg.kind][0]

    @property
    def keeps_nodes(self) -> bool:
        return CAPABILITIES[self.cfg.kind][3]

    def fingerprint(self) -> dict:
        return self.cfg.as_dict()

    def __repr__(self) -> str:
        return f"Selector({self.cfg.kind})"


class Pooler:
    """Select -> Reduce -> Connect composition; Lift undoes Reduce.

    Any component can be replaced after construction, e.g.
    ``pooler.connector = KronConnect()``.

    With ``cached=True`` Select and Connect run once per graph structure and
    later calls only Reduce.
    """

    def __init__(self, selector, reducer=None, connector=None, lifter=None, cached: bool = False):
        self.selector = selector
        self.reducer = reducer or Reduce("sum")
        self.connector = connector or SparseConnect()
        self.lifter = lifter or Lift()
        self.cached = cached
        self._slot = None
        self.select_calls = 0
        self.connect_calls = 0

    # capability flags
    @property
    def is_dense(self) -> bool:
        return bool(getattr(self.selector, "is_dense", False))

    @property
    def is_trainable(self) -> bool:
        return False

    @property
    def has_loss(self) -> bool:
        return False

    @property
    def is_precoarsenable(self) -> bool:
        return not self.is_trainable

    def select(self, g: Graph) -> SelectOutput:
        self.select_calls += 1
        return self.selector(g)

    def connect(self, g: Graph, so: SelectOutput) -> sp.csr_matrix:
        if getattr(self.connector, "needs_kept_nodes", False) and so.kept_nodes is None:
            raise IncompatibleConnector(
                f"{self.connector!r} needs a kept-node selector, got {self.selector!r}"
            )
        self.connect_calls += 1
        return self.connector(g, so)

    def reduce(self, x: np.ndarray, so: SelectOutput) -> np.ndarray:
        return self.reducer(x, so)

    def lift(self, x_pooled: np.ndarray, so: SelectOutput) -> np.ndarray:
        return self.lifter(x_pooled, so)

    def select_connect(self, g: Graph) -> tuple[SelectOutput, sp.csr_matrix]:
        so = self.select(g)
        return so, self.connect(g, so)

    def __call__(self, g: Graph, x: Optional[np.ndarray] = None) -> PoolingOutput:
        x = g.features if x is None else x
        if self.cached:
            from .pipeline import CacheSlot, cached_pool

            if self._slot is None:
                self._slot = CacheSlot()
            return cached_pool(g, self, self._slot, x=x)
        so, adj = self.select_connect(g)
        return PoolingOutput(
            x_pooled=self.reduce(x, so),
            adj_pooled=adj,
            batch_pooled=np.zeros(so.num_clusters, dtype=np.int64),
            select=so,
        )

    def global_pool(
        self,
        x: np.ndarray,
        batch: Union[np.ndarray, DenseBatch, SparseBatch, None] = None,
        reduce: str = "sum",
    ) -> np.ndarray:
        return global_pool(x, batch, reduce)

    def __repr__(self) -> str:
        return (
            f"{type(self).__name__}(selector={self.selector!r}, reducer={self.reducer!r}, "
            f"connector={self.connector!r}, lifter={self.lifter!r}, cached={self.cached})"
        )


class DensePooler(Pooler):
    """Soft-clustering pooler driven by externally supplied logits.

    The assignment is ``softmax(theta)``; the configured auxiliary losses are
    evaluated on it and reported in :attr:`PoolingOutput.losses`.
    """

    def __init__(self, objective: Union[str, ObjectiveSpec], reducer=None, connector=None):
        super().__init__(selector=None, reducer=reducer, connector=connector)
        self.objective = ObjectiveSpec.parse(objective) if isinstance(objective, str) else objective

    @property
    def is_dense(self) -> bool:
        return True

    @property
    def is_trainable(self) -> bool:
        return True

    @property
    def has_loss(self) -> bool:
        return True

    def __call__(self, g: Graph, theta: np.ndarray, x: Optional[np.ndarray] = None) -> PoolingOutput:
        x = g.features if x is None else x
        so = dense_from_logits(theta)
        _, _, parts = Objective(self.objective, g)(so.dense)
        return PoolingOutput(
            x_pooled=self.reduce(x, so),
            adj_pooled=self.connect(g, so),
            batch_pooled=np.zeros(so.num_clusters, dtype=np.int64),
            select=so,
            losses=parts,
        )


POOLERS = ("ndp", "graclus", "kmis", "nmf", "topk")


def get_pooler(
    name: str,
    connect: str = "sparse",
    aggr: str = "sum",
    cached: bool = False,
    remove_self_loops: bool = False,
    sparsify_eps: float = 1e-6,
    **selector_kw,
) -> Pooler:
    """Build a deterministic pooler by name (``ndp``, ``graclus``, ``kmis``,
    ``nmf``, ``topk``) with the chosen connector."""
    if name not in POOLERS:
        raise ValueError(f"unknown pooler {name!r}; choose from {', '.join(POOLERS)}")
    cfg = SelectorConfig(kind=name, **selector_kw)
    selector = Selector(cfg)
    connector = make_connector(connect, remove_self_loops=remove_self_loops, sparsify_eps=sparsify_eps)
    if isinstance(connector, KronConnect) and not selector.keeps_nodes:
        raise IncompatibleConnector(f"Kron connect needs a kept-node selector; {name} is a partition selector")
    return Pooler(selector, Reduce(aggr), connector, Lift(), cached=cached)
