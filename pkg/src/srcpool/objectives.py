"""Auxiliary clustering losses of dense poolers, with analytic gradients.

Every loss takes a dense assignment ``S`` (N x K) and returns a
:class:`LossValue` holding the value and ``dL/dS``. Gradients treat every
entry of ``S`` as a free variable; :func:`softmax_chain` maps them to the
logits that produced ``S``.

Bounded ranges (for row-stochastic ``S``)::

    mincut-cut     [-1, 0]        dmon-collapse  [0, sqrt(K) - 1]
    mincut-ortho   [0, sqrt(2)]   diff-ent       [0, ln K]
    tv             [0, 1]         justbalance    [-1, 0)
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp

from .errors import GraphTooLarge, ObjectiveError, ZeroDegreeTrace, ZeroEdges
from .graph import Graph

HOSC_MAX_EDGES = 50_000
_TINY = 1e-300


@dataclass(frozen=True, eq=False)
class LossValue:
    name: str
    value: float
    grad_s: np.ndarray


def _as_s(s: np.ndarray) -> np.ndarray:
    s = np.asarray(s, dtype=np.float64)
    if s.ndim != 2:
        raise ValueError("S must be an N x K matrix")
    return s


def _ratio_cut(name: str, s: np.ndarray, a: sp.spmatrix, deg: np.ndarray) -> LossValue:
    """``-Tr(S^T A S) / Tr(S^T D S)`` and its quotient-rule gradient."""
    as_ = np.asarray(a @ s)
    ds = deg[:, None] * s
    num = float(np.sum(s * as_))
    den = float(np.sum(s * ds))
    if den <= 0:
        raise ZeroDegreeTrace(f"{name}: Tr(S^T D S) is zero")
    grad = -(2.0 * as_ * den - num * 2.0 * ds) / den**2
    return LossValue(name, -num / den, grad)


def loss_mincut_cut(s: np.ndarray, g: Graph) -> LossValue:
    """Normalized min-cut: ``-Tr(S^T A S) / Tr(S^T D S)``."""
    return _ratio_cut("mincut-cut", _as_s(s), g.adjacency, g.degree)


def loss_mincut_ortho(s: np.ndarray) -> LossValue:
    """Orthogonality penalty ``|| S^T S / ||S^T S||_F - I / sqrt(K) ||_F``."""
    s = _as_s(s)
    k = s.shape[1]
    m = s.T @ s
    f = np.linalg.norm(m)
    if f == 0:
        raise ObjectiveError("mincut-ortho: S^T S is zero")
    p = m / f - np.eye(k) / np.sqrt(k)
    v = float(np.linalg.norm(p))
    if v == 0:
        return LossValue("mincut-ortho", 0.0, np.zeros_like(s))
    gm = (p / f - m * (np.sum(p * m) / f**3)) / v
    return LossValue("mincut-ortho", v, 2.0 * s @ gm)


def _volume(g: Graph, who: str) -> float:
    vol = float(g.degree.sum())
    if vol <= 0:
        raise ZeroEdges(f"{who}: the graph has no edge mass")
    return vol


def loss_dmon(s: np.ndarray, g: Graph) -> LossValue:
    """Negative modularity ``-Tr(S^T B S) / 2m`` with ``B = A - d d^T / 2m``."""
    s = _as_s(s)
    two_m = _volume(g, "dmon-mod")
    d = g.degree
    as_ = np.asarray(g.adjacency @ s)
    sd = s.T @ d
    tr = float(np.sum(s * as_)) - float(sd @ sd) / two_m
    grad = -(2.0 * as_ - 2.0 * np.outer(d, sd) / two_m) / two_m
    return LossValue("dmon-mod", -tr / two_m, grad)


def loss_dmon_collapse(s: np.ndarray) -> LossValue:
    """Collapse regularizer ``sqrt(K)/N * ||sum_i S_i.||_2 - 1``."""
    s = _as_s(s)
    n, k = s.shape
    c = s.sum(axis=0)
    nc = float(np.linalg.norm(c))
    scale = np.sqrt(k) / n
    if nc == 0:
        return LossValue("dmon-collapse", -1.0, np.zeros_like(s))
    grad = np.broadcast_to(scale * c / nc, s.shape).copy()
    return LossValue("dmon-collapse", scale * nc - 1.0, grad)


def loss_diff_lp(s: np.ndarray, g: Graph, dense_adj: Optional[np.ndarray] = None) -> LossValue:
    """Link-prediction loss ``||A - S S^T||_F / N^2``."""
    s = _as_s(s)
    n = s.shape[0]
    a = g.dense_adjacency() if dense_adj is None else dense_adj
    r = a - s @ s.T
    f = float(np.linalg.norm(r))
    if f == 0:
        return LossValue("diff-lp", 0.0, np.zeros_like(s))
    # R is symmetric when A is; use both halves so asymmetric A stays exact.
    grad = -((r + r.T) @ s) / (f * n * n)
    return LossValue("diff-lp", f / (n * n), grad)


def loss_diff_ent(s: np.ndarray) -> LossValue:
    """Mean row entropy (natural log, ``0 log 0 = 0``)."""
    s = _as_s(s)
    n = s.shape[0]
    logs = np.log(np.maximum(s, _TINY))
    value = float(-np.sum(np.where(s > 0, s * logs, 0.0))) / n
    return LossValue("diff-ent", value, -(logs + 1.0) / n)


def loss_justbalance(s: np.ndarray, eps: float = 1e-12) -> LossValue:
    """Balance loss ``-Tr((S^T S)^{1/2}) / sqrt(N K)``.

    The square root comes from the eigendecomposition of ``S^T S``; the
    gradient is ``-S (S^T S)^{-1/2} / sqrt(NK)`` with eigenvalues clamped at
    ``eps`` so empty clusters keep it finite.
    """
    s = _as_s(s)
    n, k = s.shape
    lam, q = np.linalg.eigh(s.T @ s)
    lam = np.maximum(lam, 0.0)
    norm = np.sqrt(n * k)
    inv_sqrt = (q / np.sqrt(np.maximum(lam, eps))) @ q.T
    return LossValue("justbalance", -float(np.sqrt(lam).sum()) / norm, -(s @ inv_sqrt) / norm)


def loss_tv(s: np.ndarray, g: Graph) -> LossValue:
    """Graph total variation ``sum_ij a_ij ||S_i - S_j||_1 / (2 vol)``.

    The subgradient of ``|.|`` at 0 is taken as 0.
    """
    s = _as_s(s)
    vol = _volume(g, "tv")
    diff = s[g.src] - s[g.dst]
    w = g.weight[:, None]
    value = float(np.sum(w * np.abs(diff))) / (2.0 * vol)
    contrib = w * np.sign(diff)
    grad = np.zeros_like(s)
    np.add.at(grad, g.src, contrib)
    np.add.at(grad, g.dst, -contrib)
    return LossValue("tv", value, grad / (2.0 * vol))


def loss_asym_balance(s: np.ndarray) -> LossValue:
    """Balance term ``1 - sum_k ||S_.k - mean_k||_1 / (N (K-1))``.

    Equal to ``1`` when all columns are constant (no separation); smaller
    values mean sharper, more balanced columns.
    """
    s = _as_s(s)
    n, k = s.shape
    if k < 2:
        raise ObjectiveError("asym-balance needs K >= 2")
    c = 1.0 / (n * (k - 1))
    dev = s - s.mean(axis=0, keepdims=True)
    sg = np.sign(dev)
    grad = -c * (sg - sg.mean(axis=0, keepdims=True))
    return LossValue("asym-balance", 1.0 - c * float(np.abs(dev).sum()), grad)


def triangle_adjacency(g: Graph) -> sp.csr_matrix:
    """``T[i, j]`` = number of triangles containing both ``i`` and ``j``.

    Counts common neighbours of adjacent pairs on the unweighted, loop-free
    structure, i.e. ``(B B) * B`` with ``B`` binary.
    """
    keep = (g.src != g.dst) & (g.weight != 0)
    n = g.num_nodes
    b = sp.csr_matrix(
        (np.ones(int(keep.sum())), (g.src[keep], g.dst[keep])), shape=(n, n)
    )
    b.data[:] = 1.0
    t = (b @ b).multiply(b)
    t = sp.csr_matrix(t)
    t.eliminate_zeros()
    t.sort_indices()
    return t


def hosc_adjacency(g: Graph, alpha: float = 0.5, triangles: Optional[sp.spmatrix] = None) -> sp.csr_matrix:
    if g.num_edges > 2 * HOSC_MAX_EDGES:
        raise GraphTooLarge(f"hosc-cut is limited to {HOSC_MAX_EDGES} edges")
    t = triangle_adjacency(g) if triangles is None else triangles
    return sp.csr_matrix(alpha * g.adjacency + (1.0 - alpha) * t)


def loss_hosc_cut(
    s: np.ndarray, g: Graph, alpha: float = 0.5, mixed_adj: Optional[sp.spmatrix] = None
) -> LossValue:
    """Higher-order cut: the min-cut ratio on ``alpha A + (1 - alpha) A_tri``."""
    a = hosc_adjacency(g, alpha) if mixed_adj is None else mixed_adj
    deg = np.asarray(a.sum(axis=1)).ravel()
    return _ratio_cut("hosc-cut", _as_s(s), a, deg)


def softmax_chain(grad_s: np.ndarray, s: np.ndarray) -> np.ndarray:
    """Chain ``dL/dS`` through a row-wise softmax: ``S * (g - <S, g>)``."""
    grad_s = np.asarray(grad_s, dtype=np.float64)
    s = np.asarray(s, dtype=np.float64)
    return s * (grad_s - np.sum(s * grad_s, axis=1, keepdims=True))


# ---------------------------------------------------------------------------
# weighted combinations
# ---------------------------------------------------------------------------

LOSS_NAMES = (
    "mincut-cut",
    "mincut-ortho",
    "dmon-mod",
    "dmon-collapse",
    "diff-lp",
    "diff-ent",
    "justbalance",
    "tv",
    "asym-balance",
    "hosc-cut",
)

# shorthands for the pooler each term set comes from
PRESETS = {
    "mincut": "mincut-cut:1.0,mincut-ortho:1.0",
    "dmon": "dmon-mod:1.0,dmon-collapse:1.0",
    "diffpool": "diff-lp:1.0,diff-ent:1.0",
    "jbgnn": "justbalance:1.0",
    "acc": "tv:1.0,asym-balance:1.0",
    "hosc": "hosc-cut:1.0,mincut-ortho:1.0",
}


@dataclass(frozen=True)
class ObjectiveSpec:
    terms: tuple[tuple[str, float], ...]

    def __post_init__(self) -> None:
        if not self.terms:
            raise ValueError("an objective needs at least one term")
        for name, w in self.terms:
            if name not in LOSS_NAMES:
                raise ValueError(f"unknown loss {name!r}; choose from {', '.join(LOSS_NAMES)}")
            if not np.isfinite(w):
                raise ValueError(f"weight of {name} is not finite")

    @classmethod
    def parse(cls, text: str) -> "ObjectiveSpec":
        """Parse ``name[:weight],...``; pooler presets such as ``dmon`` expand."""
        terms = []
        for part in (p.strip() for p in text.split(",")):
            if not part:
                continue
            if part in PRESETS:
                terms.extend(cls.parse(PRESETS[part]).terms)
                continue
            name, _, w = part.partition(":")
            try:
                weight = float(w) if w else 1.0
            except ValueError as exc:
                raise ValueError(f"bad weight in objective term {part!r}") from exc
            terms.append((name.strip(), weight))
        return cls(tuple(terms))

    def __str__(self) -> str:
        return ",".join(f"{n}:{w!r}" for n, w in self.terms)


class Objective:
    """An :class:`ObjectiveSpec` bound to one graph.

    Graph-dependent constants (dense adjacency, triangle counts) are
    computed once and reused across evaluations.
    """

    def __init__(self, spec: ObjectiveSpec, g: Graph, hosc_alpha: float = 0.5):
        self.spec = spec
        self.graph = g
        self.hosc_alpha = hosc_alpha
        names = {n for n, _ in spec.terms}
        if names & {"dmon-mod", "tv"} and float(g.degree.sum()) <= 0:
            raise ZeroEdges("objective needs a graph with edges")
        self._fns: dict[str, Callable[[np.ndarray], LossValue]] = {
            "mincut-cut": lambda s: loss_mincut_cut(s, g),
            "mincut-ortho": loss_mincut_ortho,
            "dmon-mod": lambda s: loss_dmon(s, g),
            "dmon-collapse": loss_dmon_collapse,
            "diff-lp": lambda s: loss_diff_lp(s, g, self._dense_adj),
            "diff-ent": loss_diff_ent,
            "justbalance": loss_justbalance,
            "tv": lambda s: loss_tv(s, g),
            "asym-balance": loss_asym_balance,
            "hosc-cut": lambda s: loss_hosc_cut(s, g, hosc_alpha, self._hosc_adj),
        }

    @cached_property
    def _dense_adj(self) -> np.ndarray:
        return self.graph.dense_adjacency()

    @cached_property
    def _hosc_adj(self) -> sp.csr_matrix:
        return hosc_adjacency(self.graph, self.hosc_alpha)

    def term(self, name: str, s: np.ndarray) -> LossValue:
        return self._fns[name](s)

    def __call__(self, s: np.ndarray) -> tuple[float, np.ndarray, dict[str, float]]:
        """Total weighted value, its gradient w.r.t. ``S``, and per-term values."""
        total = 0.0
        grad = np.zeros_like(s)
        parts: dict[str, float] = {}
        for name, w in self.spec.terms:
            lv = self._fns[name](s)
            total += w * lv.value
            grad += w * lv.grad_s
            parts[name] = parts.get(name, 0.0) + lv.value
        return total, grad, parts


def evaluate_loss(name: str, s: np.ndarray, g: Graph) -> LossValue:
    """Evaluate a single named loss term."""
    return Objective(ObjectiveSpec(((name, 1.0),)), g).term(name, s)
