"""Unsupervised node clustering by descending auxiliary losses on free logits."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .graph import Graph
from .objectives import Objective, ObjectiveSpec, softmax_chain
from .select import softmax

IMPROVEMENT_EPS = 1e-6


@dataclass(frozen=True)
class SolverConfig:
    objective: ObjectiveSpec
    k: int
    max_iters: int = 2000
    lr: float = 5e-2
    patience: int = 500
    seed: int = 0
    feature_smoothing_steps: int = 2
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    init_noise_std: float = 0.1

    def __post_init__(self) -> None:
        if self.k < 2:
            raise ValueError("the solver needs K >= 2")
        if not self.lr > 0:
            raise ValueError("lr must be positive")
        if self.max_iters < 1 or self.patience < 1:
            raise ValueError("max_iters and patience must be positive")
        if self.feature_smoothing_steps < 0:
            raise ValueError("feature_smoothing_steps must be >= 0")


@dataclass
class SolveResult:
    labels: np.ndarray
    soft: np.ndarray
    history: list = field(default_factory=list)  # (iter, total, {term: value})
    converged_at: int = 0
    best_iter: int = 0
    best_loss: float = float("inf")

    @property
    def initial_loss(self) -> float:
        return self.history[0][1]


def smoothed_features(g: Graph, steps: int) -> np.ndarray:
    """Propagate features ``steps`` times through ``D^-1/2 (A + I) D^-1/2``."""
    x = g.features
    if steps == 0 or x.shape[1] == 0:
        return x.copy()
    a_hat = g.adjacency + sp.identity(g.num_nodes, format="csr")
    d = np.asarray(a_hat.sum(axis=1)).ravel()
    inv_sqrt = np.zeros_like(d)
    inv_sqrt[d > 0] = 1.0 / np.sqrt(d[d > 0])
    prop = sp.diags(inv_sqrt) @ a_hat @ sp.diags(inv_sqrt)
    for _ in range(steps):
        x = prop @ x
    return np.asarray(x)


def initial_logits(g: Graph, cfg: SolverConfig) -> np.ndarray:
    """``X~ W + noise`` with a seeded Gaussian projection ``W`` (F x K) scaled by
    ``1/sqrt(F)``; pure noise when the graph has no features."""
    rng = np.random.default_rng(cfg.seed)
    n, f = g.num_nodes, g.num_features
    theta = np.zeros((n, cfg.k))
    if f > 0 and cfg.feature_smoothing_steps >= 0:
        x = smoothed_features(g, cfg.feature_smoothing_steps)
        w = rng.standard_normal((f, cfg.k)) / np.sqrt(f)
        theta = x @ w
    return theta + cfg.init_noise_std * rng.standard_normal((n, cfg.k))


def cluster(g: Graph, cfg: SolverConfig, theta0: Optional[np.ndarray] = None) -> SolveResult:
    """Minimize the configured objective over per-node logits with Adam.

    Tracks the best total loss; stops after ``max_iters`` or after
    ``patience`` iterations without an improvement of at least 1e-6. Labels
    come from the row argmax of the best-loss assignment.
    """
    objective = Objective(cfg.objective, g)
    theta = initial_logits(g, cfg) if theta0 is None else np.array(theta0, dtype=np.float64)
    if theta.shape != (g.num_nodes, cfg.k):
        raise ValueError(f"initial logits must be {(g.num_nodes, cfg.k)}, got {theta.shape}")

    m = np.zeros_like(theta)
    v = np.zeros_like(theta)
    history = []
    best_loss, best_s, best_iter = np.inf, None, 0
    # patience reference: moves only on an improvement of at least IMPROVEMENT_EPS
    ref_loss = np.inf
    since_ref = 0
    it = 0
    for it in range(cfg.max_iters):
        s = softmax(theta)
        total, grad_s, parts = objective(s)
        history.append((it, total, parts))
        if total < best_loss:
            best_loss, best_s, best_iter = total, s, it
        if total < ref_loss - IMPROVEMENT_EPS:
            ref_loss = total
            since_ref = 0
        else:
            since_ref += 1
            if since_ref >= cfg.patience:
                break
        grad = softmax_chain(grad_s, s)
        t = it + 1
        m = cfg.beta1 * m + (1 - cfg.beta1) * grad
        v = cfg.beta2 * v + (1 - cfg.beta2) * grad * grad
        m_hat = m / (1 - cfg.beta1**t)
        v_hat = v / (1 - cfg.beta2**t)
        theta = theta - cfg.lr * m_hat / (np.sqrt(v_hat) + cfg.adam_eps)

    return SolveResult(
        labels=np.argmax(best_s, axis=1),
        soft=best_s,
        history=history,
        converged_at=it,
        best_iter=best_iter,
        best_loss=float(best_loss),
    )
