"""Stochastic block model graphs with class-shifted Gaussian features."""

from __future__ import annotations

import numpy as np

from .errors import InvalidProbability
from .graph import Graph, build_graph


def block_sizes(num_nodes: int, num_classes: int) -> np.ndarray:
    """Equal blocks; the remainder goes to the last block."""
    base = num_nodes // num_classes
    sizes = np.full(num_classes, base, dtype=np.int64)
    sizes[-1] += num_nodes - base * num_classes
    return sizes


def sample_sbm(
    num_nodes: int = 400,
    num_classes: int = 5,
    p_in: float = 0.3,
    p_out: float = 0.02,
    feature_dim: int = 2,
    feature_shift: float = 3.0,
    seed: int = 0,
) -> Graph:
    """Sample an undirected SBM graph with unit weights.

    Each within-block pair is linked with probability ``p_in`` and each
    cross-block pair with ``p_out``. Node features are ``N(mu_c, I)`` with
    ``mu_c = feature_shift * e_(c mod F)``; labels are the block ids.
    ``p_out == p_in`` is allowed but carries no community signal.
    """
    if not (0.0 <= p_out <= p_in <= 1.0):
        raise InvalidProbability(f"need 0 <= p_out <= p_in <= 1, got p_in={p_in}, p_out={p_out}")
    if num_classes < 1 or num_nodes < num_classes:
        raise ValueError("need 1 <= num_classes <= num_nodes")
    if feature_dim < 0:
        raise ValueError("feature_dim must be >= 0")
    rng = np.random.default_rng(seed)
    labels = np.repeat(np.arange(num_classes), block_sizes(num_nodes, num_classes))

    # Row-by-row sampling of the strict upper triangle keeps memory linear.
    src_parts, dst_parts = [], []
    for i in range(num_nodes - 1):
        j = np.arange(i + 1, num_nodes)
        prob = np.where(labels[j] == labels[i], p_in, p_out)
        hit = j[rng.random(j.size) < prob]
        src_parts.append(np.full(hit.size, i, dtype=np.int64))
        dst_parts.append(hit)
    src = np.concatenate(src_parts) if src_parts else np.zeros(0, np.int64)
    dst = np.concatenate(dst_parts) if dst_parts else np.zeros(0, np.int64)

    x = rng.standard_normal((num_nodes, feature_dim))
    if feature_dim:
        x[np.arange(num_nodes), labels % feature_dim] += feature_shift
    return build_graph(
        (src, dst, np.ones(src.size)),
        num_nodes=num_nodes,
        features=x,
        labels=labels,
        symmetrize=True,
    )
