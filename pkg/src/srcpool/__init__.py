"""Graph pooling operators built from Select, Reduce, Connect and Lift parts,
plus unsupervised clustering objectives, a pre-coarsening cache and metrics."""

__version__ = "0.1.0"

from .batch import DenseBatch, SparseBatch, global_pool, to_dense_batch, to_sparse_batch
from .errors import SrcPoolError
from .graph import Graph, build_graph, laplacian, parse_graph, format_graph, read_graph, write_graph
from .metrics import clust_acc, evaluate, hungarian, macro_f1, nmi
from .objectives import LOSS_NAMES, PRESETS, Objective, ObjectiveSpec, evaluate_loss
from .pipeline import (
    CacheSlot,
    PooledBatch,
    cached_pool,
    load_and_collate,
    open_cache,
    pool_batch,
    precoarsen_dataset,
    structural_hash,
)
from .pooling import DensePooler, Pooler, PoolingOutput, Selector, get_pooler
from .rcl import KronConnect, Lift, Reduce, SparseConnect, connect_kron, connect_sparse, lift, reduce
from .sbm import sample_sbm
from .select import SelectOutput, SelectorConfig, run_selector
from .solver import SolveResult, SolverConfig, cluster
