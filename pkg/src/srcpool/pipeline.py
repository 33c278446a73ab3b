"""Pre-coarsening, the TGPC cache file, pooled-batch collation and in-memory caching.

TGPC layout (all integers little-endian, reals IEEE-754 f64 little-endian)::

    magic   4 bytes  b"TGPC"
    version u16
    count   u64
    count x record:
        length  u64              payload length in bytes
        payload length bytes
        crc32   u32              CRC-32 of the payload

    payload:
        graph_id u64, fingerprint u64, status u8 (0 ok, 1 N/C)
        if ok: SelectOutput, then A' as (nrows u64, ncols u64, nnz u64,
               nnz x (i u64, j u64, v f64)) in row-major order

    SelectOutput:
        num_nodes u64, num_clusters u64, flags u8 (1 dense, 2 kept, 4 extra)
        dense:  num_nodes * num_clusters f64, row-major
        sparse: nnz u64, nnz x (node u64, cluster u64, value f64)
        kept:   count u64, count x u64
        extra:  num_nodes x f64
"""

from __future__ import annotations

import io
import json
import os
import struct
import threading
import weakref
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
import scipy.sparse as sp

from .batch import SparseBatch, to_sparse_batch
from .errors import CorruptRecord, MissingRecord, NoConvergence, StaleCache
from .graph import Graph
from .pooling import Pooler, PoolingOutput
from .rcl import SparseConnect, lift, reduce
from .select import SelectOutput, SelectorConfig, run_selector

MAGIC = b"TGPC"
VERSION = 1
STATUS_OK = 0
STATUS_NC = 1

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK64 = 0xFFFFFFFFFFFFFFFF

_TRIPLE = np.dtype([("i", "<u8"), ("j", "<u8"), ("v", "<f8")])


# ---------------------------------------------------------------------------
# hashing
# ---------------------------------------------------------------------------


def fnv1a64(data: bytes, h: int = _FNV_OFFSET) -> int:
    for b in data:
        h = ((h ^ b) * _FNV_PRIME) & _MASK64
    return h


_hash_memo: "weakref.WeakKeyDictionary[Graph, int]" = weakref.WeakKeyDictionary()


def structural_hash(g: Graph) -> int:
    """64-bit FNV-1a over ``N`` and the sorted edge triples; features are ignored.

    Graphs are immutable, so the value is memoized per instance.
    """
    h = _hash_memo.get(g)
    if h is None:
        triples = np.empty(g.num_edges, dtype=_TRIPLE)
        triples["i"], triples["j"], triples["v"] = g.src, g.dst, g.weight
        h = fnv1a64(struct.pack("<Q", g.num_nodes) + triples.tobytes())
        _hash_memo[g] = h
    return h


def pooler_fingerprint(cfg: SelectorConfig, connector) -> int:
    """64-bit fingerprint of a selector configuration plus connector choice."""
    blob = json.dumps({"selector": cfg.as_dict(), "connector": connector.fingerprint()}, sort_keys=True)
    return fnv1a64(blob.encode())


# ---------------------------------------------------------------------------
# cached_pool
# ---------------------------------------------------------------------------


class CacheSlot:
    """Holds one graph's Select and Connect results.

    Population is serialized by a lock; lookups read a single immutable
    tuple and take no lock.
    """

    def __init__(self):
        self._lock = threading.Lock()
        self._entry: Optional[tuple[int, SelectOutput, sp.csr_matrix]] = None
        self.hits = 0
        self.misses = 0

    @property
    def is_empty(self) -> bool:
        return self._entry is None

    def clear(self) -> None:
        with self._lock:
            self._entry = None

    def lookup(self, key: int):
        entry = self._entry
        if entry is not None and entry[0] == key:
            return entry[1], entry[2]
        return None

    def populate(self, key: int, compute):
        with self._lock:
            hit = self.lookup(key)
            if hit is not None:
                return hit
            self._entry = None
            so, adj = compute()
            self._entry = (key, so, adj)
            self.misses += 1
            return so, adj


def cached_pool(g: Graph, pooler: Pooler, slot: CacheSlot, x: Optional[np.ndarray] = None) -> PoolingOutput:
    """Pool ``g``, reusing Select and Connect from ``slot`` when the graph
    structure is unchanged; only Reduce runs on a hit."""
    x = g.features if x is None else x
    key = structural_hash(g)
    hit = slot.lookup(key)
    if hit is None:
        so, adj = slot.populate(key, lambda: pooler.select_connect(g))
    else:
        slot.hits += 1
        so, adj = hit
    return PoolingOutput(
        x_pooled=pooler.reduce(x, so),
        adj_pooled=adj,
        batch_pooled=np.zeros(so.num_clusters, dtype=np.int64),
        select=so,
    )


# ---------------------------------------------------------------------------
# record encoding
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class CacheRecord:
    graph_id: int
    fingerprint: int
    select: Optional[SelectOutput]
    adj_pooled: Optional[sp.csr_matrix]
    checksum: int = 0

    @property
    def converged(self) -> bool:
        return self.select is not None


def _write_select(buf: io.BytesIO, so: SelectOutput) -> None:
    flags = (1 if not so.is_sparse else 0) | (2 if so.kept_nodes is not None else 0) | (
        4 if so.extra is not None else 0
    )
    buf.write(struct.pack("<QQB", so.num_nodes, so.num_clusters, flags))
    if so.is_sparse:
        t = np.empty(so.node_index.size, dtype=_TRIPLE)
        t["i"], t["j"], t["v"] = so.node_index, so.cluster_index, so.values
        buf.write(struct.pack("<Q", t.size))
        buf.write(t.tobytes())
    else:
        buf.write(np.ascontiguousarray(so.dense, dtype="<f8").tobytes())
    if so.kept_nodes is not None:
        buf.write(struct.pack("<Q", so.kept_nodes.size))
        buf.write(so.kept_nodes.astype("<u8").tobytes())
    if so.extra is not None:
        buf.write(so.extra.astype("<f8").tobytes())


def _write_sparse(buf: io.BytesIO, a: sp.csr_matrix) -> None:
    a = a.tocsr()
    a.sort_indices()
    coo = a.tocoo()
    t = np.empty(coo.nnz, dtype=_TRIPLE)
    t["i"], t["j"], t["v"] = coo.row, coo.col, coo.data
    buf.write(struct.pack("<QQQ", a.shape[0], a.shape[1], coo.nnz))
    buf.write(t.tobytes())


def encode_record(
    graph_id: int, fingerprint: int, so: Optional[SelectOutput], adj: Optional[sp.csr_matrix]
) -> bytes:
    """Length prefix, payload and CRC for one graph; ``so=None`` marks N/C."""
    buf = io.BytesIO()
    buf.write(struct.pack("<QQB", graph_id, fingerprint, STATUS_NC if so is None else STATUS_OK))
    if so is not None:
        _write_select(buf, so)
        _write_sparse(buf, adj)
    payload = buf.getvalue()
    return struct.pack("<Q", len(payload)) + payload + struct.pack("<I", zlib.crc32(payload))


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if n < 0 or self.pos + n > len(self.data):
            raise CorruptRecord("record ends early")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def array(self, dtype, count: int) -> np.ndarray:
        dt = np.dtype(dtype)
        if count > len(self.data):
            raise CorruptRecord("array length exceeds record")
        return np.frombuffer(self.take(dt.itemsize * count), dtype=dt)


def _to_index(a: np.ndarray, bound: int, what: str) -> np.ndarray:
    out = a.astype(np.int64)
    if out.size and (a.max() >= bound):
        raise CorruptRecord(f"{what} index out of range")
    return out


def _read_select(r: _Reader) -> SelectOutput:
    n, k, flags = r.unpack("<QQB")
    if flags & ~7:
        raise CorruptRecord("unknown select flags")
    dense = node_index = cluster_index = values = kept = extra = None
    if flags & 1:
        dense = r.array("<f8", n * k).reshape(n, k).astype(np.float64)
    else:
        (nnz,) = r.unpack("<Q")
        t = r.array(_TRIPLE, nnz)
        node_index = _to_index(t["i"], n, "node")
        cluster_index = _to_index(t["j"], k, "cluster")
        values = t["v"].astype(np.float64)
    if flags & 2:
        (count,) = r.unpack("<Q")
        kept = _to_index(r.array("<u8", count), n, "kept node")
    if flags & 4:
        extra = r.array("<f8", n).astype(np.float64)
    try:
        return SelectOutput(
            num_nodes=int(n),
            num_clusters=int(k),
            node_index=node_index,
            cluster_index=cluster_index,
            values=values,
            dense=dense,
            kept_nodes=kept,
            extra=extra,
        )
    except ValueError as exc:
        raise CorruptRecord(f"invalid select block: {exc}") from exc


def _read_sparse(r: _Reader) -> sp.csr_matrix:
    nrows, ncols, nnz = r.unpack("<QQQ")
    t = r.array(_TRIPLE, nnz)
    rows = _to_index(t["i"], nrows, "row")
    cols = _to_index(t["j"], ncols, "column")
    a = sp.csr_matrix((t["v"].astype(np.float64), (rows, cols)), shape=(int(nrows), int(ncols)))
    a.sort_indices()
    return a


def decode_record(payload: bytes, checksum: int) -> CacheRecord:
    r = _Reader(payload)
    graph_id, fingerprint, status = r.unpack("<QQB")
    if status == STATUS_NC:
        so = adj = None
    elif status == STATUS_OK:
        so = _read_select(r)
        adj = _read_sparse(r)
    else:
        raise CorruptRecord(f"unknown record status {status}")
    if r.pos != len(payload):
        raise CorruptRecord("trailing bytes in record")
    return CacheRecord(graph_id, fingerprint, so, adj, checksum)


# ---------------------------------------------------------------------------
# cache file
# ---------------------------------------------------------------------------


def encode_cache(records: Sequence[bytes]) -> bytes:
    return MAGIC + struct.pack("<HQ", VERSION, len(records)) + b"".join(records)


def decode_cache(data: bytes) -> list[CacheRecord]:
    """Parse a TGPC image; any damage raises :class:`CorruptRecord`."""
    r = _Reader(data)
    if r.take(4) != MAGIC:
        raise CorruptRecord("bad magic")
    version, count = r.unpack("<HQ")
    if version != VERSION:
        raise CorruptRecord(f"unsupported TGPC version {version}")
    out = []
    for _ in range(count):
        (length,) = r.unpack("<Q")
        payload = r.take(length)
        (crc,) = r.unpack("<I")
        if zlib.crc32(payload) != crc:
            raise CorruptRecord(f"checksum mismatch in record {len(out)}")
        out.append(decode_record(payload, crc))
    if r.pos != len(data):
        raise CorruptRecord("trailing bytes after last record")
    return out


class PrecoarsenedCache:
    """Records of a TGPC file keyed by graph id, bound to one pooler fingerprint."""

    def __init__(self, records: Sequence[CacheRecord], fingerprint: Optional[int] = None):
        self.records = {rec.graph_id: rec for rec in records}
        self.fingerprint = fingerprint

    def __len__(self) -> int:
        return len(self.records)

    def get(self, graph_id: int) -> CacheRecord:
        try:
            rec = self.records[graph_id]
        except KeyError:
            raise MissingRecord(f"no record for graph {graph_id}") from None
        if self.fingerprint is not None and rec.fingerprint != self.fingerprint:
            raise StaleCache(
                f"record {graph_id} was built with fingerprint {rec.fingerprint:#018x}, "
                f"expected {self.fingerprint:#018x}"
            )
        if not rec.converged:
            raise NoConvergence(f"graph {graph_id} did not converge when pre-coarsened (N/C)")
        return rec


def open_cache(path: Union[str, Path], cfg: Optional[SelectorConfig] = None, connector=None) -> PrecoarsenedCache:
    """Read and verify a TGPC file.

    With ``cfg`` and ``connector`` every record must carry the matching
    fingerprint, otherwise :class:`StaleCache` is raised.
    """
    records = decode_cache(Path(path).read_bytes())
    fp = None
    if cfg is not None:
        fp = pooler_fingerprint(cfg, connector or SparseConnect())
        stale = [rec.graph_id for rec in records if rec.fingerprint != fp]
        if stale:
            raise StaleCache(f"{len(stale)} record(s) built with a different configuration, first id {stale[0]}")
    return PrecoarsenedCache(records, fp)


# ---------------------------------------------------------------------------
# pre-coarsening
# ---------------------------------------------------------------------------


def select_connect(g: Graph, cfg: SelectorConfig, connector) -> tuple[SelectOutput, sp.csr_matrix]:
    so = run_selector(g, cfg)
    return so, connector(g, so)


def _coarsen_one(job) -> bytes:
    graph_id, g, cfg, connector, fp = job
    try:
        so, adj = select_connect(g, cfg, connector)
    except NoConvergence:
        return encode_record(graph_id, fp, None, None)
    return encode_record(graph_id, fp, so, adj)


def precoarsen_dataset(
    graphs: Sequence[Graph],
    cfg: SelectorConfig,
    connector=None,
    path: Union[str, Path, None] = None,
    jobs: int = 1,
) -> bytes:
    """Run Select and Connect on every graph and write one record per graph.

    Records appear in graph order whatever the worker scheduling, so the
    same inputs always give the same bytes. Graphs whose selector fails to
    converge get an N/C record. Returns the file image; writes it to
    ``path`` when given.
    """
    connector = connector or SparseConnect()
    fp = pooler_fingerprint(cfg, connector)
    work = [(i, g, cfg, connector, fp) for i, g in enumerate(graphs)]
    if jobs > 1 and len(work) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            # map() yields in submission order, which fixes the record order
            records = list(ex.map(_coarsen_one, work, chunksize=max(1, len(work) // (4 * jobs))))
    else:
        records = [_coarsen_one(job) for job in work]
    image = encode_cache(records)
    if path is not None:
        tmp = Path(f"{path}.tmp{os.getpid()}")
        tmp.write_bytes(image)
        os.replace(tmp, path)
    return image


# ---------------------------------------------------------------------------
# collation
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class PooledBatch:
    base: SparseBatch
    select_block: SelectOutput
    adj_pooled_union: sp.csr_matrix
    batch_pooled: np.ndarray

    @property
    def num_graphs(self) -> int:
        return self.base.num_graphs

    def reduce(self, aggr: str = "sum", x: Optional[np.ndarray] = None) -> np.ndarray:
        """Pooled features of every graph in the batch, stacked."""
        x = self.base.union_graph.features if x is None else x
        return reduce(x, self.select_block, aggr)

    def lift(self, x_pooled: np.ndarray) -> np.ndarray:
        return lift(x_pooled, self.select_block)

    def same_as(self, other: "PooledBatch") -> bool:
        a, b = self.adj_pooled_union, other.adj_pooled_union
        return (
            self.base.union_graph.same_as(other.base.union_graph)
            and np.array_equal(self.base.batch_vec, other.base.batch_vec)
            and self.select_block.same_as(other.select_block)
            and a.shape == b.shape
            and np.array_equal(a.indptr, b.indptr)
            and np.array_equal(a.indices, b.indices)
            and np.array_equal(a.data, b.data)
            and np.array_equal(self.batch_pooled, other.batch_pooled)
        )


def _block_select(parts: Sequence[SelectOutput]) -> SelectOutput:
    n_off = np.concatenate([[0], np.cumsum([p.num_nodes for p in parts])]).astype(np.int64)
    k_off = np.concatenate([[0], np.cumsum([p.num_clusters for p in parts])]).astype(np.int64)
    n_tot, k_tot = int(n_off[-1]), int(k_off[-1])
    kept = extra = None
    if all(p.kept_nodes is not None for p in parts):
        kept = np.concatenate([p.kept_nodes + n_off[b] for b, p in enumerate(parts)])
    if all(p.extra is not None for p in parts):
        extra = np.concatenate([p.extra for p in parts])
    if all(p.is_sparse for p in parts):
        return SelectOutput(
            num_nodes=n_tot,
            num_clusters=k_tot,
            node_index=np.concatenate([p.node_index + n_off[b] for b, p in enumerate(parts)]),
            cluster_index=np.concatenate([p.cluster_index + k_off[b] for b, p in enumerate(parts)]),
            values=np.concatenate([p.values for p in parts]),
            kept_nodes=kept,
            extra=extra,
        )
    dense = np.zeros((n_tot, k_tot))
    for b, p in enumerate(parts):
        dense[n_off[b] : n_off[b + 1], k_off[b] : k_off[b + 1]] = p.to_dense()
    return SelectOutput(n_tot, k_tot, dense=dense, kept_nodes=kept, extra=extra)


def collate(graphs: Sequence[Graph], selects: Sequence[SelectOutput], adjs: Sequence[sp.csr_matrix]) -> PooledBatch:
    """Assemble per-graph Select/Connect results into one block-diagonal batch."""
    if not graphs:
        raise ValueError("cannot collate an empty batch")
    for g, so in zip(graphs, selects):
        if so.num_nodes != g.num_nodes:
            raise StaleCache(f"record covers {so.num_nodes} nodes but the graph has {g.num_nodes}")
    adj = sp.block_diag(adjs, format="csr")
    adj.sort_indices()
    return PooledBatch(
        base=to_sparse_batch(graphs),
        select_block=_block_select(selects),
        adj_pooled_union=adj,
        batch_pooled=np.repeat(np.arange(len(selects), dtype=np.int64), [so.num_clusters for so in selects]),
    )


def load_and_collate(cache: PrecoarsenedCache, graphs: Sequence[Graph], graph_ids: Sequence[int]) -> PooledBatch:
    """Build a :class:`PooledBatch` for ``graph_ids`` from cached records.

    ``graphs`` is the full dataset; ``graphs[i]`` supplies the node
    features of graph id ``i``.
    """
    recs = [cache.get(int(i)) for i in graph_ids]
    return collate([graphs[int(i)] for i in graph_ids], [r.select for r in recs], [r.adj_pooled for r in recs])


def pool_batch(
    graphs: Sequence[Graph], cfg: SelectorConfig, connector=None, graph_ids: Optional[Sequence[int]] = None
) -> PooledBatch:
    """Direct path: run Select and Connect on each graph, then collate."""
    connector = connector or SparseConnect()
    ids = range(len(graphs)) if graph_ids is None else graph_ids
    chosen = [graphs[int(i)] for i in ids]
    pairs = [select_connect(g, cfg, connector) for g in chosen]
    return collate(chosen, [p[0] for p in pairs], [p[1] for p in pairs])


__all__ = [
    "CacheRecord",
    "CacheSlot",
    "PooledBatch",
    "PrecoarsenedCache",
    "cached_pool",
    "collate",
    "decode_cache",
    "encode_cache",
    "fnv1a64",
    "load_and_collate",
    "open_cache",
    "pool_batch",
    "pooler_fingerprint",
    "precoarsen_dataset",
    "structural_hash",
]
