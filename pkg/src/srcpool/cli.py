"""Command-line interface: ``srcpool gen|coarsen|cluster|bench``.

Exit codes: 0 success, 1 runtime error, 2 usage error, 3 metrics requested
without labels, 4 an iterative method did not converge.
"""

from __future__ import annotations

import argparse
import json
import statistics
import sys
import time
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .errors import (
    IncompatibleConnector,
    MissingLabels,
    NoConvergence,
    SrcPoolError,
)
from .graph import Graph, build_graph, read_graph, write_graph
from .metrics import evaluate
from .objectives import ObjectiveSpec
from .pipeline import (
    CacheSlot,
    cached_pool,
    collate,
    encode_cache,
    encode_record,
    load_and_collate,
    open_cache,
    pool_batch,
    pooler_fingerprint,
    precoarsen_dataset,
)
from .pooling import POOLERS, Pooler, Selector
from .rcl import Reduce, make_connector
from .sbm import sample_sbm
from .select import SelectorConfig
from .solver import SolverConfig, cluster

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2
EXIT_MISSING_LABELS = 3
EXIT_NO_CONVERGENCE = 4

REPORT_SCHEMA = 1


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def _add_selector_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("selector")
    g.add_argument("--pooler", choices=POOLERS, default="ndp")
    g.add_argument("--connect", choices=("sparse", "kron"), default="sparse")
    g.add_argument("--ratio", type=float, default=0.5, help="Top-K keep ratio")
    g.add_argument("--k", type=int, default=1, help="KMIS hop distance")
    g.add_argument("--clusters", type=int, default=2, help="NMF cluster count")
    g.add_argument("--nmf-iters", type=int, default=500)
    g.add_argument("--nmf-tol", type=float, default=1e-4)
    g.add_argument("--eig-tol", type=float, default=1e-7)
    g.add_argument("--eig-iters", type=int, default=100_000)
    g.add_argument("--score", default="degree", help="Top-K score rule: degree or feature:<j>")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--no-self-loops", action="store_true", help="drop the diagonal of A'")
    g.add_argument("--sparsify-eps", type=float, default=1e-6, help="Kron edge threshold")


def _selector_config(args) -> SelectorConfig:
    try:
        return SelectorConfig(
            kind=args.pooler,
            ratio=args.ratio,
            k=args.k,
            num_clusters=args.clusters,
            nmf_max_iters=args.nmf_iters,
            nmf_tol=args.nmf_tol,
            eig_tol=args.eig_tol,
            eig_max_iters=args.eig_iters,
            seed=args.seed,
            topk_score=args.score,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _connector(args):
    return make_connector(args.connect, remove_self_loops=args.no_self_loops, sparsify_eps=args.sparsify_eps)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="srcpool", description="Graph pooling and clustering toolkit.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", help="generate synthetic graphs")
    gen_sub = gen.add_subparsers(dest="generator", required=True)
    sbm = gen_sub.add_parser("sbm", help="stochastic block model")
    sbm.add_argument("--nodes", type=int, default=400)
    sbm.add_argument("--classes", type=int, default=5)
    sbm.add_argument("--p-in", type=float, default=0.3)
    sbm.add_argument("--p-out", type=float, default=0.02)
    sbm.add_argument("--feature-dim", type=int, default=2)
    sbm.add_argument("--feature-shift", type=float, default=3.0)
    sbm.add_argument("--seed", type=int, default=0)
    sbm.add_argument("--count", type=int, default=None, help="write COUNT graphs (seeds seed..seed+COUNT-1) into the --out directory")
    sbm.add_argument("--out", required=True)

    co = sub.add_parser("coarsen", help="pool one graph and write the coarsened graph")
    co.add_argument("--input", required=True)
    co.add_argument("--output", required=True)
    co.add_argument("--record", default=None, help="TGPC file holding S and A' (default: <output>.tgpc)")
    co.add_argument("--aggr", choices=("sum", "mean", "max"), default="mean")
    _add_selector_flags(co)

    cl = sub.add_parser("cluster", help="unsupervised node clustering")
    cl.add_argument("--input", required=True)
    cl.add_argument("--objective", default="dmon", help="preset name or terms like 'mincut-cut:1,mincut-ortho:1'")
    cl.add_argument("--k", type=int, default=5)
    cl.add_argument("--iters", type=int, default=2000)
    cl.add_argument("--lr", type=float, default=5e-2)
    cl.add_argument("--patience", type=int, default=500)
    cl.add_argument("--seed", type=int, default=0)
    cl.add_argument("--smoothing", type=int, default=2, help="feature propagation steps for the initial logits")
    cl.add_argument("--labels", default=None, help="file with one true label per line (default: labels in the graph file)")
    cl.add_argument("--metrics", action="store_true", help="require ground truth and report metrics")
    cl.add_argument("--assignments", default=None, help="write predicted cluster ids, one per line")
    cl.add_argument("--report", default=None, help="JSON report path")

    be = sub.add_parser("bench", help="time direct, cached and pre-coarsened pooling")
    be.add_argument("--input", required=True, help="directory of graph files")
    be.add_argument("--mode", action="append", choices=("direct", "cached", "precoarsen"), default=None)
    be.add_argument("--repeat", type=int, default=5)
    be.add_argument("--batch-size", type=int, default=8)
    be.add_argument("--max-batches", type=int, default=None)
    be.add_argument("--jobs", type=int, default=1)
    be.add_argument("--cache", default=None, help="TGPC path for precoarsen mode (default: <input>/cache.tgpc)")
    be.add_argument("--aggr", choices=("sum", "mean", "max"), default="mean")
    be.add_argument("--report", default=None)
    _add_selector_flags(be)
    return parser


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_gen(args) -> int:
    kw = dict(
        num_nodes=args.nodes,
        num_classes=args.classes,
        p_in=args.p_in,
        p_out=args.p_out,
        feature_dim=args.feature_dim,
        feature_shift=args.feature_shift,
    )
    if args.count is None:
        write_graph(sample_sbm(seed=args.seed, **kw), args.out)
        return EXIT_OK
    if args.count < 1:
        raise UsageError("--count must be positive")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i in range(args.count):
        write_graph(sample_sbm(seed=args.seed + i, **kw), out / f"graph_{i:04d}.txt")
    return EXIT_OK


def _pooled_graph(x_pooled: np.ndarray, adj) -> Graph:
    coo = adj.tocoo()
    return build_graph((coo.row, coo.col, coo.data), num_nodes=adj.shape[0], features=x_pooled)


def cmd_coarsen(args) -> int:
    g = read_graph(args.input)
    cfg = _selector_config(args)
    connector = _connector(args)
    selector = Selector(cfg)
    if connector.needs_kept_nodes and not selector.keeps_nodes:
        raise IncompatibleConnector(f"--connect kron needs a kept-node selector (ndp, kmis, topk), not {cfg.kind}")
    out = Pooler(selector, Reduce(args.aggr), connector)(g)
    write_graph(_pooled_graph(out.x_pooled, out.adj_pooled), args.output)
    record = args.record or f"{args.output}.tgpc"
    fp = pooler_fingerprint(cfg, connector)
    Path(record).write_bytes(encode_cache([encode_record(0, fp, out.select, out.adj_pooled)]))
    print(f"pooled {g.num_nodes} nodes -> {out.select.num_clusters} supernodes, {out.adj_pooled.nnz} edges")
    return EXIT_OK


def _read_labels(path: str, n: int) -> np.ndarray:
    lines = [ln.strip() for ln in Path(path).read_text().splitlines()]
    lines = [ln for ln in lines if ln and not ln.startswith("#")]
    try:
        y = np.array([int(ln) for ln in lines], dtype=np.int64)
    except ValueError as exc:
        raise UsageError(f"label file {path}: {exc}") from exc
    if y.size != n:
        raise UsageError(f"label file has {y.size} labels for {n} nodes")
    return y


def _json_float(v: float):
    return float(v) if np.isfinite(v) else str(v)


def cmd_cluster(args) -> int:
    if args.k < 2:
        raise UsageError("--k must be at least 2")
    g = read_graph(args.input)
    try:
        spec = ObjectiveSpec.parse(args.objective)
        cfg = SolverConfig(
            objective=spec,
            k=args.k,
            max_iters=args.iters,
            lr=args.lr,
            patience=args.patience,
            seed=args.seed,
            feature_smoothing_steps=args.smoothing,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from exc

    truth = _read_labels(args.labels, g.num_nodes) if args.labels else g.labels
    if args.metrics and truth is None:
        raise MissingLabels("metrics were requested but the graph has no labels and no --labels file was given")

    res = cluster(g, cfg)
    metrics = evaluate(truth, res.labels) if truth is not None else None
    final_parts = res.history[-1][2]
    report = {
        "schema": REPORT_SCHEMA,
        "command": "cluster",
        "config": {
            "input": str(args.input),
            "objective": args.objective,
            "terms": [[name, w] for name, w in spec.terms],
            "k": args.k,
            "iters": args.iters,
            "lr": args.lr,
            "patience": args.patience,
            "seed": args.seed,
            "smoothing": args.smoothing,
        },
        "loss": {
            "initial": _json_float(res.initial_loss),
            "final": _json_float(res.history[-1][1]),
            "best": _json_float(res.best_loss),
            "best_iter": res.best_iter,
            "iterations": len(res.history),
            "final_terms": {k: _json_float(v) for k, v in final_parts.items()},
        },
        "cluster_sizes": np.bincount(res.labels, minlength=args.k).tolist(),
        "metrics": metrics,
    }
    if args.report:
        Path(args.report).write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    if args.assignments:
        Path(args.assignments).write_text("".join(f"{c}\n" for c in res.labels))
    line = f"loss {res.initial_loss:.6g} -> {res.best_loss:.6g} (best at iter {res.best_iter})"
    if metrics:
        line += "  " + "  ".join(f"{k}={v:.4f}" for k, v in metrics.items())
    print(line)
    return EXIT_OK


def _load_dataset(path: str) -> list[Graph]:
    files = sorted(Path(path).glob("*.txt"))
    if not files:
        raise UsageError(f"no graph files (*.txt) in {path}")
    return [read_graph(f) for f in files]


def _batches(n: int, size: int, limit: Optional[int]) -> list[list[int]]:
    out = [list(range(i, min(n, i + size))) for i in range(0, n, size)]
    return out if limit is None else out[:limit]


def _time_mode(mode, graphs, batches, cfg, connector, aggr, repeat, cache_path, jobs):
    """Per-batch seconds over ``repeat`` epochs, after one warm-up epoch."""
    setup = {}
    if mode == "direct":

        def run(ids):
            pb = pool_batch(graphs, cfg, connector, ids)
            return pb.reduce(aggr)

    elif mode == "cached":
        slots = {}
        pooler = Pooler(Selector(cfg), Reduce(aggr), connector)

        def run(ids):
            outs = [cached_pool(graphs[i], pooler, slots.setdefault(i, CacheSlot())) for i in ids]
            pb = collate([graphs[i] for i in ids], [o.select for o in outs], [o.adj_pooled for o in outs])
            return pb.reduce(aggr)

    else:
        t0 = time.perf_counter()
        precoarsen_dataset(graphs, cfg, connector, cache_path, jobs=jobs)
        setup["precoarsen_seconds"] = time.perf_counter() - t0
        cache = open_cache(cache_path, cfg, connector)

        def run(ids):
            return load_and_collate(cache, graphs, ids).reduce(aggr)

    for ids in batches:  # warm-up
        run(ids)
    times = []
    for _ in range(repeat):
        for ids in batches:
            t0 = time.perf_counter()
            run(ids)
            times.append(time.perf_counter() - t0)
    return times, setup


def cmd_bench(args) -> int:
    if args.repeat < 5:
        raise UsageError("--repeat must be at least 5")
    if args.batch_size < 1 or args.jobs < 1:
        raise UsageError("--batch-size and --jobs must be positive")
    graphs = _load_dataset(args.input)
    cfg = _selector_config(args)
    connector = _connector(args)
    if connector.needs_kept_nodes and not Selector(cfg).keeps_nodes:
        raise IncompatibleConnector(f"--connect kron needs a kept-node selector (ndp, kmis, topk), not {cfg.kind}")
    modes = args.mode or ["direct", "cached", "precoarsen"]
    batches = _batches(len(graphs), args.batch_size, args.max_batches)
    cache_path = args.cache or str(Path(args.input) / "cache.tgpc")

    results = {}
    for mode in modes:
        try:
            times, setup = _time_mode(mode, graphs, batches, cfg, connector, args.aggr, args.repeat, cache_path, args.jobs)
        except NoConvergence:
            results[mode] = {"status": "N/C"}
            continue
        results[mode] = {
            "status": "ok",
            "mean_seconds_per_batch": statistics.fmean(times),
            "std_seconds_per_batch": statistics.stdev(times) if len(times) > 1 else 0.0,
            "batches_timed": len(times),
            **setup,
        }
    base = results.get("direct")
    for mode, r in results.items():
        if r["status"] == "ok" and base and base["status"] == "ok":
            r["speedup_vs_direct"] = base["mean_seconds_per_batch"] / r["mean_seconds_per_batch"]

    print(f"pooler={cfg.kind} connect={args.connect} graphs={len(graphs)} batches={len(batches)} repeat={args.repeat}")
    for mode, r in results.items():
        if r["status"] != "ok":
            print(f"{mode:>10}  N/C")
            continue
        speed = f"  x{r['speedup_vs_direct']:.1f}" if "speedup_vs_direct" in r else ""
        print(f"{mode:>10}  {r['mean_seconds_per_batch']:.6f} s/batch  (sd {r['std_seconds_per_batch']:.6f}){speed}")
    if args.report:
        report = {
            "schema": REPORT_SCHEMA,
            "command": "bench",
            "config": {
                "input": str(args.input),
                "pooler": cfg.as_dict(),
                "connect": connector.fingerprint(),
                "aggr": args.aggr,
                "batch_size": args.batch_size,
                "batches": len(batches),
                "repeat": args.repeat,
                "jobs": args.jobs,
            },
            "results": results,
        }
        Path(args.report).write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    return EXIT_OK


COMMANDS = {"gen": cmd_gen, "coarsen": cmd_coarsen, "cluster": cmd_cluster, "bench": cmd_bench}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (UsageError, IncompatibleConnector) as exc:
        print(f"srcpool: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except MissingLabels as exc:
        print(f"srcpool: error: {exc}", file=sys.stderr)
        return EXIT_MISSING_LABELS
    except NoConvergence as exc:
        print(f"srcpool: N/C: {exc}", file=sys.stderr)
        return EXIT_NO_CONVERGENCE
    except (SrcPoolError, OSError) as exc:
        print(f"srcpool: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except ValueError as exc:
        print(f"srcpool: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
