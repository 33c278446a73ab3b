import json

import numpy as np
import pytest

from srcpool.cli import (
    EXIT_MISSING_LABELS,
    EXIT_NO_CONVERGENCE,
    EXIT_OK,
    EXIT_RUNTIME,
    EXIT_USAGE,
    main,
)
from srcpool.errors import InvalidProbability
from srcpool.graph import read_graph, write_graph
from srcpool.pipeline import decode_cache
from srcpool.sbm import block_sizes, sample_sbm

from conftest import complete, path, undirected


# --- sbm generator ----------------------------------------------------------


def test_sbm_blocks_and_labels():
    assert block_sizes(10, 3).tolist() == [3, 3, 4]
    g = sample_sbm(num_nodes=10, num_classes=3, seed=1)
    assert g.labels.tolist() == [0, 0, 0, 1, 1, 1, 2, 2, 2, 2]
    assert g.symmetric and not g.has_self_loops


def test_sbm_defaults_match_community_scale():
    # expected undirected edges: 5*C(80,2)*0.3 + 64000*0.02 = 6020; the Community benchmark graph has 5,904
    counts = [sample_sbm(seed=s).num_edges // 2 for s in range(5)]
    assert abs(np.mean(counts) - 6020) < 100
    assert all(abs(c - 5904) / 5904 < 0.05 for c in counts)
    g = sample_sbm(seed=0)
    assert g.num_nodes == 400 and g.features.shape == (400, 2)


def test_sbm_feature_means():
    g = sample_sbm(num_nodes=2000, num_classes=4, feature_dim=2, feature_shift=3.0, seed=3)
    for c in range(4):
        mu = g.features[g.labels == c].mean(axis=0)
        expected = np.zeros(2)
        expected[c % 2] = 3.0
        assert np.allclose(mu, expected, atol=0.2)


def test_sbm_probability_checks():
    with pytest.raises(InvalidProbability):
        sample_sbm(p_in=0.1, p_out=0.2)
    with pytest.raises(InvalidProbability):
        sample_sbm(p_in=1.5)
    sample_sbm(num_nodes=20, p_in=0.2, p_out=0.2)  # valid, just uninformative


# --- gen ----------------------------------------------------------------------


def test_gen_is_deterministic(tmp_path):
    a, b = tmp_path / "a.txt", tmp_path / "b.txt"
    assert main(["gen", "sbm", "--nodes", "60", "--seed", "4", "--out", str(a)]) == EXIT_OK
    assert main(["gen", "sbm", "--nodes", "60", "--seed", "4", "--out", str(b)]) == EXIT_OK
    assert a.read_bytes() == b.read_bytes()
    g = read_graph(a)
    assert g.num_nodes == 60 and g.labels is not None


def test_gen_count_writes_directory(tmp_path):
    out = tmp_path / "ds"
    assert main(["gen", "sbm", "--nodes", "30", "--count", "3", "--out", str(out)]) == EXIT_OK
    assert sorted(p.name for p in out.iterdir()) == ["graph_0000.txt", "graph_0001.txt", "graph_0002.txt"]


def test_gen_bad_probability_is_runtime_error(tmp_path, capsys):
    code = main(["gen", "sbm", "--p-in", "0.1", "--p-out", "0.5", "--out", str(tmp_path / "x.txt")])
    assert code not in (EXIT_OK, EXIT_USAGE)
    assert "error" in capsys.readouterr().err


# --- coarsen ------------------------------------------------------------------


@pytest.fixture
def p3_file(tmp_path):
    f = tmp_path / "p3.txt"
    write_graph(path(3, features=np.array([[5.0], [0.0], [1.0]])), f)
    return f


def test_coarsen_kron_keeps_endpoints(tmp_path, p3_file):
    out = tmp_path / "out.txt"
    code = main(["coarsen", "--input", str(p3_file), "--output", str(out), "--pooler", "topk",
                 "--score", "feature:0", "--ratio", "0.6", "--connect", "kron"])
    assert code == EXIT_OK
    pooled = read_graph(out)
    assert pooled.num_nodes == 2
    dense = pooled.dense_adjacency()
    assert abs(dense[0, 1] - 0.5) <= 1e-12 and abs(dense[1, 0] - 0.5) <= 1e-12
    records = decode_cache((tmp_path / "out.txt.tgpc").read_bytes())
    assert len(records) == 1 and records[0].select.kept_nodes.tolist() == [0, 2]


def test_coarsen_ndp_kron_on_p3(tmp_path, p3_file):
    out = tmp_path / "out.txt"
    assert main(["coarsen", "--input", str(p3_file), "--output", str(out), "--pooler", "ndp", "--connect", "kron"]) == EXIT_OK
    assert read_graph(out).num_nodes == 1


def test_coarsen_graclus_kron_is_usage_error(tmp_path, p3_file, capsys):
    code = main(["coarsen", "--input", str(p3_file), "--output", str(tmp_path / "o.txt"), "--pooler", "graclus", "--connect", "kron"])
    assert code == EXIT_USAGE
    assert "kept-node" in capsys.readouterr().err


def test_coarsen_kmis_triangle(tmp_path):
    f = tmp_path / "tri.txt"
    write_graph(undirected(complete(3), 3, features=np.ones((3, 1))), f)
    out = tmp_path / "o.txt"
    record = tmp_path / "r.tgpc"
    assert main(["coarsen", "--input", str(f), "--output", str(out), "--pooler", "kmis", "--record", str(record)]) == EXIT_OK
    pooled = read_graph(out)
    assert pooled.num_nodes == 1
    assert pooled.features.tolist() == [[1.0]]  # mean aggregation
    assert record.exists()


def test_coarsen_is_byte_deterministic(tmp_path):
    f = tmp_path / "g.txt"
    write_graph(sample_sbm(num_nodes=50, seed=2), f)
    for name in ("a", "b"):
        assert main(["coarsen", "--input", str(f), "--output", str(tmp_path / f"{name}.txt"), "--pooler", "nmf", "--clusters", "3"]) == EXIT_OK
    assert (tmp_path / "a.txt").read_bytes() == (tmp_path / "b.txt").read_bytes()
    assert (tmp_path / "a.txt.tgpc").read_bytes() == (tmp_path / "b.txt.tgpc").read_bytes()


def test_coarsen_nmf_non_convergence_exit_code(tmp_path):
    f = tmp_path / "g.txt"
    write_graph(sample_sbm(num_nodes=30, seed=0), f)
    code = main(["coarsen", "--input", str(f), "--output", str(tmp_path / "o.txt"), "--pooler", "nmf",
                 "--nmf-iters", "1", "--nmf-tol", "0"])
    assert code == EXIT_NO_CONVERGENCE


def test_missing_input_is_runtime_error(tmp_path):
    code = main(["coarsen", "--input", str(tmp_path / "nope.txt"), "--output", str(tmp_path / "o.txt")])
    assert code == EXIT_RUNTIME


def test_argparse_errors_exit_2():
    with pytest.raises(SystemExit) as exc:
        main(["coarsen", "--pooler", "bogus"])
    assert exc.value.code == 2


# --- cluster ------------------------------------------------------------------


@pytest.fixture
def sbm_file(tmp_path):
    f = tmp_path / "sbm.txt"
    write_graph(sample_sbm(num_nodes=100, num_classes=2, p_in=0.3, p_out=0.02, seed=0), f)
    return f


def test_cluster_report(tmp_path, sbm_file):
    report = tmp_path / "r.json"
    assign = tmp_path / "a.txt"
    code = main(["cluster", "--input", str(sbm_file), "--k", "2", "--iters", "300", "--report", str(report),
                 "--assignments", str(assign), "--metrics"])
    assert code == EXIT_OK
    data = json.loads(report.read_text())
    assert data["schema"] == 1 and data["command"] == "cluster"
    assert data["config"]["k"] == 2 and data["config"]["objective"] == "dmon"
    assert set(data["metrics"]) == {"nmi", "clust_acc", "macro_f1"}
    assert data["metrics"]["nmi"] > 0.9
    assert data["loss"]["best"] <= data["loss"]["initial"]
    assert sum(data["cluster_sizes"]) == 100
    assert len(assign.read_text().split()) == 100


def test_cluster_report_is_deterministic(tmp_path, sbm_file):
    outs = []
    for name in ("a", "b"):
        r = tmp_path / f"{name}.json"
        main(["cluster", "--input", str(sbm_file), "--k", "2", "--iters", "100", "--objective", "mincut", "--report", str(r)])
        outs.append(r.read_bytes())
    assert outs[0] == outs[1]


def test_cluster_rejects_k1(sbm_file):
    assert main(["cluster", "--input", str(sbm_file), "--k", "1"]) == EXIT_USAGE


def test_cluster_rejects_bad_objective(sbm_file):
    assert main(["cluster", "--input", str(sbm_file), "--objective", "nope:1"]) == EXIT_USAGE


def test_cluster_metrics_without_labels(tmp_path):
    f = tmp_path / "nolabels.txt"
    write_graph(path(6), f)
    assert main(["cluster", "--input", str(f), "--k", "2", "--iters", "5", "--metrics"]) == EXIT_MISSING_LABELS


def test_cluster_labels_file(tmp_path):
    f = tmp_path / "g.txt"
    write_graph(undirected(complete(5) + complete(5, 5), 10), f)
    labels = tmp_path / "y.txt"
    labels.write_text("".join(f"{i // 5}\n" for i in range(10)))
    report = tmp_path / "r.json"
    code = main(["cluster", "--input", str(f), "--k", "2", "--objective", "mincut", "--iters", "500",
                 "--labels", str(labels), "--metrics", "--report", str(report)])
    assert code == EXIT_OK
    assert json.loads(report.read_text())["metrics"]["nmi"] == 1.0
    labels.write_text("0\n1\n")
    assert main(["cluster", "--input", str(f), "--k", "2", "--labels", str(labels)]) == EXIT_USAGE


# --- bench --------------------------------------------------------------------


@pytest.fixture
def small_dataset(tmp_path):
    d = tmp_path / "ds"
    assert main(["gen", "sbm", "--nodes", "40", "--count", "4", "--out", str(d)]) == EXIT_OK
    return d


def test_bench_reports_all_modes(tmp_path, small_dataset, capsys):
    report = tmp_path / "b.json"
    code = main(["bench", "--input", str(small_dataset), "--pooler", "kmis", "--batch-size", "2",
                 "--report", str(report)])
    assert code == EXIT_OK
    data = json.loads(report.read_text())
    assert set(data["results"]) == {"direct", "cached", "precoarsen"}
    for r in data["results"].values():
        assert r["status"] == "ok" and r["batches_timed"] == 10 and r["mean_seconds_per_batch"] > 0
    assert data["results"]["direct"]["speedup_vs_direct"] == 1.0
    assert "precoarsen_seconds" in data["results"]["precoarsen"]
    assert "precoarsen" in capsys.readouterr().out


def test_bench_nmf_prints_nc(small_dataset, capsys):
    code = main(["bench", "--input", str(small_dataset), "--pooler", "nmf", "--nmf-iters", "1", "--nmf-tol", "0",
                 "--mode", "direct", "--mode", "precoarsen"])
    assert code == EXIT_OK
    out = capsys.readouterr().out
    assert out.count("N/C") == 2


def test_bench_usage_errors(tmp_path, small_dataset):
    assert main(["bench", "--input", str(small_dataset), "--repeat", "3"]) == EXIT_USAGE
    assert main(["bench", "--input", str(tmp_path / "empty_dir_missing")]) == EXIT_USAGE
    assert main(["bench", "--input", str(small_dataset), "--pooler", "nmf", "--connect", "kron"]) == EXIT_USAGE
