import math

import numpy as np
import pytest

from srcpool.errors import ObjectiveError, ZeroDegreeTrace, ZeroEdges
from srcpool.graph import build_graph
from srcpool.objectives import (
    LOSS_NAMES,
    PRESETS,
    Objective,
    ObjectiveSpec,
    evaluate_loss,
    loss_asym_balance,
    loss_diff_ent,
    loss_diff_lp,
    loss_dmon,
    loss_dmon_collapse,
    loss_hosc_cut,
    loss_justbalance,
    loss_mincut_cut,
    loss_mincut_ortho,
    loss_tv,
    softmax_chain,
    triangle_adjacency,
)

from conftest import complete, cycle, gradcheck_instance, path, random_graph, random_stochastic, undirected


def hard(labels, k):
    s = np.zeros((len(labels), k))
    s[np.arange(len(labels)), labels] = 1.0
    return s


TWO_K4 = undirected(complete(4) + complete(4, offset=4), 8)
EMPTY = build_graph(np.zeros((0, 3)), num_nodes=4, symmetrize=True)


def test_names_and_presets():
    assert len(LOSS_NAMES) == 10
    for preset in PRESETS:
        assert ObjectiveSpec.parse(preset).terms
    spec = ObjectiveSpec.parse("mincut-cut:2, diff-ent")
    assert spec.terms == (("mincut-cut", 2.0), ("diff-ent", 1.0))
    with pytest.raises(ValueError):
        ObjectiveSpec.parse("nope")
    with pytest.raises(ValueError):
        ObjectiveSpec.parse("")
    with pytest.raises(ValueError):
        ObjectiveSpec.parse("tv:inf")


# --- mincut -----------------------------------------------------------------


def test_mincut_cut_examples():
    g = random_graph(np.random.default_rng(0), 7, connected=True)
    assert loss_mincut_cut(np.full((7, 3), 1 / 3), g).value == pytest.approx(-1.0, abs=1e-12)
    assert loss_mincut_cut(hard([0] * 4 + [1] * 4, 2), TWO_K4).value == pytest.approx(-1.0, abs=1e-12)
    assert loss_mincut_cut(hard([0, 1, 0, 1], 2), cycle(4)).value == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(ZeroDegreeTrace):
        loss_mincut_cut(np.full((4, 2), 0.5), EMPTY)


def test_mincut_ortho_examples():
    assert loss_mincut_ortho(np.full((6, 2), 0.5)).value == pytest.approx(math.sqrt(2 - math.sqrt(2)), abs=1e-12)
    lv = loss_mincut_ortho(hard([0, 1, 2, 0, 1, 2], 3))
    assert lv.value == pytest.approx(0.0, abs=1e-12)
    assert np.all(np.isfinite(lv.grad_s))


# --- dmon -------------------------------------------------------------------


def test_dmon_examples():
    assert loss_dmon(np.ones((8, 1)), TWO_K4).value == pytest.approx(0.0, abs=1e-12)
    value = loss_dmon(hard([0] * 4 + [1] * 4, 2), TWO_K4).value
    assert value == pytest.approx(-0.5, abs=1e-12)
    assert value < -0.4
    assert loss_dmon_collapse(hard([0, 1, 2, 0, 1, 2], 3)).value == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(ZeroEdges):
        loss_dmon(np.full((4, 2), 0.5), EMPTY)


# --- diffpool ---------------------------------------------------------------


def test_diffpool_examples():
    assert loss_diff_ent(hard([0, 1, 1], 2)).value == 0.0
    assert loss_diff_ent(np.full((5, 4), 0.25)).value == pytest.approx(math.log(4), abs=1e-12)
    s = hard([0, 0, 1, 1, 1], 2)
    a = s @ s.T
    g = build_graph([(i, j, a[i, j]) for i in range(5) for j in range(5) if a[i, j]], num_nodes=5)
    assert loss_diff_lp(s, g).value == pytest.approx(0.0, abs=1e-15)


# --- justbalance ------------------------------------------------------------


def test_justbalance_examples():
    assert loss_justbalance(hard([0, 1, 2, 0, 1, 2], 3)).value == pytest.approx(-1.0, abs=1e-12)
    assert loss_justbalance(hard([0] * 5, 2)).value == pytest.approx(-1 / math.sqrt(2), abs=1e-12)
    assert np.all(np.isfinite(loss_justbalance(hard([0] * 5, 2)).grad_s))


# --- tv and balance ---------------------------------------------------------


def test_tv_examples():
    assert loss_tv(hard([0] * 4 + [1] * 4, 2), TWO_K4).value == 0.0
    assert loss_tv(np.full((4, 2), 0.5), cycle(4)).value == 0.0
    assert loss_tv(hard([0, 1, 0, 1], 2), cycle(4)).value == pytest.approx(1.0, abs=1e-15)
    with pytest.raises(ZeroEdges):
        loss_tv(np.full((4, 2), 0.5), EMPTY)


def test_asym_balance_bounds():
    assert loss_asym_balance(np.full((6, 3), 1 / 3)).value == pytest.approx(1.0, abs=1e-15)
    assert loss_asym_balance(hard([0, 1, 0, 1], 2)).value == pytest.approx(0.0, abs=1e-15)
    assert loss_asym_balance(hard([0, 1, 2] * 2, 3)).value == pytest.approx(1 - 2 / 3, abs=1e-15)
    with pytest.raises(ObjectiveError):
        loss_asym_balance(np.ones((3, 1)))


# --- hosc -------------------------------------------------------------------


def test_triangle_adjacency_counts():
    g = undirected(complete(4), 4)
    t = triangle_adjacency(g).toarray()
    assert np.array_equal(t, 2 * (np.ones((4, 4)) - np.eye(4)))
    assert triangle_adjacency(cycle(5)).nnz == 0


def test_hosc_examples():
    rng = np.random.default_rng(1)
    s = random_stochastic(rng, 6, 2)
    g = cycle(6)
    half = undirected([(i, (i + 1) % 6) for i in range(6)], 6, weights=[0.3] * 6)
    assert loss_hosc_cut(s, g, alpha=0.3).value == pytest.approx(loss_mincut_cut(s, half).value, abs=1e-12)
    assert loss_hosc_cut(np.ones((3, 1)), cycle(3)).value == pytest.approx(-1.0, abs=1e-12)
    with pytest.raises(ZeroDegreeTrace):
        loss_hosc_cut(np.full((4, 2), 0.5), EMPTY)


# --- softmax chain ----------------------------------------------------------


def test_softmax_chain_examples():
    s = np.array([[0.5, 0.5]])
    assert softmax_chain(np.array([[1.0, 0.0]]), s).tolist() == [[0.25, -0.25]]
    rng = np.random.default_rng(2)
    s = random_stochastic(rng, 5, 3)
    assert np.allclose(softmax_chain(np.tile([[2.0], [-1.0], [0.5], [3.0], [0.0]], (1, 3)), s), 0, atol=1e-15)
    out = softmax_chain(rng.standard_normal((5, 3)), np.full((5, 3), 1 / 3))
    assert np.allclose(out.sum(axis=1), 0, atol=1e-15)


def test_softmax_chain_matches_finite_differences():
    from srcpool.select import softmax

    rng = np.random.default_rng(3)
    theta = rng.standard_normal((4, 3))
    c = rng.standard_normal((4, 3))
    f = lambda t: float(np.sum(c * softmax(t)))  # noqa: E731
    numeric = np.zeros_like(theta)
    for idx in np.ndindex(*theta.shape):
        tp, tm = theta.copy(), theta.copy()
        tp[idx] += 1e-6
        tm[idx] -= 1e-6
        numeric[idx] = (f(tp) - f(tm)) / 2e-6
    assert np.allclose(softmax_chain(c, softmax(theta)), numeric, atol=1e-8)


# --- gradient, range and invariance properties ------------------------------


@pytest.mark.parametrize("name", LOSS_NAMES)
def test_gradients_match_finite_differences(name):
    errs = [gradcheck_instance(name, seed) for seed in range(5)]
    assert max(errs) <= 1e-4


def test_value_ranges_on_random_assignments():
    rng = np.random.default_rng(4)
    for _ in range(100):
        n, k = int(rng.integers(3, 12)), int(rng.integers(2, 5))
        g = random_graph(rng, n, connected=True)
        s = random_stochastic(rng, n, k)
        assert -1 - 1e-12 <= loss_mincut_cut(s, g).value <= 1e-12
        assert -1e-12 <= loss_diff_ent(s).value <= math.log(k) + 1e-12
        assert -1e-12 <= loss_tv(s, g).value <= 1 + 1e-12
        assert 1 - 2 / k - 1e-12 <= loss_asym_balance(s).value <= 1 + 1e-12


@pytest.mark.parametrize("name", LOSS_NAMES)
def test_column_permutation_invariance(name):
    rng = np.random.default_rng(5)
    g = random_graph(rng, 9, connected=True)
    s = random_stochastic(rng, 9, 4)
    perm = rng.permutation(4)
    a, b = evaluate_loss(name, s, g), evaluate_loss(name, s[:, perm], g)
    assert a.value == pytest.approx(b.value, abs=1e-12)
    assert np.allclose(a.grad_s[:, perm], b.grad_s, atol=1e-10)


@pytest.mark.parametrize("name", LOSS_NAMES)
def test_finite_near_degenerate_assignments(name):
    rng = np.random.default_rng(6)
    g = random_graph(rng, 8, connected=True)
    s = np.full((8, 3), 1e-12)
    s[np.arange(8), rng.integers(0, 3, 8)] = 1 - 2e-12
    lv = evaluate_loss(name, s, g)
    assert np.isfinite(lv.value) and np.all(np.isfinite(lv.grad_s))
    assert lv.grad_s.shape == s.shape


def test_objective_combines_terms():
    g = random_graph(np.random.default_rng(7), 8, connected=True)
    s = random_stochastic(np.random.default_rng(8), 8, 3)
    obj = Objective(ObjectiveSpec.parse("mincut-cut:2,mincut-ortho:0.5"), g)
    total, grad, parts = obj(s)
    a, b = loss_mincut_cut(s, g), loss_mincut_ortho(s)
    assert total == pytest.approx(2 * a.value + 0.5 * b.value, abs=1e-14)
    assert np.allclose(grad, 2 * a.grad_s + 0.5 * b.grad_s)
    assert parts == {"mincut-cut": a.value, "mincut-ortho": b.value}
    with pytest.raises(ZeroEdges):
        Objective(ObjectiveSpec.parse("dmon"), EMPTY)
