import numpy as np
import pytest

from cohdefer.coherence import DEFER, Contract, complete_system_labels
from cohdefer.errors import ShapeMismatch
from cohdefer.evaluation import (
    METRICS,
    EvalInstance,
    EvaluationSet,
    Method,
    Ranking,
    SweepResult,
    budget_grid,
    global_ranking,
    incoherence_rates,
    rank_and_select,
    run_sweep,
    system_metrics,
    evaluation_set_from_arrays,
)
from cohdefer.synth import random_tree, synthetic_dataset
from cohdefer.taxonomy import is_upward_closed

D = DEFER


def test_budget_grid():
    assert len(budget_grid(101 * 3)) == 102
    expected = sorted({int(np.rint(10 * i / 101)) for i in range(102)})
    assert budget_grid(10).tolist() == expected == list(range(11))
    assert budget_grid(1).tolist() == [0, 1]
    assert budget_grid(57, intervals=1).tolist() == [0, 57]
    with pytest.raises(ValueError):
        budget_grid(0)


@pytest.fixture
def hand_set(chain2):
    rows = {
        "a": [[0.1, 0.2, 0.7], [0.3, 0.3, 0.4]],
        "b": [[0.5, 0.4, 0.1], [0.2, 0.2, 0.6]],
        "c": [[0.1, 0.1, 0.8], [0.45, 0.1, 0.45]],
    }
    insts = [EvalInstance(k, np.array(v), np.ones(2, int), np.ones((1, 2), int)) for k, v in rows.items()]
    return EvaluationSet(chain2, Contract.se(), Method.NODEWISE, insts)


def test_rank_and_select_hand_ranking(hand_set):
    assert rank_and_select(hand_set, 0) == [{}, {}, {}]
    sets = rank_and_select(hand_set, 3)
    assert [set(s) for s in sets] == [{0}, {1}, {0}]
    every = rank_and_select(hand_set, hand_set.n_total)
    assert all(set(s) == {0, 1} for s in every)
    with pytest.raises(ValueError):
        rank_and_select(hand_set, 7)


def test_ranking_ties_break_on_instance_then_name(chain2):
    eta = np.array([[0.2, 0.2, 0.6], [0.2, 0.2, 0.6]])
    insts = [EvalInstance(k, eta) for k in ("z", "m")]
    es = EvaluationSet(chain2, Contract.se(), Method.NODEWISE, insts)
    order = global_ranking(es).order
    assert [(insts[i].instance_id, chain2.names[v]) for i, v, _ in order] == [
        ("m", "c"), ("m", "p"), ("z", "c"), ("z", "p")]


def test_projection_selection_is_closed(chain3):
    eta = np.array([[0.1, 0.1, 0.8], [0.1, 0.8, 0.1], [0.1, 0.1, 0.8]])
    es = EvaluationSet(chain3, Contract.se(), Method.PROJECTION, [EvalInstance("x", eta)])
    ranking = Ranking(((0, 0, 1), (0, 2, 1), (0, 1, 1)), (3.0, 2.0, 1.0))
    assert rank_and_select(es, 2, ranking)[0] == {0: 1, 1: None, 2: 1}
    nodewise = EvaluationSet(chain3, Contract.se(), Method.NODEWISE, [EvalInstance("x", eta)])
    assert rank_and_select(nodewise, 2, ranking)[0] == {0: 1, 2: 1}


def test_system_metrics():
    y = np.array([[1, 0, 1], [0, 1, 0]])
    perfect = system_metrics(y, y)
    assert perfect == {"bal_acc": 1.0, "f1_instance": 1.0, "f1_pooled": 1.0, "f1_macro": 1.0}
    assert system_metrics(1 - y, y)["bal_acc"] == 0.0
    truth = np.array([[1, 1], [0, 0]])
    pred = np.array([[1, 0], [1, 0]])
    m = system_metrics(pred, truth)
    assert m["bal_acc"] == 0.5 and m["f1_pooled"] == 0.5
    with pytest.raises(ShapeMismatch):
        system_metrics(pred, truth[:1])


def test_f1_without_positives_is_zero():
    z = np.zeros((2, 2), int)
    m = system_metrics(z, z)
    assert m["f1_pooled"] == m["f1_macro"] == m["f1_instance"] == 0.0
    assert m["bal_acc"] == 1.0


def test_incoherence_rates(chain2, fig1):
    se = Contract.se()
    assert all(v == 0.0 for v in incoherence_rates([[1, 1], [0, 0], [D, D]], chain2, se).values())
    r = incoherence_rates([[D, 1]] * 5, chain2, se)
    assert r["edge_del"] == r["edge_any"] == r["hood_del"] == r["hood_any"] == 1.0
    assert r["edge_tax"] == r["edge_ded"] == 0.0
    mixed = np.array([[0, 1, D, 0], [D, 0, 1, 0], [1, 1, 1, 1]])
    r = incoherence_rates(mixed, fig1, se)
    # 9 edges: one tax and one ded in row 0, one del in row 1
    assert r["edge_tax"] == 1 / 9 and r["edge_ded"] == 1 / 9 and r["edge_del"] == 1 / 9
    assert r["edge_any"] == 3 / 9
    # 3 neighbourhoods: tax wins in row 0, del in row 1
    assert r["hood_tax"] == 1 / 3 and r["hood_del"] == 1 / 3 and r["hood_ded"] == 0.0
    assert r["hood_any"] == 2 / 3


def test_incoherence_rates_singleton_has_no_edges():
    t = random_tree(1)
    assert incoherence_rates([[D]], t, Contract.se())["edge_any"] == 0.0


def test_auc_of_constant_curve_and_dominance():
    th = np.array([0, 3, 10])
    res = SweepResult(Method.NODEWISE, 10, th, {"a": np.full(3, 0.7), "b": np.array([0.1, 0.6, 0.7])},
                      th, th, None)
    assert res.auc("a") == pytest.approx(0.7)
    assert res.auc("a") >= res.auc("b")


@pytest.fixture(scope="module")
def sweeps():
    t = random_tree(12, 3, seed=2)
    data = synthetic_dataset(t, 25, seed=5)
    out = {}
    for m in Method:
        es = evaluation_set_from_arrays(t, Contract.se(), m, data.primitives, data.truth, data.experts, data.risks)
        out[m] = run_sweep(es, keep_actions=True)
    return t, data, out


def test_sweep_invariants(sweeps):
    t, data, out = sweeps
    for m, res in out.items():
        b = res.budgets
        assert b[0] == 0.0 and b[-1] == 1.0 and (np.diff(b) > 0).all()
        assert res.raw_deferred[0] == res.realised_deferred[0] == 0
        assert res.realised_deferred[-1] == res.n_total
        assert res.closure.realised_raw_ratio >= 1.0
        if res.closure.activation_rate == 0.0:
            assert res.closure.realised_raw_ratio == 1.0
        for view in ("edge", "hood"):
            parts = [res.curves[f"{view}_{d}"] for d in ("tax", "ded", "del")]
            anyc = res.curves[f"{view}_any"]
            assert ((0 <= anyc) & (anyc <= 1)).all()
            assert all((anyc >= p).all() for p in parts)
            assert (anyc <= sum(parts) + 1e-12).all()
        assert set(res.curves) == set(METRICS)


def test_exact_methods_are_coherent_everywhere(sweeps):
    t, data, out = sweeps
    for m in (Method.PROJECTION, Method.TBP_EXACT, Method.BAYES):
        res = out[m]
        for k in ("edge_any", "hood_any"):
            assert (res.curves[k] == 0).all() and res.auc(k) == 0.0
        for th, acts in res.actions.items():
            for i, a in enumerate(acts):
                assert is_upward_closed(t, complete_system_labels(t, a, data.experts[i]))


def test_nodewise_incoherence_peaks_inside(sweeps):
    res = sweeps[2][Method.NODEWISE]
    curve = res.curves["edge_any"]
    k = int(curve.argmax())
    assert curve[k] > 0 and 0 < k < len(curve) - 1
    assert curve[0] < curve[k] and curve[-1] < curve[k]


def test_bayes_requires_risks(chain2):
    with pytest.raises(ValueError):
        EvaluationSet(chain2, Contract.se(), Method.BAYES, [EvalInstance("x", np.full((2, 3), 1 / 3))])
    with pytest.raises(ShapeMismatch):
        EvaluationSet(chain2, Contract.se(), Method.NODEWISE, [EvalInstance("x", np.full((2, 4), 0.25))])
