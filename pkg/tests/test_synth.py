import numpy as np
import pytest

from cohdefer.coherence import DEFER
from cohdefer.taxonomy import Kind, is_upward_closed
from cohdefer.tbp import alpha
from cohdefer.synth import (
    make_primitives,
    named_scenarios,
    random_tree,
    sample_expert_labels,
    sample_labels,
    synthetic_dataset,
)


def test_random_tree_shapes():
    single = random_tree(1, seed=0)
    assert single.n == 1 and single.kind is Kind.TREE
    t = random_tree(200, max_children=3, seed=5)
    assert t.kind is Kind.TREE
    assert all(len(p) == 1 for v, p in enumerate(t.parents) if v not in t.roots)
    assert max(len(c) for c in t.children) <= 3
    assert random_tree(30, 2, seed=1, roots=3).kind is Kind.FOREST
    with pytest.raises(ValueError):
        random_tree(0)


def test_random_tree_deterministic():
    assert random_tree(5, seed=9).parents == random_tree(5, seed=9).parents
    assert random_tree(5, seed=9).pairs() == [("n0", "ROOT"), ("n1", "n0"), ("n2", "n0"), ("n3", "n2"), ("n4", "n3")]


def test_labels_extreme_rates(fig1):
    y = sample_labels(fig1, 0.5, 0.0, seed=1, size=500)
    assert (y[:, 1:] == 0).all() and y[:, 0].any()
    y = sample_labels(fig1, 0.5, 1.0, seed=1, size=500)
    assert ((y[:, 0] == 1) == y.all(axis=1)).all()


def test_labels_child_rate_and_open_world(chain2):
    rate = 0.35
    y = sample_labels(chain2, 0.8, rate, seed=3, size=10_000)
    assert all(is_upward_closed(chain2, row) for row in y[:500])
    on = y[:, 0] == 1
    n = on.sum()
    sigma = np.sqrt(rate * (1 - rate) / n)
    assert abs(y[on, 1].mean() - rate) < 3 * sigma
    assert ((y[:, 0] == 1) & (y[:, 1] == 0)).any()


def test_expert_labels_are_closed(fig1):
    y = sample_labels(fig1, 0.7, 0.5, seed=0, size=300)
    m = sample_expert_labels(fig1, y, 0.6, seed=1)
    assert all(is_upward_closed(fig1, row) for row in m)
    perfect = sample_expert_labels(fig1, y, 1.0, seed=1)
    assert (perfect == y).all()


def test_make_primitives():
    targets = np.array([0, 1, 2, 1])
    sharp = make_primitives(targets, sharpness=60.0, noise=1.0, seed=0)
    assert (sharp.argmax(axis=1) == targets).all() and sharp.max(axis=1).min() > 1 - 1e-12
    flat = make_primitives(targets, sharpness=0.0, noise=0.0)
    np.testing.assert_allclose(flat, 1 / 3)
    assert alpha(flat[0]) == pytest.approx(0.5)
    rows = make_primitives(np.zeros((5, 7), dtype=int), n_actions=4, seed=2)
    np.testing.assert_allclose(rows.sum(axis=-1), 1.0, atol=1e-12)


def test_scenarios_are_consistent():
    for sc in named_scenarios().values():
        assert abs(sum(sc.joint.values()) - 1.0) <= 1e-12
        np.testing.assert_allclose(sc.joint_marginals(), sc.pi, atol=1e-12)
        assert sc.pi[1] <= sc.pi[0]
        np.testing.assert_allclose(sc.primitives().sum(axis=1), 1.0, atol=1e-15)


def test_scenario_values():
    sc = named_scenarios()
    dv = sc["delegation_violation"]
    assert dv.pi.tolist() == [0.70, 0.60] and dv.q.tolist() == [0.80, 0.40]
    assert sc["deductive_defect"].q.tolist() == [0.10, 0.95]
    assert sc["delegation_violation"].primitives().argmax(axis=1).tolist() == [DEFER, 1]
    assert sc["deductive_defect"].primitives().argmax(axis=1).tolist() == [0, DEFER]


def test_synthetic_dataset_shapes_and_determinism(fig1):
    a = synthetic_dataset(fig1, 20, experts=2, seed=4)
    b = synthetic_dataset(fig1, 20, experts=2, seed=4)
    assert a.primitives.shape == (20, 4, 4) and a.experts.shape == (20, 2, 4) and a.risks.shape == (20, 4, 4)
    assert (a.primitives == b.primitives).all() and (a.experts == b.experts).all()
    np.testing.assert_allclose(a.primitives.sum(axis=-1), 1.0, atol=1e-12)
    assert all(is_upward_closed(fig1, y) for y in a.truth)
    assert all(is_upward_closed(fig1, m) for block in a.experts for m in block)
