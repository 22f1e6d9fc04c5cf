import numpy as np
import pytest

from cohdefer.coherence import DEFER, Contract
from cohdefer.errors import EmptyFeasibleSet, InstanceTooLarge, NonFiniteValue
from cohdefer.oracle import (
    brute_map,
    enumerate_coherent_set,
    finite_difference,
    is_coherent_vector,
    mask_feasible,
    minimal_feasible_supersets,
)
from cohdefer.taxonomy import from_parent_indices, parse_taxonomy

D = DEFER


def test_single_edge_counts(chain2, se, ssh):
    se_set = enumerate_coherent_set(chain2, se)
    assert len(se_set) == 6
    assert not {(0, 1), (0, D), (D, 1)} & set(se_set)
    assert set(enumerate_coherent_set(chain2, ssh)) == {(0, 0), (1, 0), (1, 1), (1, D), (D, D)}


def test_single_node():
    t = parse_taxonomy({"r": "ROOT"})
    assert enumerate_coherent_set(t, Contract.se()) == [(0,), (1,), (D,)]


def test_dag_uses_every_parent(se):
    dag = parse_taxonomy([("a", "ROOT"), ("b", "ROOT"), ("c", "a"), ("c", "b")])
    assert is_coherent_vector(dag, se, (1, 1, 1))
    assert not is_coherent_vector(dag, se, (1, D, 1))
    assert not is_coherent_vector(dag, se, (1, 0, D))


def test_guard():
    t = from_parent_indices([-1] + [0] * 13)
    with pytest.raises(InstanceTooLarge):
        enumerate_coherent_set(t, Contract.se())


def test_brute_map_basics(chain2, se):
    flat = np.zeros((2, 3))
    a, v = brute_map(chain2, se, flat)
    assert a.tolist() == [0, 0] and v == 0.0
    scores = np.array([[0.0, 1.0, 0.5]])
    t = parse_taxonomy({"r": "ROOT"})
    assert brute_map(t, se, scores)[0].tolist() == [1]
    with pytest.raises(EmptyFeasibleSet):
        brute_map(chain2, se, flat, allowed={0: (D,), 1: (1,)})


def test_brute_map_is_optimal(fig1, se):
    rng = np.random.default_rng(1)
    scores = rng.normal(size=(4, 3))
    a, best = brute_map(fig1, se, scores)
    for b in enumerate_coherent_set(fig1, se):
        assert sum(scores[v, b[v]] for v in range(4)) <= best + 1e-12


def test_mask_feasibility_on_chain(chain3, se):
    assert not mask_feasible(chain3, se, {0, 2})
    assert mask_feasible(chain3, se, {0, 1, 2})
    assert minimal_feasible_supersets(chain3, se, {0, 2}) == [frozenset({0, 1, 2})]


def test_finite_difference_quadratic_and_constant():
    A = np.array([[2.0, 0.5], [0.5, 1.0]])
    x = np.array([0.3, -1.2])
    g = finite_difference(lambda z: 0.5 * z @ A @ z, x)
    np.testing.assert_allclose(g, A @ x, atol=1e-9)
    assert (finite_difference(lambda z: 3.0, x) == 0).all()
    with pytest.raises(NonFiniteValue):
        finite_difference(lambda z: np.inf, x)
