import itertools

import numpy as np
import pytest

from cohdefer.coherence import (
    ABSENT,
    DEFER,
    PRESENT,
    Contract,
    ContractKind,
    Defect,
    admissible_child_actions,
    audit,
    classify_edge,
    classify_neighbourhood,
    compatibility_set,
    complete_system_labels,
    definitional_coherence,
    edge_detail,
    entailed_values,
    is_coherent,
    is_deductively_closed,
    is_satisfiable,
)
from cohdefer.errors import (
    ActionTaxonomyMismatch,
    ExpertVectorNotClosed,
    InstanceTooLarge,
    InvalidAction,
    InvalidExpertIndex,
    UnsatisfiableInput,
)
from cohdefer.taxonomy import from_parent_indices, is_upward_closed

from conftest import all_tree_shapes

D = DEFER


def test_gamma_tables():
    se, ssh = Contract.se(), Contract.ssh()
    assert admissible_child_actions(se, D) == {0, D}
    assert admissible_child_actions(se, 0) == {0}
    assert admissible_child_actions(se, 1) == {0, 1, D}
    assert admissible_child_actions(ssh, D) == {D}
    me = Contract.multi(2)
    assert admissible_child_actions(me, 2) == {0, 2, 3}
    assert admissible_child_actions(me, 1) == {0, 1, 2, 3}
    assert admissible_child_actions(Contract.multi(2, same_expert=True), 3) == {0, 3}
    with pytest.raises(InvalidExpertIndex):
        admissible_child_actions(me, 4)


def test_contract_validation():
    with pytest.raises(InvalidExpertIndex):
        Contract(ContractKind.SE, experts=2)
    with pytest.raises(InvalidExpertIndex):
        Contract.multi(0)
    with pytest.raises(ValueError):
        Contract(ContractKind.SE, same_expert=True)


def test_action_tokens():
    se, me = Contract.se(), Contract.multi(3)
    assert [se.format_action(a) for a in se.actions] == ["0", "1", "D"]
    assert [me.format_action(a) for a in me.actions] == ["0", "1", "D1", "D2", "D3"]
    assert se.parse_action("d") == D and me.parse_action("D3") == 4
    with pytest.raises(InvalidExpertIndex):
        me.parse_action("D")
    with pytest.raises(InvalidExpertIndex):
        me.parse_action("D4")
    with pytest.raises(InvalidAction):
        se.parse_action("2")


@pytest.mark.parametrize("ap,ac,expected", [
    (D, 1, Defect.DELEGATION),
    (0, D, Defect.DEDUCTIVE),
    (1, 0, Defect.COHERENT),
    (0, 1, Defect.TAXONOMIC),
    (D, 0, Defect.COHERENT),
    (D, D, Defect.COHERENT),
    (1, D, Defect.COHERENT),
    (0, 0, Defect.COHERENT),
    (1, 1, Defect.COHERENT),
])
def test_classify_edge_se(se, ap, ac, expected):
    assert classify_edge(se, ap, ac) is expected


def test_classify_edge_ssh_and_me(ssh):
    assert classify_edge(ssh, D, 0) is Defect.DELEGATION
    assert edge_detail(ssh, D, 0) == "ssh_escape"
    assert edge_detail(ssh, D, 1) == ""
    me = Contract.multi(3)
    for e in me.defer_actions:
        assert classify_edge(me, e, 1) is Defect.DELEGATION
        assert classify_edge(me, e, 0) is Defect.COHERENT
    strict = Contract.multi(2, same_expert=True)
    assert classify_edge(strict, 2, 3) is Defect.DELEGATION
    assert edge_detail(strict, 2, 3) == "expert_switch"


def test_classify_neighbourhood_examples(se):
    assert classify_neighbourhood(se, 0, [1, D]) is Defect.TAXONOMIC
    assert classify_neighbourhood(se, D, [0, D]) is Defect.COHERENT
    assert classify_neighbourhood(se, 1, [0, 0, 0]) is Defect.COHERENT
    assert classify_neighbourhood(se, 0, [0, D]) is Defect.DEDUCTIVE
    assert classify_neighbourhood(se, D, [1, 0]) is Defect.DELEGATION
    with pytest.raises(ValueError):
        classify_neighbourhood(se, 0, [])


def test_audit_fig1(fig1, se):
    a = [0, 1, 0, 0]
    rep = audit(fig1, se, a)
    assert [(fig1.names[e.parent], fig1.names[e.child]) for e in rep.violations] == [("LungOpacity", "Edema")]
    assert rep.violations[0].defect is Defect.TAXONOMIC
    assert rep.neighbourhood_classes == {0: Defect.TAXONOMIC}
    assert rep.any_incoherent
    clean = audit(fig1, se, [0, 0, 0, 0])
    assert not clean.any_incoherent
    assert clean.edge_counts[Defect.COHERENT] == 3


def test_audit_rejects_bad_shapes(fig1, se):
    with pytest.raises(ActionTaxonomyMismatch):
        audit(fig1, se, [0, 0])
    with pytest.raises(InvalidExpertIndex):
        audit(fig1, se, [0, 0, 0, 3])


def test_audit_marks_extended_template(chain2):
    assert not audit(chain2, Contract.se(), [1, 1]).extended_template
    assert audit(chain2, Contract.ssh(), [1, 1]).extended_template


def test_compatibility_examples(chain2):
    assert compatibility_set(chain2, [0, 1]) == []
    assert compatibility_set(chain2, [D, D]) == [(0, 0), (1, 0), (1, 1)]
    assert compatibility_set(chain2, [1, 0]) == [(1, 0)]
    big = from_parent_indices([-1] + list(range(20)))
    with pytest.raises(InstanceTooLarge):
        compatibility_set(big, [0] * 21)


def test_deductive_closure_examples(chain2):
    assert is_deductively_closed(chain2, [0, D]) == (False, (1, 0))
    assert is_deductively_closed(chain2, [D, 0]) == (True, None)
    assert is_deductively_closed(chain2, [1, 1]) == (True, None)
    assert entailed_values(chain2, [D, 1]) == {0: 1, 1: 1}
    with pytest.raises(UnsatisfiableInput):
        is_deductively_closed(chain2, [0, 1])


@pytest.mark.parametrize("k", [1, 2, 3, 4])
def test_neighbourhood_satisfiable_iff_no_taxonomic_edge(k):
    star = from_parent_indices([-1] + [0] * k)
    for a in itertools.product((0, 1, D), repeat=star.n):
        has_tax = a[0] == 0 and 1 in a[1:]
        assert is_satisfiable(star, a) == (not has_tax)


@pytest.mark.parametrize("t", list(all_tree_shapes(4)), ids=lambda t: str(t.parent))
def test_satisfiable_iff_no_absent_ancestor_over_present(t):
    # a deferred middle node can hide the contradiction from the edge view
    for a in itertools.product((0, 1, D), repeat=t.n):
        bad = any(a[u] == 0 and a[w] == 1 for w in range(t.n) for u in t.ancestors(w))
        assert is_satisfiable(t, a) == (not bad)


def test_hidden_contradiction_is_still_an_edge_defect(chain3, se):
    a = [0, D, 1]
    assert not is_satisfiable(chain3, a)
    assert [e.defect for e in audit(chain3, se, a).violations] == [Defect.DEDUCTIVE, Defect.DELEGATION]


@pytest.mark.parametrize("t", list(all_tree_shapes(4)), ids=lambda t: str(t.parent))
def test_edge_audit_matches_definitions_se(t, se):
    for a in itertools.product((0, 1, D), repeat=t.n):
        assert is_coherent(t, se, a) == definitional_coherence(t, se, a)


def test_complete_labels_examples(fig1):
    m = np.array([1, 1, 0, 1])
    assert complete_system_labels(fig1, [D] * 4, m).tolist() == m.tolist()
    assert complete_system_labels(fig1, [1, 0, 1, 0], m).tolist() == [1, 0, 1, 0]
    with pytest.raises(ExpertVectorNotClosed):
        complete_system_labels(fig1, [D] * 4, [0, 1, 0, 0])
    stack = np.array([[1, 1, 0, 0], [1, 0, 0, 1]])
    assert complete_system_labels(fig1, [1, 2, 3, 3], stack).tolist() == [1, 1, 0, 1]
    with pytest.raises(InvalidExpertIndex):
        complete_system_labels(fig1, [1, 4, 0, 0], stack)


@pytest.mark.parametrize("t", list(all_tree_shapes(4)), ids=lambda t: str(t.parent))
def test_completion_is_closed_for_coherent_actions(t, se):
    closed = [m for m in itertools.product((0, 1), repeat=t.n) if is_upward_closed(t, m)]
    for a in itertools.product((0, 1, D), repeat=t.n):
        if not is_coherent(t, se, a):
            continue
        for m in closed:
            assert is_upward_closed(t, complete_system_labels(t, a, m))
