"""Action spaces, handoff contracts and the coherence audit.

Actions are small integers: ``0`` asserts absent, ``1`` asserts present and
``1 + e`` defers to expert ``e`` (``e = 1..E``). With a single expert the
deferral action is therefore ``2``.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np

from .errors import (
    ActionTaxonomyMismatch,
    ExpertVectorNotClosed,
    InstanceTooLarge,
    InvalidAction,
    InvalidExpertIndex,
    UnsatisfiableInput,
)
from .taxonomy import Taxonomy, is_upward_closed

ABSENT = 0
PRESENT = 1
DEFER = 2

MAX_ENUM_NODES = 20


def defer_action(expert: int) -> int:
    if expert < 1:
        raise InvalidExpertIndex(f"expert index must be >= 1, got {expert}")
    return 1 + expert


def is_defer(a: int) -> bool:
    return a >= DEFER


def expert_of(a: int) -> int:
    """Expert index of a deferral action (1-based)."""
    if a < DEFER:
        raise InvalidAction(f"action {a} is not a deferral")
    return a - 1


class ContractKind(str, Enum):
    SE = "se"
    SSH = "ssh"
    ME = "me"


@dataclass(frozen=True)
class Contract:
    """A parent->child handoff contract.

    ``se`` is Selective-Exclusion, ``ssh`` strong subtree handoff and ``me``
    the expert-indexed Selective-Exclusion variant. ``same_expert`` (``me``
    only, experimental) restricts a deferred parent's children to the same
    expert.
    """

    kind: ContractKind = ContractKind.SE
    experts: int = 1
    same_expert: bool = False
    _gamma: tuple[tuple[int, ...], ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        kind = ContractKind(self.kind)
        object.__setattr__(self, "kind", kind)
        if self.experts < 1:
            raise InvalidExpertIndex("expert count must be >= 1")
        if kind is not ContractKind.ME and self.experts != 1:
            raise InvalidExpertIndex(f"{kind.value} contract takes exactly one expert")
        if self.same_expert and kind is not ContractKind.ME:
            raise ValueError("same_expert applies to the multi-expert contract only")
        object.__setattr__(self, "_gamma", tuple(self._admissible(i) for i in range(self.n_actions)))

    @classmethod
    def se(cls) -> "Contract":
        return cls(ContractKind.SE)

    @classmethod
    def ssh(cls) -> "Contract":
        return cls(ContractKind.SSH)

    @classmethod
    def multi(cls, experts: int, same_expert: bool = False) -> "Contract":
        return cls(ContractKind.ME, experts, same_expert)

    @property
    def n_actions(self) -> int:
        return 2 + self.experts

    @property
    def actions(self) -> tuple[int, ...]:
        return tuple(range(self.n_actions))

    @property
    def defer_actions(self) -> tuple[int, ...]:
        return tuple(range(DEFER, self.n_actions))

    def _admissible(self, i: int) -> tuple[int, ...]:
        if i == ABSENT:
            return (ABSENT,)
        if i == PRESENT:
            return self.actions
        if self.kind is ContractKind.SSH:
            return (i,)
        if self.same_expert:
            return (ABSENT, i)
        return (ABSENT,) + self.defer_actions

    def gamma(self, parent_action: int) -> tuple[int, ...]:
        """Child actions admissible under ``parent_action``."""
        self.check(parent_action)
        return self._gamma[parent_action]

    def check(self, a: int) -> int:
        if not 0 <= a < self.n_actions:
            if a >= DEFER:
                raise InvalidExpertIndex(f"deferral action {a} exceeds expert count {self.experts}")
            raise InvalidAction(f"invalid action {a}")
        return a

    def format_action(self, a: int) -> str:
        self.check(a)
        if a < DEFER:
            return str(a)
        return "D" if self.experts == 1 else f"D{expert_of(a)}"

    def parse_action(self, token: str) -> int:
        tok = token.strip().upper()
        if tok in ("0", "1"):
            return int(tok)
        if tok in ("D", "⊥"):
            if self.experts != 1:
                raise InvalidExpertIndex("bare 'D' is ambiguous with several experts")
            return DEFER
        if tok.startswith("D") and tok[1:].isdigit():
            return self.check(defer_action(int(tok[1:])))
        raise InvalidAction(f"unrecognised action token {token!r}")


def admissible_child_actions(contract: Contract, parent_action: int) -> frozenset[int]:
    return frozenset(contract.gamma(parent_action))


class Defect(str, Enum):
    COHERENT = "coherent"
    TAXONOMIC = "taxonomic_contradiction"
    DELEGATION = "delegation_violation"
    DEDUCTIVE = "deductive_defect"


# neighbourhood precedence: first violated predicate wins
PRECEDENCE = (Defect.TAXONOMIC, Defect.DELEGATION, Defect.DEDUCTIVE)


def classify_edge(contract: Contract, a_p: int, a_c: int) -> Defect:
    contract.check(a_c)
    if a_c in contract.gamma(a_p):
        return Defect.COHERENT
    if a_p == ABSENT:
        return Defect.TAXONOMIC if a_c == PRESENT else Defect.DEDUCTIVE
    # only a deferred parent is left: positive child, or an SSH/same-expert escape
    return Defect.DELEGATION


def edge_detail(contract: Contract, a_p: int, a_c: int) -> str:
    """Sub-tag distinguishing delegation violations that are not (defer, 1)."""
    if classify_edge(contract, a_p, a_c) is not Defect.DELEGATION or a_c == PRESENT:
        return ""
    if contract.kind is ContractKind.SSH:
        return "ssh_escape"
    return "expert_switch"


def classify_neighbourhood(contract: Contract, a_p: int, child_actions: Sequence[int]) -> Defect:
    if len(child_actions) == 0:
        raise ValueError("neighbourhood needs at least one child")
    found = {classify_edge(contract, a_p, a_c) for a_c in child_actions}
    for cls in PRECEDENCE:
        if cls in found:
            return cls
    return Defect.COHERENT


@dataclass(frozen=True)
class EdgeDefect:
    parent: int
    child: int
    defect: Defect
    detail: str = ""


@dataclass(frozen=True)
class AuditReport:
    edge_defects: tuple[EdgeDefect, ...]
    neighbourhood_classes: dict[int, Defect]
    edge_counts: dict[Defect, int]
    neighbourhood_counts: dict[Defect, int]
    extended_template: bool = False

    @property
    def any_incoherent(self) -> bool:
        return any(e.defect is not Defect.COHERENT for e in self.edge_defects)

    @property
    def violations(self) -> list[EdgeDefect]:
        return [e for e in self.edge_defects if e.defect is not Defect.COHERENT]


def _as_actions(t: Taxonomy, contract: Contract, a) -> np.ndarray:
    arr = np.asarray(a, dtype=np.int64)
    if arr.shape != (t.n,):
        raise ActionTaxonomyMismatch(f"expected {t.n} actions, got shape {arr.shape}")
    for x in arr:
        contract.check(int(x))
    return arr


def audit(t: Taxonomy, contract: Contract, a) -> AuditReport:
    """Classify every edge and every parent neighbourhood of ``a``."""
    a = _as_actions(t, contract, a)
    edges = []
    counts = dict.fromkeys(Defect, 0)
    for p, c in t.edges:
        ap, ac = int(a[p]), int(a[c])
        cls = classify_edge(contract, ap, ac)
        edges.append(EdgeDefect(p, c, cls, edge_detail(contract, ap, ac)))
        counts[cls] += 1
    hood = {}
    hood_counts = dict.fromkeys(Defect, 0)
    for p in t.internal_nodes:
        cls = classify_neighbourhood(contract, int(a[p]), [int(a[c]) for c in t.children[p]])
        hood[p] = cls
        hood_counts[cls] += 1
    return AuditReport(
        tuple(edges), hood, counts, hood_counts, extended_template=contract.kind is not ContractKind.SE
    )


def is_coherent(t: Taxonomy, contract: Contract, a) -> bool:
    return not audit(t, contract, a).any_incoherent


def compatibility_set(t: Taxonomy, a) -> list[tuple[int, ...]]:
    """All upward-closed labelings agreeing with the non-deferred assertions."""
    a = np.asarray(a, dtype=np.int64)
    if a.shape != (t.n,):
        raise ActionTaxonomyMismatch(f"expected {t.n} actions, got shape {a.shape}")
    if t.n > MAX_ENUM_NODES:
        raise InstanceTooLarge(f"enumeration limited to {MAX_ENUM_NODES} nodes")
    free = [v for v in range(t.n) if a[v] >= DEFER]
    base = [int(x) if x < DEFER else 0 for x in a]
    out = []
    for bits in itertools.product((0, 1), repeat=len(free)):
        y = list(base)
        for v, b in zip(free, bits):
            y[v] = b
        if is_upward_closed(t, y):
            out.append(tuple(y))
    out.sort()
    return out


def is_satisfiable(t: Taxonomy, a) -> bool:
    return bool(compatibility_set(t, a))


def entailed_values(t: Taxonomy, a) -> dict[int, int]:
    """Nodes whose value is fixed across every compatible labeling."""
    compat = compatibility_set(t, a)
    if not compat:
        raise UnsatisfiableInput("action vector is a taxonomic contradiction")
    out = {}
    for v in range(t.n):
        vals = {y[v] for y in compat}
        if len(vals) == 1:
            out[v] = vals.pop()
    return out


def is_deductively_closed(t: Taxonomy, a) -> tuple[bool, tuple[int, int] | None]:
    """Return ``(closed, witness)``; witness is ``(node, entailed value)``."""
    a = np.asarray(a, dtype=np.int64)
    for v, b in entailed_values(t, a).items():
        if a[v] != b:
            return False, (v, b)
    return True, None


def is_contract_admissible(t: Taxonomy, contract: Contract, a) -> bool:
    """The contract's own parent-deferral rule, without satisfiability or closure."""
    a = _as_actions(t, contract, a)
    for p, c in t.edges:
        ap, ac = int(a[p]), int(a[c])
        if not is_defer(ap):
            continue
        if ac == PRESENT:
            return False
        if contract.kind is ContractKind.SSH and not is_defer(ac):
            return False
        if contract.same_expert and is_defer(ac) and ac != ap:
            return False
    return True


def definitional_coherence(t: Taxonomy, contract: Contract, a) -> bool:
    """Coherence straight from the definitions: satisfiable, admissible, closed."""
    if not is_satisfiable(t, a):
        return False
    if not is_contract_admissible(t, contract, a):
        return False
    return is_deductively_closed(t, a)[0]


def complete_system_labels(t: Taxonomy, a, experts) -> np.ndarray:
    """Fill deferred nodes from the designated expert's labels.

    ``experts`` is a single label vector or an ``(E, n)`` stack.
    """
    a = np.asarray(a, dtype=np.int64)
    m = np.atleast_2d(np.asarray(experts, dtype=np.int8))
    if a.shape != (t.n,) or m.shape[1] != t.n:
        raise ActionTaxonomyMismatch("actions and expert labels must cover every node")
    for e, row in enumerate(m, start=1):
        if not is_upward_closed(t, row):
            raise ExpertVectorNotClosed(f"expert {e} labels are not upward-closed")
    out = np.empty(t.n, dtype=np.int8)
    for v in range(t.n):
        if a[v] < DEFER:
            out[v] = a[v]
        else:
            e = expert_of(int(a[v]))
            if e > m.shape[0]:
                raise InvalidExpertIndex(f"no labels for expert {e}")
            out[v] = m[e - 1, v]
    return out
