"""Brute-force reference implementations for small instances.

Nothing here touches the dynamic programs or the contract's admissible-set
tables: the forbidden parent/child patterns are written out again from the
definitions so the two routes stay independent.
"""
from __future__ import annotations

import itertools
import math
from typing import Callable, Collection, Mapping

import numpy as np

from .errors import EmptyFeasibleSet, InstanceTooLarge, NonFiniteValue

MAX_VECTORS = 10**6


def _forbidden(kind: str, experts: int, same_expert: bool, ap: int, ac: int) -> bool:
    if ap == 0:
        return ac != 0
    if ap == 1:
        return False
    # deferred parent
    if ac == 1:
        return True
    if kind == "ssh":
        return ac != ap
    if same_expert and ac >= 2:
        return ac != ap
    return False


def is_coherent_vector(t, contract, a) -> bool:
    kind = getattr(contract.kind, "value", contract.kind)
    for v in range(t.n):
        for p in t.parents[v]:
            if _forbidden(kind, contract.experts, contract.same_expert, int(a[p]), int(a[v])):
                return False
    return True


def _vectors(t, contract, allowed: Mapping[int, Collection[int]] | None = None):
    k = contract.n_actions
    domains = []
    for v in t.topo_order:
        dom = range(k)
        if allowed is not None and v in allowed:
            dom = sorted(allowed[v])
        domains.append(tuple(dom))
    total = math.prod(len(d) for d in domains)
    if total > MAX_VECTORS:
        raise InstanceTooLarge(f"{total} action vectors exceed the enumeration guard")
    order = t.topo_order
    for combo in itertools.product(*domains):
        a = [0] * t.n
        for v, x in zip(order, combo):
            a[v] = x
        yield tuple(a)


def enumerate_coherent_set(t, contract, allowed=None) -> list[tuple[int, ...]]:
    """All coherent action vectors, in lexicographic order of the topological ordering.

    Multi-parent nodes must respect every parent, i.e. the intersection of the
    per-parent admissible sets.
    """
    return [a for a in _vectors(t, contract, allowed) if is_coherent_vector(t, contract, a)]


def vector_score(t, a, node_scores, edge_scores=None) -> float:
    terms = [float(node_scores[v][a[v]]) for v in range(t.n)]
    if edge_scores is not None:
        for v in range(t.n):
            for p in t.parents[v]:
                terms.append(float(edge_scores[v][a[p]][a[v]]))
    return math.fsum(terms)


def brute_map(t, contract, node_scores, edge_scores=None, allowed=None, minimize: bool = False):
    """Exhaustive optimum over the coherent set (optionally masked).

    Returns ``(vector, value)``; ties go to the first vector in topological
    lexicographic order.
    """
    sign = -1.0 if minimize else 1.0
    best_val, best = -math.inf, None
    for a in enumerate_coherent_set(t, contract, allowed):
        val = sign * vector_score(t, a, node_scores, edge_scores)
        if val > best_val:
            best_val, best = val, a
    if best is None:
        raise EmptyFeasibleSet("no coherent vector satisfies the mask")
    return np.array(best), sign * best_val


def budget_allowed(t, contract, defer_set) -> dict[int, tuple[int, ...]]:
    defers = tuple(range(2, contract.n_actions))
    return {v: (defers if v in defer_set else (0, 1)) for v in range(t.n)}


def mask_feasible(t, contract, defer_set) -> bool:
    """Whether any coherent vector defers exactly ``defer_set`` (works on DAGs)."""
    return bool(enumerate_coherent_set(t, contract, budget_allowed(t, contract, defer_set)))


def minimal_feasible_supersets(t, contract, raw) -> list[frozenset[int]]:
    """Every smallest feasible superset of ``raw``, by subset search."""
    raw = frozenset(raw)
    rest = [v for v in range(t.n) if v not in raw]
    for size in range(len(rest) + 1):
        hits = [raw | frozenset(extra) for extra in itertools.combinations(rest, size)
                if mask_feasible(t, contract, raw | frozenset(extra))]
        if hits:
            return hits
    return []


def brute_marginals(t, contract, joint: Callable) -> np.ndarray:
    mu = np.zeros((t.n, contract.n_actions))
    for a in _vectors(t, contract):
        p = joint(a)
        for v in range(t.n):
            mu[v, a[v]] += p
    return mu


def finite_difference(f: Callable[[np.ndarray], float], x, step: float = 1e-5) -> np.ndarray:
    """Central differences of scalar ``f`` at ``x``, coordinate by coordinate."""
    x = np.array(x, dtype=np.float64, copy=True)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    g = grad.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + step
        hi = f(x)
        flat[i] = old - step
        lo = f(x)
        flat[i] = old
        if not (math.isfinite(hi) and math.isfinite(lo)):
            raise NonFiniteValue(f"non-finite objective near coordinate {i}")
        g[i] = (hi - lo) / (2.0 * step)
    return grad
