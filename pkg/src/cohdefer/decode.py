"""Exact tree decoders over the coherent action set, plus the nodewise baselines.

Every exact decoder is one instance of a max-sum dynamic program on the tree:

    G_v(j) = node_score[v, j] + sum_{u in children(v)} F_u(j)
    F_u(i) = max_{j in gamma(i) & allowed_u} edge_score[u, i, j] + G_u(j)

Ties go to the lower action index, which makes the decode the
lexicographically smallest optimum in any parent-before-child order.
Reported scores are recomputed with ``math.fsum`` over the chosen terms.
"""
from __future__ import annotations

import math
from typing import Collection, Mapping, Sequence

import numpy as np

from .coherence import ABSENT, DEFER, PRESENT, AuditReport, Contract, ContractKind, audit, defer_action
from .errors import EmptyFeasibleSet, InfeasibleBudgetMask, InvalidRisks
from .taxonomy import Taxonomy
from .tbp import check_primitives, log_kernels, propagate

NEG_INF = float("-inf")

Allowed = Mapping[int, Collection[int]]


def _tree_dp(
    t: Taxonomy,
    contract: Contract,
    node_scores: np.ndarray,
    allowed: Allowed | None = None,
    edge_scores: np.ndarray | None = None,
) -> tuple[np.ndarray, float]:
    t.require_tree()
    k = contract.n_actions
    gamma = [contract.gamma(i) for i in range(k)]
    scores = node_scores.tolist()
    edges = edge_scores.tolist() if edge_scores is not None else None
    allowed = allowed or {}
    parent = t.parent
    children = t.children

    G: list[list[float]] = [[]] * t.n
    F: list[list[float]] = [[]] * t.n
    choice: list[list[int]] = [[]] * t.n
    for v in reversed(t.topo_order):
        g = list(scores[v])
        for u in children[v]:
            fu = F[u]
            for j in range(k):
                g[j] += fu[j]
        G[v] = g
        if parent[v] < 0:
            continue
        ok = allowed.get(v)
        ev = edges[v] if edges is not None else None
        f, ch = [], []
        for i in range(k):
            best, arg = NEG_INF, gamma[i][0]
            for j in gamma[i]:
                if ok is not None and j not in ok:
                    continue
                val = g[j] + ev[i][j] if ev is not None else g[j]
                if val > best:
                    best, arg = val, j
            f.append(best)
            ch.append(arg)
        F[v], choice[v] = f, ch

    a = np.zeros(t.n, dtype=np.int64)
    for r in t.roots:
        ok = allowed.get(r)
        best, arg = NEG_INF, -1
        for j in range(k):
            if ok is not None and j not in ok:
                continue
            if G[r][j] > best:
                best, arg = G[r][j], j
        if arg < 0 or best == NEG_INF:
            raise EmptyFeasibleSet("no coherent action vector satisfies the constraints")
        a[r] = arg
    for v in t.topo_order:
        p = parent[v]
        if p >= 0:
            a[v] = choice[v][a[p]]

    terms = [scores[v][a[v]] for v in range(t.n)]
    if edges is not None:
        terms += [edges[v][a[parent[v]]][a[v]] for v in range(t.n) if parent[v] >= 0]
    return a, math.fsum(terms)


def _log_primitives(t: Taxonomy, contract: Contract, primitives) -> np.ndarray:
    eta = check_primitives(primitives, contract.n_actions, t.n)
    return np.log(eta)


def project_map(t: Taxonomy, contract: Contract, primitives) -> tuple[np.ndarray, float]:
    """Coherent MAP projection of local primitives; returns actions and log-score."""
    return _tree_dp(t, contract, _log_primitives(t, contract, primitives))


def constrained_scores(t: Taxonomy, contract: Contract, node_scores: np.ndarray, target: int) -> np.ndarray:
    """Best total score with ``target`` clamped to each action in turn (-inf if infeasible)."""
    out = np.full(contract.n_actions, NEG_INF)
    for a_star in range(contract.n_actions):
        try:
            out[a_star] = _tree_dp(t, contract, node_scores, {target: (a_star,)})[1]
        except EmptyFeasibleSet:
            pass
    return out


def action_scores(t: Taxonomy, contract: Contract, primitives, target) -> np.ndarray:
    return constrained_scores(t, contract, _log_primitives(t, contract, primitives), t.idx(target))


def all_action_scores(t: Taxonomy, contract: Contract, node_scores: np.ndarray) -> np.ndarray:
    """``constrained_scores`` for every node; shape (n, K)."""
    return np.stack([constrained_scores(t, contract, node_scores, v) for v in range(t.n)])


def defer_priority(r) -> tuple[float, int]:
    """Deferral score ``r(defer) - max(r(0), r(1))`` and the best expert index."""
    r = np.asarray(r, dtype=np.float64)
    defer = r[DEFER:]
    e = int(np.argmax(defer))
    best_assert = max(r[ABSENT], r[PRESENT])
    if defer[e] == NEG_INF and best_assert == NEG_INF:
        return NEG_INF, e + 1
    return float(defer[e] - best_assert), e + 1


def feasibility_closure(t: Taxonomy, contract: Contract, raw_defer: Collection) -> frozenset[int]:
    """Smallest superset of ``raw_defer`` for which the budget mask is feasible.

    Under SE a deferred ancestor and a deferred descendant must be joined by
    a deferred path; under SSH every descendant of a deferred node is added.
    """
    t.require_tree()
    raw = t.indices(raw_defer)
    parent = t.parent
    if contract.kind is ContractKind.SSH:
        out = set(raw)
        for v in t.topo_order:
            if parent[v] in out:
                out.add(v)
        return frozenset(out)
    below = [False] * t.n
    for v in reversed(t.topo_order):
        if v in raw or any(below[c] for c in t.children[v]):
            below[v] = True
    out = set(raw)
    for v in t.topo_order:
        p = parent[v]
        if p >= 0 and p in out and below[v]:
            out.add(v)
    return frozenset(out)


def budget_mask(contract: Contract, n: int, defer_set) -> dict[int, tuple[int, ...]]:
    """Allowed actions per node: deferral for members, autonomous otherwise.

    ``defer_set`` may map nodes to a pinned expert index; plain set members
    may defer to any expert.
    """
    pinned = defer_set if isinstance(defer_set, Mapping) else {}
    auto = (ABSENT, PRESENT)
    out = {}
    for v in range(n):
        if v in defer_set:
            e = pinned.get(v)
            out[v] = (defer_action(e),) if e else contract.defer_actions
        else:
            out[v] = auto
    return out


def _masked(t, contract, defer_set):
    if defer_set is None:
        return None
    if not isinstance(defer_set, Mapping):
        defer_set = t.indices(defer_set)
    return budget_mask(contract, t.n, defer_set)


def budgeted_decode(t: Taxonomy, contract: Contract, primitives, defer_set) -> np.ndarray:
    """Exact projection with ``defer_set`` clamped to deferral and the rest autonomous."""
    try:
        a, _ = _tree_dp(t, contract, _log_primitives(t, contract, primitives), _masked(t, contract, defer_set))
    except EmptyFeasibleSet as exc:
        raise InfeasibleBudgetMask("defer set is not closed; apply feasibility_closure first") from exc
    return a


def tbp_map_decode(t: Taxonomy, contract: Contract, primitives, defer_set=None) -> tuple[np.ndarray, float]:
    """Exact MAP of the TBP joint model over the (optionally budgeted) coherent set."""
    t.require_tree()
    eta = check_primitives(primitives, contract.n_actions, t.n)
    node = np.zeros_like(eta)
    for r in t.roots:
        node[r] = np.log(eta[r])
    try:
        return _tree_dp(t, contract, node, _masked(t, contract, defer_set), log_kernels(t, contract, eta))
    except EmptyFeasibleSet as exc:
        raise InfeasibleBudgetMask("defer set is not closed; apply feasibility_closure first") from exc


def marginal_argmax(mu: np.ndarray, defer_set=None, pinned: Mapping[int, int] | None = None) -> np.ndarray:
    """Per-node argmax of marginals under a budget mask (no coherence guarantee)."""
    mu = np.asarray(mu)
    if defer_set is None:
        return mu.argmax(axis=1)
    pinned = pinned or (defer_set if isinstance(defer_set, Mapping) else {})
    a = np.where(mu[:, PRESENT] > mu[:, ABSENT], PRESENT, ABSENT)
    for v in defer_set:
        e = pinned.get(v)
        a[v] = defer_action(e) if e else DEFER + int(np.argmax(mu[v, DEFER:]))
    return a


def fast_marginal_decode(t: Taxonomy, contract: Contract, primitives, defer_set=None) -> tuple[np.ndarray, AuditReport]:
    mu = propagate(t, contract, primitives)
    if defer_set is not None and not isinstance(defer_set, Mapping):
        defer_set = t.indices(defer_set)
    a = marginal_argmax(mu, defer_set)
    return a, audit(t, contract, a)


def risk_table(pi, expert_error, lam=0.0, w=1.0) -> np.ndarray:
    """Per-node action risks ``[w*pi, w*(1-pi), w*(err_e + lam_e) ...]``.

    ``expert_error`` holds P(M != Y | x) with shape (n,) or (n, E); ``lam``
    broadcasts the same way.
    """
    pi = np.asarray(pi, dtype=np.float64)
    err = np.asarray(expert_error, dtype=np.float64)
    if err.ndim == 1:
        err = err[:, None]
    lam = np.broadcast_to(np.asarray(lam, dtype=np.float64).reshape(-1, 1) if np.ndim(lam) == 1 else lam, err.shape)
    w = np.broadcast_to(np.asarray(w, dtype=np.float64), pi.shape)
    rho = np.empty((pi.shape[0], 2 + err.shape[1]))
    rho[:, ABSENT] = w * pi
    rho[:, PRESENT] = w * (1.0 - pi)
    rho[:, DEFER:] = w[:, None] * (err + lam)
    return check_risks(rho)


def check_risks(rho, n_actions: int | None = None, n_nodes: int | None = None) -> np.ndarray:
    rho = np.asarray(rho, dtype=np.float64)
    if rho.ndim != 2:
        raise InvalidRisks("risk table must be 2-D (nodes x actions)")
    if n_actions is not None and rho.shape[1] != n_actions:
        raise InvalidRisks(f"expected {n_actions} actions per node, got {rho.shape[1]}")
    if n_nodes is not None and rho.shape[0] != n_nodes:
        raise InvalidRisks(f"expected {n_nodes} nodes, got {rho.shape[0]}")
    if not np.isfinite(rho).all() or (rho < 0).any():
        raise InvalidRisks("risks must be finite and nonnegative")
    return rho


def bayes_coherent_decode(t: Taxonomy, contract: Contract, risks, defer_set=None) -> tuple[np.ndarray, float]:
    """Minimum-risk coherent action vector and its total risk."""
    rho = check_risks(risks, contract.n_actions, t.n)
    try:
        a, _ = _tree_dp(t, contract, -rho, _masked(t, contract, defer_set))
    except EmptyFeasibleSet as exc:
        raise InfeasibleBudgetMask("defer set is not closed; apply feasibility_closure first") from exc
    return a, math.fsum(rho[v, a[v]] for v in range(t.n))


def nodewise_bayes_baseline(pi: Sequence[float], q: Sequence[float]) -> np.ndarray:
    """Independent zero-cost rule: argmax of (1 - pi, pi, q) per node."""
    scores = np.column_stack([1.0 - np.asarray(pi, float), np.asarray(pi, float), np.asarray(q, float)])
    return scores.argmax(axis=1)


def nodewise_risk_argmin(risks) -> np.ndarray:
    """General-cost nodewise rule: argmin of each risk row."""
    return check_risks(risks).argmin(axis=1)
