"""Taxonomic Belief Propagation over ternary (or expert-indexed) actions.

Each non-root node gets a transition kernel whose row ``i`` is the local
primitive renormalised onto the child actions the contract admits under
parent action ``i``. Rows with a single admissible action are one-hot; the
SE deferred-parent row is ``[alpha, 0, 1 - alpha]``.
"""
from __future__ import annotations

import numpy as np

from .coherence import ABSENT, DEFER, Contract
from .errors import InvalidPrimitives
from .taxonomy import Taxonomy

FLOOR = 1e-12


def clamp_primitives(eta, floor: float = FLOOR) -> np.ndarray:
    """Clamp entries below ``floor`` and restore unit row sums.

    Rows already at or above the floor are returned bit-for-bit. The excess
    introduced by clamping is taken off each row's largest entry, which keeps
    the operation idempotent.
    """
    eta = np.array(eta, dtype=np.float64, copy=True)
    if not (eta < floor).any():
        return eta
    flat = eta.reshape(-1, eta.shape[-1])
    rows = np.nonzero((flat < floor).any(axis=-1))[0]
    sub = np.maximum(flat[rows], floor)
    top = sub.argmax(axis=-1)
    excess = sub.sum(axis=-1) - 1.0
    sub[np.arange(len(sub)), top] -= excess
    flat[rows] = sub
    return flat.reshape(eta.shape)


def check_primitives(eta, n_actions: int | None = None, n_nodes: int | None = None, atol: float = 1e-6) -> np.ndarray:
    """Validate a primitive table at intake and apply the floor clamp."""
    eta = np.asarray(eta, dtype=np.float64)
    if eta.ndim < 2:
        raise InvalidPrimitives("primitive table must be at least 2-D (nodes x actions)")
    if n_actions is not None and eta.shape[-1] != n_actions:
        raise InvalidPrimitives(f"expected {n_actions} actions per node, got {eta.shape[-1]}")
    if n_nodes is not None and eta.shape[-2] != n_nodes:
        raise InvalidPrimitives(f"expected {n_nodes} nodes, got {eta.shape[-2]}")
    if not np.isfinite(eta).all() or (eta < 0).any():
        raise InvalidPrimitives("primitives must be finite and nonnegative")
    sums = eta.sum(axis=-1)
    if np.abs(sums - 1.0).max() > atol:
        raise InvalidPrimitives(f"primitive rows must sum to 1 (worst {sums.flat[np.abs(sums - 1).argmax()]})")
    return clamp_primitives(eta)


def alpha(eta_v) -> float:
    """Share of the deferred-parent row given to ``0``: eta(0) / (eta(0) + eta(defer))."""
    e0, ed = float(eta_v[0]), float(eta_v[DEFER])
    if e0 + ed == 0.0:
        return 1.0
    return e0 / (e0 + ed)


def build_kernel(contract: Contract, eta_v) -> np.ndarray:
    eta_v = np.asarray(eta_v, dtype=np.float64)
    k = contract.n_actions
    if eta_v.shape != (k,):
        raise InvalidPrimitives(f"expected a length-{k} primitive, got {eta_v.shape}")
    T = np.zeros((k, k))
    for i in range(k):
        adm = list(contract.gamma(i))
        z = eta_v[adm].sum()
        if len(adm) == 1 or z == 0.0:
            # Z = 0 fallback; also covers the alpha = 1 convention
            T[i, adm[0] if len(adm) == 1 else ABSENT] = 1.0
        elif len(adm) == k:
            T[i] = eta_v
        else:
            T[i, adm] = eta_v[adm] / z
    return T


def propagate(t: Taxonomy, contract: Contract, primitives) -> np.ndarray:
    """Top-down marginals: roots copy their primitive, children get mu_parent @ T."""
    t.require_tree()
    eta = check_primitives(primitives, contract.n_actions, t.n)
    mu = np.empty_like(eta)
    parent = t.parent
    for v in t.topo_order:
        p = parent[v]
        if p < 0:
            mu[v] = eta[v]
        else:
            mu[v] = mu[p] @ build_kernel(contract, eta[v])
    return mu


def joint_probability(t: Taxonomy, contract: Contract, primitives, a) -> float:
    t.require_tree()
    eta = check_primitives(primitives, contract.n_actions, t.n)
    a = [contract.check(int(x)) for x in a]
    parent = t.parent
    prob = 1.0
    for v in t.topo_order:
        p = parent[v]
        if p < 0:
            prob *= eta[v, a[v]]
        else:
            prob *= build_kernel(contract, eta[v])[a[p], a[v]]
        if prob == 0.0:
            return 0.0
    return prob


def log_kernels(t: Taxonomy, contract: Contract, eta) -> np.ndarray:
    """Per-node log kernels (roots get a zero placeholder); log 0 is -inf."""
    out = np.zeros((t.n, contract.n_actions, contract.n_actions))
    parent = t.parent
    with np.errstate(divide="ignore"):
        for v in range(t.n):
            if parent[v] >= 0:
                out[v] = np.log(build_kernel(contract, eta[v]))
    return out
