"""Stage I / RPO objectives with exact reverse-mode gradients through TBP.

Parameters are free logits per node (no network): ``theta`` has shape
``(n_nodes, n_actions)`` and the primitives are its row-wise softmax.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .coherence import DEFER, Contract
from .decode import tbp_map_decode
from .errors import DivergenceDetected
from .taxonomy import Taxonomy, is_upward_closed
from .tbp import FLOOR, build_kernel

LOG_FLOOR = FLOOR


@dataclass(frozen=True)
class SupervisedInstance:
    """Hard labels ``y``, expert labels ``m`` with shape (E, n), optional soft scores ``s``."""

    y: np.ndarray
    m: np.ndarray
    s: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "y", np.asarray(self.y, dtype=np.int8))
        object.__setattr__(self, "m", np.atleast_2d(np.asarray(self.m, dtype=np.int8)))
        if self.s is not None:
            object.__setattr__(self, "s", np.asarray(self.s, dtype=np.float64))

    def correct(self) -> np.ndarray:
        """Expert correctness flags, shape (n, E)."""
        return (self.m == self.y[None, :]).T.astype(np.float64)

    def validate(self, t: Taxonomy) -> None:
        if not is_upward_closed(t, self.y):
            raise ValueError("reference labels must be upward-closed")
        for row in self.m:
            if not is_upward_closed(t, row):
                raise ValueError("expert labels must be upward-closed")
        if self.s is not None and any(self.s[c] > self.s[p] + 1e-12 for p, c in t.edges):
            raise ValueError("soft scores must not increase from parent to child")


def softmax(theta) -> np.ndarray:
    z = np.asarray(theta, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _target_weights(y: int, correct, soft: float | None, k: int) -> np.ndarray:
    w = np.zeros(k)
    if soft is None:
        w[int(y)] = 1.0
    else:
        w[0], w[1] = 1.0 - soft, soft
    w[DEFER:] = correct
    return w


def defer_loss(dist, y: int, correct, soft: float | None = None) -> float:
    """Defer-aware cross-entropy ``-log d(y) - sum_e [m_e == y] log d(defer_e)``.

    ``correct`` holds one 0/1 flag per expert. With ``soft`` the class term
    becomes ``-(1 - s) log d(0) - s log d(1)``.
    """
    d = np.asarray(dist, dtype=np.float64)
    w = _target_weights(y, np.atleast_1d(correct), soft, d.size)
    return float(-(w * np.log(np.maximum(d, LOG_FLOOR))).sum())


def defer_loss_grad(dist, y: int, correct, soft: float | None = None) -> np.ndarray:
    """Gradient of :func:`defer_loss` with respect to the distribution."""
    d = np.asarray(dist, dtype=np.float64)
    w = _target_weights(y, np.atleast_1d(correct), soft, d.size)
    return np.where(d > LOG_FLOOR, -w / np.maximum(d, LOG_FLOOR), 0.0)


def _softmax_backward(eta: np.ndarray, g_eta: np.ndarray) -> np.ndarray:
    return eta * (g_eta - (eta * g_eta).sum(axis=-1, keepdims=True))


def _node_losses(dists, inst: SupervisedInstance, use_soft: bool):
    corr = inst.correct()
    loss, grad = 0.0, np.zeros_like(dists)
    for v in range(dists.shape[0]):
        soft = float(inst.s[v]) if (use_soft and inst.s is not None) else None
        loss += defer_loss(dists[v], inst.y[v], corr[v], soft)
        grad[v] = defer_loss_grad(dists[v], inst.y[v], corr[v], soft)
    return loss, grad


def stage1_objective(theta, batch: Sequence[SupervisedInstance], use_soft: bool = False) -> tuple[float, np.ndarray]:
    """Sum of nodewise losses on the local primitives; returns (value, d value / d theta)."""
    eta = softmax(theta)
    total, g_eta = 0.0, np.zeros_like(eta)
    for inst in batch:
        loss, g = _node_losses(eta, inst, use_soft)
        total += loss
        g_eta += g
    return total, _softmax_backward(eta, g_eta)


def _forward(t: Taxonomy, contract: Contract, eta: np.ndarray):
    parent = t.parent
    mu = np.empty_like(eta)
    kernels = {}
    for v in t.topo_order:
        p = parent[v]
        if p < 0:
            mu[v] = eta[v]
        else:
            kernels[v] = build_kernel(contract, eta[v])
            mu[v] = mu[p] @ kernels[v]
    return mu, kernels


def _kernel_backward(contract: Contract, eta_v: np.ndarray, T: np.ndarray, g_T: np.ndarray) -> np.ndarray:
    # row i is eta restricted to gamma(i) over its own mass Z_i
    g = np.zeros_like(eta_v)
    for i in range(contract.n_actions):
        adm = list(contract.gamma(i))
        if len(adm) == 1:
            continue
        if len(adm) == contract.n_actions:
            g += g_T[i]
            continue
        z = eta_v[adm].sum()
        if z == 0.0:
            continue
        inner = float(g_T[i, adm] @ T[i, adm])
        g[adm] += (g_T[i, adm] - inner) / z
    return g


def rpo_objective(
    theta, t: Taxonomy, contract: Contract, batch: Sequence[SupervisedInstance], use_soft: bool = False
) -> tuple[float, np.ndarray]:
    """Sum of nodewise losses on the TBP marginals; returns (value, d value / d theta)."""
    t.require_tree()
    eta = softmax(theta)
    mu, kernels = _forward(t, contract, eta)
    parent = t.parent
    total, g_mu = 0.0, np.zeros_like(mu)
    for inst in batch:
        loss, g = _node_losses(mu, inst, use_soft)
        total += loss
        g_mu += g
    g_eta = np.zeros_like(eta)
    for v in reversed(t.topo_order):
        p = parent[v]
        if p < 0:
            g_eta[v] += g_mu[v]
            continue
        T = kernels[v]
        g_mu[p] += T @ g_mu[v]
        g_eta[v] += _kernel_backward(contract, eta[v], T, np.outer(mu[p], g_mu[v]))
    return total, _softmax_backward(eta, g_eta)


def gradient_descent_demo(
    theta0,
    t: Taxonomy,
    contract: Contract,
    batch: Sequence[SupervisedInstance],
    steps: int,
    rate: float,
    patience: int = 10,
) -> tuple[list[float], np.ndarray]:
    """Plain fixed-step descent on the RPO objective.

    Returns the objective trajectory (length ``steps + 1``) and the final
    logits. Raises :class:`DivergenceDetected` after more than ``patience``
    consecutive increases.
    """
    theta = np.array(theta0, dtype=np.float64, copy=True)
    value, grad = rpo_objective(theta, t, contract, batch)
    traj = [value]
    rising = 0
    for _ in range(steps):
        theta = theta - rate * grad
        value, grad = rpo_objective(theta, t, contract, batch)
        rising = rising + 1 if value > traj[-1] else 0
        traj.append(value)
        if rising > patience:
            raise DivergenceDetected(f"objective rose for {rising} consecutive steps")
    return traj, theta


def decoded_policy(theta, t: Taxonomy, contract: Contract) -> np.ndarray:
    """Deterministic coherent policy of the logits: exact TBP MAP decode."""
    return tbp_map_decode(t, contract, softmax(theta))[0]
