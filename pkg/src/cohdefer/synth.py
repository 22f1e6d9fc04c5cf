"""Seeded synthetic taxonomies, labels, experts and primitive tables.

All randomness goes through ``numpy.random.default_rng(seed)`` (PCG64); no
function touches global RNG state.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .coherence import DEFER
from .decode import risk_table
from .rpo import SupervisedInstance
from .taxonomy import Taxonomy, from_parent_indices, parse_taxonomy, upward_close


def random_tree(node_count: int, max_children: int = 3, seed: int = 0, roots: int = 1) -> Taxonomy:
    """Sequential attachment: node ``i`` picks a uniform earlier parent with spare capacity."""
    if node_count < 1:
        raise ValueError("node_count must be >= 1")
    roots = max(1, min(roots, node_count))
    rng = np.random.default_rng(seed)
    parent = [-1] * node_count
    load = [0] * node_count
    open_slots = list(range(roots))
    for i in range(roots, node_count):
        j = int(rng.integers(len(open_slots)))
        p = open_slots[j]
        parent[i] = p
        load[p] += 1
        if load[p] >= max_children:
            open_slots[j] = open_slots[-1]
            open_slots.pop()
        open_slots.append(i)
    return from_parent_indices(parent)


def sample_labels(t: Taxonomy, root_rate: float, child_rate, seed: int = 0, size: int | None = None) -> np.ndarray:
    """Top-down label sampling; upward-closed by construction.

    A child is positive with probability ``child_rate`` (scalar or per node)
    when every parent is positive, and negative otherwise, so positive
    parents with all-negative children occur naturally.
    """
    rng = np.random.default_rng(seed)
    rates = np.broadcast_to(np.asarray(child_rate, dtype=np.float64), (t.n,))
    shape = (t.n,) if size is None else (size, t.n)
    u = rng.random(shape)
    y = np.zeros(shape, dtype=np.int8)
    for v in t.topo_order:
        if not t.parents[v]:
            y[..., v] = u[..., v] < root_rate
        else:
            on = np.logical_and.reduce([y[..., p] == 1 for p in t.parents[v]])
            y[..., v] = on & (u[..., v] < rates[v])
    return y


def sample_expert_labels(t: Taxonomy, truth, q, seed: int = 0) -> np.ndarray:
    """Flip each truth label with probability ``1 - q_v`` then upward-close."""
    rng = np.random.default_rng(seed)
    truth = np.asarray(truth, dtype=np.int8)
    q = np.broadcast_to(np.asarray(q, dtype=np.float64), truth.shape)
    flip = rng.random(truth.shape) >= q
    return upward_close(t, np.where(flip, 1 - truth, truth))


def make_primitives(targets, n_actions: int = 3, sharpness: float = 2.0, noise: float = 1.0, seed: int = 0) -> np.ndarray:
    """Softmax of ``sharpness * onehot(target) + noise * N(0, 1)`` logits."""
    rng = np.random.default_rng(seed)
    targets = np.asarray(targets, dtype=np.int64)
    logits = noise * rng.standard_normal(targets.shape + (n_actions,))
    np.put_along_axis(logits, targets[..., None], np.take_along_axis(logits, targets[..., None], -1) + sharpness, -1)
    logits -= logits.max(axis=-1, keepdims=True)
    e = np.exp(logits)
    return e / e.sum(axis=-1, keepdims=True)


@dataclass
class SyntheticData:
    taxonomy: Taxonomy
    primitives: np.ndarray  # (N, n, K)
    truth: np.ndarray  # (N, n)
    experts: np.ndarray  # (N, E, n)
    expert_quality: np.ndarray  # (E, n)
    risks: np.ndarray  # (N, n, K)
    instance_ids: list[str] = field(default_factory=list)


def synthetic_dataset(
    t: Taxonomy,
    n_instances: int,
    experts: int = 1,
    seed: int = 0,
    root_rate: float = 0.6,
    child_rate: float = 0.5,
    model_noise: float = 1.2,
    defer_gain: float = 3.0,
) -> SyntheticData:
    """Labels, upward-closed expert labels, BR-style primitives and risk tables.

    Class logits are a noisy score of the true label; each deferral logit
    grows with that expert's per-node accuracy, so nodewise rankings mix
    deferrals and assertions across the hierarchy.
    """
    rng = np.random.default_rng(seed)
    seeds = rng.integers(2**31, size=4 + experts)
    y = sample_labels(t, root_rate, child_rate, seed=int(seeds[0]), size=n_instances)
    quality = np.random.default_rng(int(seeds[1])).uniform(0.55, 0.98, size=(experts, t.n))
    m = np.stack(
        [sample_expert_labels(t, y, quality[e], seed=int(seeds[4 + e])) for e in range(experts)], axis=1
    )
    noise = np.random.default_rng(int(seeds[2]))
    score = (2.0 * y - 1.0) + model_noise * noise.standard_normal(y.shape)
    k = 2 + experts
    logits = np.zeros((n_instances, t.n, k))
    logits[..., 0] = -score
    logits[..., 1] = score
    hard = 1.0 - np.abs(np.tanh(score))
    for e in range(experts):
        logits[..., DEFER + e] = defer_gain * (quality[e] - 0.75) + 2.0 * hard + 0.5 * noise.standard_normal(y.shape)
    logits -= logits.max(axis=-1, keepdims=True)
    eta = np.exp(logits)
    eta /= eta.sum(axis=-1, keepdims=True)
    pi = eta[..., 1] / (eta[..., 0] + eta[..., 1])
    risks = np.stack([risk_table(pi[i], 1.0 - quality.T) for i in range(n_instances)])
    ids = [f"x{i:04d}" for i in range(n_instances)]
    return SyntheticData(t, eta, y, m, quality, risks, ids)


@dataclass(frozen=True)
class Scenario:
    name: str
    taxonomy: Taxonomy
    pi: np.ndarray  # P(Y_v = 1 | x)
    q: np.ndarray  # P(M_v = Y_v | x)
    lam: np.ndarray
    w: np.ndarray
    joint: dict[tuple[int, int], float]  # P(Y_p, Y_c)
    expected: dict = field(default_factory=dict)

    def risks(self) -> np.ndarray:
        return risk_table(self.pi, 1.0 - self.q, self.lam, self.w)

    def primitives(self) -> np.ndarray:
        """Rows proportional to (1 - pi, pi, q); their argmax is the nodewise baseline."""
        raw = np.column_stack([1.0 - self.pi, self.pi, self.q])
        return raw / raw.sum(axis=1, keepdims=True)

    def joint_marginals(self) -> np.ndarray:
        pp = sum(p for (yp, _), p in self.joint.items() if yp == 1)
        pc = sum(p for (_, yc), p in self.joint.items() if yc == 1)
        return np.array([pp, pc])


def _edge() -> Taxonomy:
    return parse_taxonomy({"p": "ROOT", "c": "p"})


def named_scenarios() -> dict[str, Scenario]:
    """Two-node counterexample fixtures (parent ``p`` -> child ``c``)."""
    t = _edge()
    zero, one = np.zeros(2), np.ones(2)
    return {
        "delegation_violation": Scenario(
            "delegation_violation", t,
            pi=np.array([0.70, 0.60]), q=np.array([0.80, 0.40]), lam=zero, w=one,
            joint={(1, 1): 0.60, (1, 0): 0.10, (0, 0): 0.30},
            expected={"nodewise": (DEFER, 1)},
        ),
        "deductive_defect": Scenario(
            "deductive_defect", t,
            pi=np.array([0.20, 0.10]), q=np.array([0.10, 0.95]), lam=zero, w=one,
            joint={(1, 1): 0.10, (1, 0): 0.10, (0, 0): 0.80},
            expected={"nodewise": (0, DEFER)},
        ),
        "option_value": Scenario(
            "option_value", t,
            pi=np.array([0.9, 0.9]), q=np.array([1.0, 0.6]), lam=np.array([0.05, 0.05]), w=one,
            joint={(1, 1): 0.9, (0, 0): 0.1},
            expected={"bayes": (1, 1), "risk": 0.20, "defer_parent_risk": 0.50},
        ),
    }


def option_value_instances() -> list[SupervisedInstance]:
    """100 labelled draws matching the option-value scenario's frequencies.

    The parent expert is always right; the child expert errs on 40 of the
    90 positive cases (rate 0.4) and never produces an unclosed vector.
    """
    return (
        [SupervisedInstance([1, 1], [[1, 1]])] * 50
        + [SupervisedInstance([1, 1], [[1, 0]])] * 40
        + [SupervisedInstance([0, 0], [[0, 0]])] * 10
    )


def stage1_optimum_logits(batch: list[SupervisedInstance], n_actions: int = 3) -> np.ndarray:
    """Closed-form minimiser of the Stage I loss for free per-node logits."""
    n = batch[0].y.size
    w = np.zeros((n, n_actions))
    for inst in batch:
        w[np.arange(n), inst.y] += 1.0
        w[:, DEFER:] += inst.correct()
    return np.log(w / w.sum(axis=1, keepdims=True))


# name required by the public API contract
paper_scenarios = named_scenarios
