"""Budget-swept system evaluation.

A single global ranking of (instance, node) decisions by defer priority is cut
at each threshold of an integer grid; the selected decisions are clamped to
deferral, the method decodes the rest, deferred nodes are filled from expert
labels, and utility and incoherence curves are integrated over the budget
fraction with the trapezoid rule.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np

from .coherence import DEFER, PRECEDENCE, Contract, Defect, classify_edge, complete_system_labels
from .decode import (
    all_action_scores,
    bayes_coherent_decode,
    budgeted_decode,
    check_risks,
    defer_priority,
    feasibility_closure,
    marginal_argmax,
    tbp_map_decode,
)
from .errors import InfeasibleBudgetMask, ShapeMismatch
from .taxonomy import Taxonomy
from .tbp import check_primitives, propagate

UTILITY = ("bal_acc", "f1_instance", "f1_pooled", "f1_macro")
DEFECTS = ("tax", "ded", "del", "any")
RATES = tuple(f"edge_{d}" for d in DEFECTS) + tuple(f"hood_{d}" for d in DEFECTS)
METRICS = UTILITY + RATES

_RANK = {Defect.COHERENT: 0}
_RANK.update({cls: len(PRECEDENCE) - i for i, cls in enumerate(PRECEDENCE)})
_SHORT = {Defect.TAXONOMIC: "tax", Defect.DEDUCTIVE: "ded", Defect.DELEGATION: "del"}


class Method(str, Enum):
    NODEWISE = "nodewise"
    PROJECTION = "project"
    TBP_FAST = "tbp-fast"
    TBP_EXACT = "tbp-exact"
    BAYES = "bayes"

    @property
    def uses_closure(self) -> bool:
        return self in (Method.PROJECTION, Method.TBP_EXACT, Method.BAYES)


@dataclass(frozen=True)
class EvalInstance:
    instance_id: str
    primitives: np.ndarray | None  # (n, K)
    truth: np.ndarray | None = None  # (n,), needed for sweeps only
    experts: np.ndarray | None = None  # (E, n), needed for sweeps only
    risks: np.ndarray | None = None  # (n, K), required by the Bayes method


@dataclass
class EvaluationSet:
    taxonomy: Taxonomy
    contract: Contract
    method: Method
    instances: list[EvalInstance]

    def __post_init__(self):
        self.method = Method(self.method)
        self.taxonomy.require_tree()
        n, k = self.taxonomy.n, self.contract.n_actions
        ids = [inst.instance_id for inst in self.instances]
        if len(set(ids)) != len(ids):
            raise ValueError("instance ids must be unique")
        for inst in self.instances:
            table = inst.risks if self.method is Method.BAYES else inst.primitives
            if table is None:
                raise ValueError(f"{inst.instance_id}: method {self.method.value} needs "
                                 f"{'risks' if self.method is Method.BAYES else 'primitives'}")
            if np.shape(table) != (n, k):
                raise ShapeMismatch(f"{inst.instance_id}: expected a ({n}, {k}) table")
            if inst.truth is not None and np.shape(inst.truth) != (n,):
                raise ShapeMismatch(f"{inst.instance_id}: truth must cover every node")
            if inst.experts is not None and np.shape(np.atleast_2d(inst.experts))[1] != n:
                raise ShapeMismatch(f"{inst.instance_id}: expert labels must cover every node")

    @property
    def n_total(self) -> int:
        return len(self.instances) * self.taxonomy.n


def budget_grid(n_total: int, intervals: int = 101) -> np.ndarray:
    """Unique rounded points of ``linspace(0, n_total, intervals + 1)``."""
    if n_total < 1:
        raise ValueError("n_total must be >= 1")
    grid = np.rint(np.linspace(0, n_total, intervals + 1)).astype(np.int64)
    return np.unique(np.concatenate([grid, [0, n_total]]))


def ranking_values(eval_set: EvaluationSet, inst: EvalInstance) -> np.ndarray:
    """Per-node ranking table r: eta, constrained action scores, or TBP marginals."""
    t, c, m = eval_set.taxonomy, eval_set.contract, eval_set.method
    if m is Method.BAYES:
        return all_action_scores(t, c, -check_risks(inst.risks, c.n_actions, t.n))
    eta = check_primitives(inst.primitives, c.n_actions, t.n)
    if m is Method.NODEWISE:
        return eta
    if m is Method.PROJECTION:
        return all_action_scores(t, c, np.log(eta))
    return propagate(t, c, eta)


@dataclass(frozen=True)
class Ranking:
    """Global defer order: (instance position, node, expert) sorted by priority."""

    order: tuple[tuple[int, int, int], ...]
    scores: tuple[float, ...]


def global_ranking(eval_set: EvaluationSet) -> Ranking:
    t = eval_set.taxonomy
    rows = []
    for i, inst in enumerate(eval_set.instances):
        r = ranking_values(eval_set, inst)
        for v in range(t.n):
            s, e = defer_priority(r[v])
            rows.append((-s, inst.instance_id, t.names[v], i, v, e))
    rows.sort(key=lambda x: x[:3])
    return Ranking(tuple((i, v, e) for _, _, _, i, v, e in rows), tuple(-x[0] for x in rows))


def _raw_sets(eval_set: EvaluationSet, ranking: Ranking, threshold: int) -> list[dict[int, int]]:
    sets: list[dict[int, int]] = [{} for _ in eval_set.instances]
    for i, v, e in ranking.order[:threshold]:
        sets[i][v] = e
    return sets


def _close(eval_set: EvaluationSet, raw: dict[int, int]) -> dict[int, int | None]:
    if not eval_set.method.uses_closure or not raw:
        return dict(raw)
    closed = feasibility_closure(eval_set.taxonomy, eval_set.contract, raw.keys())
    return {v: raw.get(v) for v in sorted(closed)}


def rank_and_select(eval_set: EvaluationSet, threshold: int, ranking: Ranking | None = None) -> list[dict[int, int | None]]:
    """Defer sets per instance at ``threshold``, closed for the exact methods.

    Keys are node indices; values pin the expert chosen by the ranking, or
    ``None`` for nodes added by the feasibility closure.
    """
    if not 0 <= threshold <= eval_set.n_total:
        raise ValueError(f"threshold must lie in [0, {eval_set.n_total}]")
    ranking = ranking or global_ranking(eval_set)
    return [_close(eval_set, raw) for raw in _raw_sets(eval_set, ranking, threshold)]


def decode_at(eval_set: EvaluationSet, threshold: int, ranking: Ranking | None = None):
    """Decode every instance at one budget threshold.

    Returns ``(actions, raw_sets, masks)`` where ``actions`` is (N, n).
    """
    ranking = ranking or global_ranking(eval_set)
    raws = _raw_sets(eval_set, ranking, threshold)
    masks = [_close(eval_set, raw) for raw in raws]
    fast = eval_set.method in (Method.NODEWISE, Method.TBP_FAST)
    acts = np.stack([
        _decode(eval_set, inst, ranking_values(eval_set, inst) if fast else None, mask)
        for inst, mask in zip(eval_set.instances, masks)
    ]) if eval_set.instances else np.zeros((0, eval_set.taxonomy.n), dtype=np.int64)
    return acts, raws, masks


def _decode(eval_set: EvaluationSet, inst: EvalInstance, r: np.ndarray, mask: dict) -> np.ndarray:
    t, c, m = eval_set.taxonomy, eval_set.contract, eval_set.method
    if m in (Method.NODEWISE, Method.TBP_FAST):
        return marginal_argmax(r, mask)
    try:
        return _exact(t, c, m, inst, mask)
    except InfeasibleBudgetMask:
        # pinned experts can clash under a same-expert contract; let the decoder choose
        return _exact(t, c, m, inst, set(mask))


def _exact(t, c, m, inst, mask):
    if m is Method.PROJECTION:
        return budgeted_decode(t, c, inst.primitives, mask)
    if m is Method.TBP_EXACT:
        return tbp_map_decode(t, c, inst.primitives, mask)[0]
    return bayes_coherent_decode(t, c, inst.risks, mask)[0]


def _f1(tp, fp, fn) -> np.ndarray:
    tp, fp, fn = (np.asarray(x, dtype=np.float64) for x in (tp, fp, fn))
    den = 2 * tp + fp + fn
    return np.divide(2 * tp, den, out=np.zeros_like(den), where=den > 0)


def system_metrics(pred, truth) -> dict[str, float]:
    """Balanced accuracy and F1 variants of completed labels against the truth.

    Balanced accuracy pools every label decision and averages the recall of
    whichever classes occur. F1 with no positives in prediction or truth is 0.
    """
    pred = np.asarray(pred).astype(bool)
    truth = np.asarray(truth).astype(bool)
    if pred.shape != truth.shape or pred.ndim != 2:
        raise ShapeMismatch(f"prediction {pred.shape} and truth {truth.shape} must be equal 2-D shapes")
    tp = pred & truth
    fp = pred & ~truth
    fn = ~pred & truth
    tn = ~pred & ~truth
    recalls = []
    if truth.any():
        recalls.append(tp.sum() / truth.sum())
    if (~truth).any():
        recalls.append(tn.sum() / (~truth).sum())
    return {
        "bal_acc": float(np.mean(recalls)),
        "f1_instance": float(_f1(tp.sum(1), fp.sum(1), fn.sum(1)).mean()),
        "f1_pooled": float(_f1(tp.sum(), fp.sum(), fn.sum())),
        "f1_macro": float(_f1(tp.sum(0), fp.sum(0), fn.sum(0)).mean()),
    }


def _edge_codes(contract: Contract) -> np.ndarray:
    k = contract.n_actions
    return np.array([[_RANK[classify_edge(contract, i, j)] for j in range(k)] for i in range(k)], dtype=np.int8)


def incoherence_rates(actions, t: Taxonomy, contract: Contract) -> dict[str, float]:
    """Edge-weighted and neighbourhood defect rates of an (N, n) action matrix.

    Neighbourhoods are parents with at least one child; each takes the first
    class present in taxonomic, delegation, deductive order.
    """
    a = np.atleast_2d(np.asarray(actions, dtype=np.int64))
    if a.shape[1] != t.n:
        raise ShapeMismatch(f"expected {t.n} columns, got {a.shape[1]}")
    if ((a < 0) | (a >= contract.n_actions)).any():
        raise ValueError("action outside the contract's action set")
    out = dict.fromkeys(RATES, 0.0)
    edges = t.edges
    if not edges or a.shape[0] == 0:
        return out
    codes = _edge_codes(contract)
    p = np.array([e[0] for e in edges])
    c = np.array([e[1] for e in edges])
    edge = codes[a[:, p], a[:, c]]  # (N, |E|)
    hood = np.stack([edge[:, p == q].max(axis=1) for q in t.internal_nodes], axis=1)
    for name, mat in (("edge", edge), ("hood", hood)):
        for cls, short in _SHORT.items():
            out[f"{name}_{short}"] = float((mat == _RANK[cls]).mean())
        out[f"{name}_any"] = float((mat > 0).mean())
    return out


@dataclass(frozen=True)
class ClosureStats:
    activation_rate: float
    mean_added: float
    max_added: int
    realised_raw_ratio: float


@dataclass
class SweepResult:
    method: Method
    n_total: int
    thresholds: np.ndarray
    curves: dict[str, np.ndarray]
    raw_deferred: np.ndarray
    realised_deferred: np.ndarray
    closure: ClosureStats
    actions: dict[int, np.ndarray] = field(default_factory=dict, repr=False)

    @property
    def budgets(self) -> np.ndarray:
        return self.thresholds / self.n_total

    def auc(self, metric: str) -> float:
        y = self.curves[metric]
        if len(y) == 1:
            return float(y[0])
        return float(np.trapezoid(y, self.budgets))

    @property
    def aucs(self) -> dict[str, float]:
        return {m: self.auc(m) for m in self.curves}


def run_sweep(eval_set: EvaluationSet, intervals: int = 101, keep_actions: bool = False) -> SweepResult:
    t, c = eval_set.taxonomy, eval_set.contract
    insts = eval_set.instances
    if any(inst.truth is None or inst.experts is None for inst in insts):
        raise ValueError("sweeps need truth and expert labels for every instance")
    ranking = global_ranking(eval_set)
    tables = [ranking_values(eval_set, inst) if eval_set.method in (Method.NODEWISE, Method.TBP_FAST) else None
              for inst in insts]
    truth = np.stack([np.asarray(inst.truth, dtype=np.int8) for inst in insts])
    grid = budget_grid(eval_set.n_total, intervals)
    curves = {m: np.zeros(len(grid)) for m in METRICS}
    raw_n = np.zeros(len(grid), dtype=np.int64)
    real_n = np.zeros(len(grid), dtype=np.int64)
    activations = pairs = max_added = 0
    added_total = 0
    kept = {}
    for g, threshold in enumerate(grid):
        acts = np.empty((len(insts), t.n), dtype=np.int64)
        completed = np.empty_like(truth)
        for i, raw in enumerate(_raw_sets(eval_set, ranking, int(threshold))):
            mask = _close(eval_set, raw)
            added = len(mask) - len(raw)
            if raw:
                pairs += 1
                activations += added > 0
                added_total += added
                max_added = max(max_added, added)
            a = _decode(eval_set, insts[i], tables[i], mask)
            acts[i] = a
            completed[i] = complete_system_labels(t, a, insts[i].experts)
            raw_n[g] += len(raw)
            real_n[g] += int((a >= DEFER).sum())
        for k, v in system_metrics(completed, truth).items():
            curves[k][g] = v
        for k, v in incoherence_rates(acts, t, c).items():
            curves[k][g] = v
        if keep_actions:
            kept[int(threshold)] = acts
    raw_sum = int(raw_n.sum())
    stats = ClosureStats(
        activation_rate=activations / pairs if pairs else 0.0,
        mean_added=added_total / pairs if pairs else 0.0,
        max_added=max_added,
        realised_raw_ratio=float(real_n.sum() / raw_sum) if raw_sum else 1.0,
    )
    return SweepResult(eval_set.method, eval_set.n_total, grid, curves, raw_n, real_n, stats, kept)


def evaluation_set_from_arrays(
    t: Taxonomy,
    contract: Contract,
    method,
    primitives=None,
    truth=None,
    experts=None,
    risks=None,
    instance_ids: Sequence[str] | None = None,
) -> EvaluationSet:
    """Build an :class:`EvaluationSet` from stacked (N, ...) arrays."""
    base = next(x for x in (primitives, risks, truth) if x is not None)
    n_inst = len(base)
    if experts is not None:
        experts = np.asarray(experts)
        if experts.ndim == 2:
            experts = experts[:, None, :]
    ids = list(instance_ids) if instance_ids is not None else [f"x{i:04d}" for i in range(n_inst)]
    insts = [
        EvalInstance(
            ids[i],
            None if primitives is None else np.asarray(primitives[i]),
            None if truth is None else np.asarray(truth[i]),
            None if experts is None else experts[i],
            None if risks is None else np.asarray(risks[i]),
        )
        for i in range(n_inst)
    ]
    return EvaluationSet(t, contract, Method(method), insts)
