"""Command-line entry point: audit, decode, sweep, gradcheck and scenario dumps.

Exit status: 0 success, 2 a coherence or gradient check failed, 1 usage or
input error.
"""
from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import io as fio
from .coherence import DEFER, Contract, audit
from .decode import (
    bayes_coherent_decode,
    nodewise_risk_argmin,
    project_map,
    tbp_map_decode,
)
from .errors import CohDeferError
from .evaluation import Method, decode_at, evaluation_set_from_arrays, run_sweep
from .oracle import finite_difference
from .rpo import SupervisedInstance, rpo_objective, stage1_objective
from .synth import named_scenarios, random_tree, sample_expert_labels, sample_labels
from .tbp import check_primitives, joint_probability, propagate

EXIT_OK, EXIT_ERROR, EXIT_FAILED = 0, 1, 2

SWEEP_HELP = """\
sweep table columns (fixed order): kind,threshold,budget,metric,value
  kind=point    one metric at one integer threshold; budget = threshold / N_total
  kind=auc      trapezoid area of that metric's curve over budget fraction
  kind=closure  closure diagnostics (activation_rate, mean_added, max_added,
                realised_raw_ratio)
metrics: raw_deferred, realised_deferred, bal_acc, f1_instance, f1_pooled,
  f1_macro, edge_{tax,ded,del,any}, hood_{tax,ded,del,any}
"""


class UsageError(Exception):
    pass


def _contract(args) -> Contract:
    if args.contract == "me":
        return Contract.multi(args.experts, same_expert=args.same_expert)
    if args.experts != 1:
        raise UsageError(f"--contract {args.contract} takes exactly one expert; use --contract me")
    return Contract.ssh() if args.contract == "ssh" else Contract.se()


def _emit(text: str, path) -> None:
    if path is None or str(path) == "-":
        sys.stdout.write(text)
    else:
        fio.write_text(path, text)


def _add_contract(p: argparse.ArgumentParser) -> None:
    p.add_argument("--contract", choices=("se", "ssh", "me"), default="se",
                   help="handoff contract: selective exclusion, strong subtree handoff, multi-expert (default: se)")
    p.add_argument("--experts", type=int, default=1, help="number of experts; >1 needs --contract me (default: 1)")
    p.add_argument("--same-expert", action="store_true",
                   help="with --contract me, children of a deferred node may only defer to the same expert (default: off)")


def _add_tables(p: argparse.ArgumentParser) -> None:
    p.add_argument("--taxonomy", type=Path, required=True, help="child,parent CSV or JSON taxonomy (required)")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--primitives", type=Path, help="instance_id,node,p0,p1,pd... probability table")
    src.add_argument("--risks", type=Path, help="instance_id,node,r0,r1,rd... risk table (bayes, nodewise)")
    p.add_argument("--method", choices=[m.value for m in Method], required=True, help="decoder (required)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cohdefer", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("audit", help="classify every edge and neighbourhood of an action file")
    p.add_argument("--taxonomy", type=Path, required=True, help="child,parent CSV or JSON taxonomy (required)")
    p.add_argument("--actions", type=Path, required=True, help="instance_id,node,action file (required)")
    p.add_argument("--output", type=Path, default=None, help="report path (default: stdout)")
    _add_contract(p)

    p = sub.add_parser("decode", help="decode primitive or risk tables into action files")
    _add_tables(p)
    p.add_argument("--budget", type=float, default=None,
                   help="global defer fraction in [0, 1]; unset means unconstrained decoding (default: unset)")
    p.add_argument("--output", type=Path, default=None, help="actions path (default: stdout)")
    p.add_argument("--summary", type=Path, default=None,
                   help="JSON sidecar with scores and closure stats (default: <output>.summary.json if --output)")
    _add_contract(p)

    p = sub.add_parser("sweep", help="budget sweep with expert completion",
                       epilog=SWEEP_HELP, formatter_class=argparse.RawDescriptionHelpFormatter)
    _add_tables(p)
    p.add_argument("--truth", type=Path, required=True, help="instance_id,node,label file (required)")
    p.add_argument("--expert-labels", type=Path, required=True, help="instance_id,node,m1..mE file (required)")
    p.add_argument("--intervals", type=int, default=101, help="grid intervals; thresholds <= intervals + 1 (default: 101)")
    p.add_argument("--output", type=Path, default=None, help="sweep table path (default: stdout)")
    _add_contract(p)

    p = sub.add_parser("gradcheck", help="compare analytic and finite-difference gradients")
    p.add_argument("--seed", type=int, default=0, help="random seed (default: 0)")
    p.add_argument("--size", type=int, default=6, help="tree size (default: 6)")
    p.add_argument("--instances", type=int, default=4, help="supervised instances per objective (default: 4)")
    p.add_argument("--step", type=float, default=1e-5, help="central difference step (default: 1e-5)")
    p.add_argument("--tol", type=float, default=1e-5, help="pass threshold on max relative error (default: 1e-5)")
    _add_contract(p)

    p = sub.add_parser("scenario", help="write a named two-node fixture as CLI input files")
    p.add_argument("name", choices=sorted(named_scenarios()), help="fixture name")
    p.add_argument("--outdir", type=Path, required=True, help="directory for taxonomy.csv, primitives.csv, risks.csv")
    return parser


def cmd_audit(args) -> int:
    contract = _contract(args)
    t = fio.read_taxonomy(args.taxonomy)
    ids, actions = fio.read_actions(args.actions, t, contract)
    reports = [audit(t, contract, a) for a in actions]
    _emit(fio.format_audit(t, ids, reports), args.output)
    return EXIT_FAILED if any(r.any_incoherent for r in reports) else EXIT_OK


def _finite(x: float):
    return x if math.isfinite(x) else None


def _score(t, contract, method: Method, a, eta, rho) -> float | None:
    if rho is not None:
        return math.fsum(rho[v, a[v]] for v in range(t.n))
    if method in (Method.TBP_FAST, Method.TBP_EXACT):
        p = joint_probability(t, contract, eta, a)
        return _finite(math.log(p)) if p > 0 else None
    return _finite(math.fsum(math.log(eta[v, a[v]]) for v in range(t.n)))


def _unconstrained(t, contract, method: Method, eta, rho):
    if rho is not None:
        if method is Method.BAYES:
            return bayes_coherent_decode(t, contract, rho)[0]
        return nodewise_risk_argmin(rho)
    if method is Method.NODEWISE:
        return eta.argmax(axis=1)
    if method is Method.PROJECTION:
        return project_map(t, contract, eta)[0]
    if method is Method.TBP_EXACT:
        return tbp_map_decode(t, contract, eta)[0]
    return propagate(t, contract, eta).argmax(axis=1)


def _load_tables(args, t, contract):
    method = Method(args.method)
    if args.risks is not None:
        if method not in (Method.BAYES, Method.NODEWISE):
            raise UsageError(f"method {method.value} needs --primitives")
        ids, table = fio.read_risks(args.risks, t, contract)
        return method, ids, None, table
    if method is Method.BAYES:
        raise UsageError("method bayes needs --risks")
    ids, table = fio.read_primitives(args.primitives, t, contract)
    return method, ids, check_primitives(table, contract.n_actions, t.n), None


def cmd_decode(args) -> int:
    contract = _contract(args)
    t = fio.read_taxonomy(args.taxonomy)
    t.require_tree()
    method, ids, eta, rho = _load_tables(args, t, contract)
    n_total = len(ids) * t.n
    summary = {"method": method.value, "contract": args.contract, "experts": contract.experts,
               "budget": args.budget, "instances": []}
    raws = masks = None
    if args.budget is None:
        actions = np.stack([_unconstrained(t, contract, method, eta[i] if eta is not None else None,
                                           rho[i] if rho is not None else None) for i in range(len(ids))])
    else:
        if not 0.0 <= args.budget <= 1.0:
            raise UsageError("--budget must lie in [0, 1]")
        if rho is not None and method is Method.NODEWISE:
            raise UsageError("budgeted nodewise decoding needs --primitives")
        threshold = int(round(args.budget * n_total))
        es = evaluation_set_from_arrays(t, contract, method, primitives=eta, risks=rho, instance_ids=ids)
        actions, raws, masks = decode_at(es, threshold)
        summary["threshold"] = threshold
    for i, iid in enumerate(ids):
        a = actions[i]
        row = {
            "instance_id": iid,
            "score": _score(t, contract, method, a, eta[i] if eta is not None else None,
                            rho[i] if rho is not None else None),
            "deferred": int((a >= DEFER).sum()),
            "coherent": not audit(t, contract, a).any_incoherent,
        }
        if raws is not None:
            row["raw_deferred"] = len(raws[i])
            row["closure_added"] = len(masks[i]) - len(raws[i])
        summary["instances"].append(row)
    summary["score_kind"] = "risk" if rho is not None else "log_probability"
    _emit(fio.format_actions(t, contract, ids, actions), args.output)
    side = args.summary or (Path(str(args.output) + ".summary.json") if args.output else None)
    if side is not None:
        fio.write_text(side, json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return EXIT_OK


def cmd_sweep(args) -> int:
    contract = _contract(args)
    t = fio.read_taxonomy(args.taxonomy)
    t.require_tree()
    method, ids, eta, rho = _load_tables(args, t, contract)
    if args.intervals < 1:
        raise UsageError("--intervals must be >= 1")
    tid, truth = fio.read_labels(args.truth, t)
    eid, experts = fio.read_expert_labels(args.expert_labels, t)
    truth = fio.align(ids, tid, truth, "truth file")
    experts = fio.align(ids, eid, experts, "expert label file")
    if experts.shape[1] < contract.experts:
        raise UsageError(f"expert label file has {experts.shape[1]} experts, contract needs {contract.experts}")
    es = evaluation_set_from_arrays(t, contract, method, primitives=eta, truth=truth, experts=experts,
                                    risks=rho, instance_ids=ids)
    _emit(fio.format_sweep(run_sweep(es, args.intervals)), args.output)
    return EXIT_OK


def relative_error(analytic, numeric, floor: float = 1e-8) -> float:
    """Max of ``|a - f| / max(|a|, |f|, floor)`` over coordinates."""
    a = np.asarray(analytic, dtype=np.float64)
    f = np.asarray(numeric, dtype=np.float64)
    return float((np.abs(a - f) / np.maximum(np.maximum(np.abs(a), np.abs(f)), floor)).max())


def gradcheck(seed: int, size: int, contract: Contract, instances: int = 4, step: float = 1e-5) -> dict[str, float]:
    """Max relative gradient error of both objectives on one random instance."""
    t = random_tree(size, 3, seed=seed)
    rng = np.random.default_rng(seed)
    theta = rng.standard_normal((t.n, contract.n_actions))
    y = sample_labels(t, 0.7, 0.6, seed=seed + 1, size=instances)
    m = np.stack([sample_expert_labels(t, y, 0.7, seed=seed + 2 + e) for e in range(contract.experts)], axis=1)
    s = np.clip(y * 0.8 + 0.1 * rng.random(y.shape), 0.0, 1.0)
    batch = [SupervisedInstance(y[i], m[i], s[i] if i % 2 else None) for i in range(instances)]
    out = {}
    for name, fn in (("stage1", lambda th: stage1_objective(th, batch)),
                     ("rpo", lambda th: rpo_objective(th, t, contract, batch))):
        g = fn(theta)[1]
        fd = finite_difference(lambda th: fn(th)[0], theta, step)
        out[name] = relative_error(g, fd)
    return out


def cmd_gradcheck(args) -> int:
    contract = _contract(args)
    if args.size < 1:
        raise UsageError("--size must be >= 1")
    errs = gradcheck(args.seed, args.size, contract, args.instances, args.step)
    for name, err in errs.items():
        print(f"{name}: max relative error {err:.3e}")
    if args.size == 1:
        print("single node: both objectives coincide")
    ok = max(errs.values()) < args.tol
    print("PASS" if ok else "FAIL")
    return EXIT_OK if ok else EXIT_FAILED


def cmd_scenario(args) -> int:
    sc = named_scenarios()[args.name]
    contract = Contract.se()
    args.outdir.mkdir(parents=True, exist_ok=True)
    fio.write_text(args.outdir / "taxonomy.csv", fio.format_taxonomy(sc.taxonomy))
    fio.write_text(args.outdir / "primitives.csv",
                   fio.format_primitives(sc.taxonomy, contract, [sc.name], sc.primitives()[None]))
    fio.write_text(args.outdir / "risks.csv", fio.format_risks(sc.taxonomy, contract, [sc.name], sc.risks()[None]))
    return EXIT_OK


COMMANDS = {"audit": cmd_audit, "decode": cmd_decode, "sweep": cmd_sweep,
            "gradcheck": cmd_gradcheck, "scenario": cmd_scenario}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_ERROR
    try:
        return COMMANDS[args.command](args)
    except (UsageError, CohDeferError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
