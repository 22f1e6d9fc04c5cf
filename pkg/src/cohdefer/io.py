"""Comma-separated file formats with a header row, plus the nested JSON taxonomy.

Readers report the 1-based line number of the first bad record. Writers emit
``\\n`` line endings and shortest round-trip float text, so output is
byte-stable and parses back to identical values.
"""
from __future__ import annotations

import csv
import io as _io
import json
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .coherence import Contract, Defect, AuditReport
from .errors import CohDeferError, TaxonomyError
from .taxonomy import SENTINEL, Taxonomy, parse_taxonomy


class ParseError(CohDeferError, ValueError):
    """Malformed input file; ``line`` is 1-based when known."""

    def __init__(self, message: str, path=None, line: int | None = None):
        where = f"{path}:" if path is not None else ""
        where += f"{line}: " if line is not None else (" " if where else "")
        super().__init__(f"{where}{message}")
        self.path = path
        self.line = line


def _text(source) -> tuple[str, str | None]:
    """A ``Path`` is read from disk, a ``str`` is the content itself."""
    if isinstance(source, Path):
        try:
            return source.read_text(encoding="utf-8"), str(source)
        except (OSError, UnicodeDecodeError) as exc:
            raise ParseError(f"cannot read file ({exc})", source) from exc
    if isinstance(source, str):
        return source, None
    return source.read(), getattr(source, "name", None)


def _rows(text: str, path) -> list[tuple[int, list[str]]]:
    out = []
    reader = csv.reader(_io.StringIO(text))
    for row in reader:
        if not row or all(not x.strip() for x in row) or row[0].lstrip().startswith("#"):
            continue
        out.append((reader.line_num, [x.strip() for x in row]))
    return out


def _csv(rows: Iterable[Sequence]) -> str:
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerows(rows)
    return buf.getvalue()


def _num(x: float) -> str:
    return repr(float(x))


# --- taxonomy ---------------------------------------------------------------

def _nested_pairs(obj: Mapping, parent: str, out: list) -> None:
    for name, sub in obj.items():
        out.append((name, parent))
        if sub:
            if not isinstance(sub, Mapping):
                raise TaxonomyError(f"node {name!r}: nested value must be an object")
            _nested_pairs(sub, name, out)


def taxonomy_from_json(doc) -> Taxonomy:
    """Accept ``{"child": "parent", ...}`` or a nested ``{"root": {"child": {}}}`` object."""
    if not isinstance(doc, Mapping):
        raise TaxonomyError("taxonomy document must be a JSON object")
    if doc and all(isinstance(v, str) or (isinstance(v, list) and all(isinstance(p, str) for p in v))
                   for v in doc.values()):
        pairs = []
        for child, par in doc.items():
            pairs.extend((child, p) for p in ([par] if isinstance(par, str) else par))
        return parse_taxonomy(pairs)
    pairs: list[tuple[str, str]] = []
    _nested_pairs(doc, SENTINEL, pairs)
    return parse_taxonomy(pairs)


def read_taxonomy(source) -> Taxonomy:
    text, path = _text(source)
    if text.lstrip().startswith("{"):
        try:
            return taxonomy_from_json(json.loads(text))
        except json.JSONDecodeError as exc:
            raise ParseError(exc.msg, path, exc.lineno) from exc
    pairs = []
    for k, (line, row) in enumerate(_rows(text, path)):
        if k == 0 and [x.lower() for x in row] == ["child", "parent"]:
            continue
        if len(row) != 2 or not row[0] or not row[1]:
            raise ParseError("expected 'child,parent'", path, line)
        pairs.append((row[0], row[1]))
    try:
        return parse_taxonomy(pairs)
    except TaxonomyError as exc:
        raise ParseError(str(exc), path) from exc


def format_taxonomy(t: Taxonomy) -> str:
    return _csv([("child", "parent")] + t.pairs())


def taxonomy_to_json(t: Taxonomy) -> str:
    t.require_tree()

    def sub(v):
        return {t.names[c]: sub(c) for c in t.children[v]}

    return json.dumps({t.names[r]: sub(r) for r in t.roots}, indent=2) + "\n"


# --- per-node tables ----------------------------------------------------------

def _blocks(text: str, path, t: Taxonomy, fixed: Sequence[str], prefix: Sequence[str] = ()):
    """Parse ``instance_id,node,<cols>`` rows into per-instance (n, ...) row lists."""
    rows = _rows(text, path)
    if not rows:
        raise ParseError("empty file", path)
    line, header = rows[0]
    if header[:2] != ["instance_id", "node"] or len(header) < 3:
        raise ParseError("header must start with 'instance_id,node'", path, line)
    cols = header[2:]
    if fixed and cols != list(fixed):
        raise ParseError(f"expected columns {','.join(fixed)}", path, line)
    if prefix and not all(c.startswith(prefix) for c in cols):
        raise ParseError(f"value columns must start with {prefix!r}", path, line)
    blocks: dict[str, dict[int, tuple[int, list[str]]]] = {}
    for line, row in rows[1:]:
        if len(row) != len(header):
            raise ParseError(f"expected {len(header)} fields, got {len(row)}", path, line)
        iid, node = row[0], row[1]
        if node not in t.index:
            raise ParseError(f"unknown node {node!r}", path, line)
        block = blocks.setdefault(iid, {})
        v = t.index[node]
        if v in block:
            raise ParseError(f"duplicate row for ({iid}, {node})", path, line)
        block[v] = (line, row[2:])
    for iid, block in blocks.items():
        if len(block) != t.n:
            missing = [t.names[v] for v in range(t.n) if v not in block][:3]
            raise ParseError(f"instance {iid!r} is missing nodes {missing}", path)
    return cols, blocks


def _float_table(text, path, t, prefix) -> tuple[list[str], np.ndarray, list[str]]:
    cols, blocks = _blocks(text, path, t, (), prefix)
    ids = list(blocks)
    out = np.empty((len(ids), t.n, len(cols)))
    for i, iid in enumerate(ids):
        for v, (line, vals) in blocks[iid].items():
            try:
                out[i, v] = [float(x) for x in vals]
            except ValueError as exc:
                raise ParseError(f"non-numeric value ({exc})", path, line) from exc
            if not np.isfinite(out[i, v]).all():
                raise ParseError("non-finite value", path, line)
    return ids, out, cols


def _value_columns(stem: str, contract: Contract) -> list[str]:
    if contract.experts == 1:
        return [f"{stem}0", f"{stem}1", f"{stem}d"]
    return [f"{stem}0", f"{stem}1"] + [f"{stem}d{e}" for e in range(1, contract.experts + 1)]


def _read_probability_like(source, t, contract, stem, check_sums: bool):
    text, path = _text(source)
    ids, table, cols = _float_table(text, path, t, stem)
    want = _value_columns(stem, contract)
    if cols != want:
        raise ParseError(f"expected columns {','.join(want)} for this contract", path)
    if check_sums:
        _, blocks = _blocks(text, path, t, ())
        for i, iid in enumerate(ids):
            for v, (line, _) in blocks[iid].items():
                row = table[i, v]
                if (row < 0).any() or abs(row.sum() - 1.0) > 1e-6:
                    raise ParseError("probabilities must be nonnegative and sum to 1", path, line)
    elif (table < 0).any():
        raise ParseError("risks must be nonnegative", path)
    return ids, table


def read_primitives(source, t: Taxonomy, contract: Contract) -> tuple[list[str], np.ndarray]:
    """``instance_id,node,p0,p1,pd`` (or ``pd1..pdE``); returns ids and an (N, n, K) array."""
    return _read_probability_like(source, t, contract, "p", True)


def read_risks(source, t: Taxonomy, contract: Contract) -> tuple[list[str], np.ndarray]:
    """``instance_id,node,r0,r1,rd`` (or ``rd1..rdE``)."""
    return _read_probability_like(source, t, contract, "r", False)


def _format_table(t, contract, ids, table, stem) -> str:
    rows = [["instance_id", "node"] + _value_columns(stem, contract)]
    for iid, block in zip(ids, table):
        for v in range(t.n):
            rows.append([iid, t.names[v]] + [_num(x) for x in block[v]])
    return _csv(rows)


def format_primitives(t, contract, ids, table) -> str:
    return _format_table(t, contract, ids, table, "p")


def format_risks(t, contract, ids, table) -> str:
    return _format_table(t, contract, ids, table, "r")


def read_actions(source, t: Taxonomy, contract: Contract) -> tuple[list[str], np.ndarray]:
    text, path = _text(source)
    _, blocks = _blocks(text, path, t, ("action",))
    ids = list(blocks)
    out = np.empty((len(ids), t.n), dtype=np.int64)
    for i, iid in enumerate(ids):
        for v, (line, vals) in blocks[iid].items():
            try:
                out[i, v] = contract.parse_action(vals[0])
            except (ValueError, CohDeferError) as exc:
                raise ParseError(str(exc), path, line) from exc
    return ids, out


def format_actions(t: Taxonomy, contract: Contract, ids, actions) -> str:
    rows = [("instance_id", "node", "action")]
    for iid, a in zip(ids, actions):
        rows.extend((iid, t.names[v], contract.format_action(int(a[v]))) for v in range(t.n))
    return _csv(rows)


def read_labels(source, t: Taxonomy) -> tuple[list[str], np.ndarray]:
    """``instance_id,node,label`` with labels in {0, 1}."""
    return _read_binary(source, t, ("label",))


def read_expert_labels(source, t: Taxonomy) -> tuple[list[str], np.ndarray]:
    """``instance_id,node,m1..mE``; returns an (N, E, n) array."""
    ids, arr = _read_binary(source, t, (), "m")
    return ids, np.transpose(arr, (0, 2, 1))


def _read_binary(source, t, fixed, prefix=()):
    text, path = _text(source)
    cols, blocks = _blocks(text, path, t, fixed, prefix)
    ids = list(blocks)
    out = np.empty((len(ids), t.n, len(cols)), dtype=np.int8)
    for i, iid in enumerate(ids):
        for v, (line, vals) in blocks[iid].items():
            if any(x not in ("0", "1") for x in vals):
                raise ParseError("labels must be 0 or 1", path, line)
            out[i, v] = [int(x) for x in vals]
    return ids, (out[..., 0] if fixed else out)


def format_labels(t: Taxonomy, ids, labels) -> str:
    rows = [("instance_id", "node", "label")]
    for iid, y in zip(ids, labels):
        rows.extend((iid, t.names[v], int(y[v])) for v in range(t.n))
    return _csv(rows)


def format_expert_labels(t: Taxonomy, ids, experts) -> str:
    """``experts`` has shape (N, E, n)."""
    experts = np.asarray(experts)
    rows = [["instance_id", "node"] + [f"m{e}" for e in range(1, experts.shape[1] + 1)]]
    for iid, m in zip(ids, experts):
        rows.extend([iid, t.names[v]] + [int(x) for x in m[:, v]] for v in range(t.n))
    return _csv(rows)


def align(ids: Sequence[str], other_ids: Sequence[str], table: np.ndarray, what: str) -> np.ndarray:
    """Reorder ``table`` (indexed by ``other_ids``) to follow ``ids``."""
    pos = {iid: k for k, iid in enumerate(other_ids)}
    missing = [iid for iid in ids if iid not in pos]
    if missing:
        raise ParseError(f"{what} lacks instance {missing[0]!r}")
    return table[[pos[iid] for iid in ids]]


# --- reports ------------------------------------------------------------------

def format_audit(t: Taxonomy, ids: Sequence[str], reports: Sequence[AuditReport]) -> str:
    """Per-edge rows followed by a per-class summary for both views."""
    rows: list[Sequence] = [("instance_id", "parent", "child", "class")]
    edge_tot = dict.fromkeys(Defect, 0)
    hood_tot = dict.fromkeys(Defect, 0)
    for iid, rep in zip(ids, reports):
        for e in rep.edge_defects:
            cls = e.defect.value + (f":{e.detail}" if e.detail else "")
            rows.append((iid, t.names[e.parent], t.names[e.child], cls))
        for d in Defect:
            edge_tot[d] += rep.edge_counts[d]
            hood_tot[d] += rep.neighbourhood_counts[d]
    rows.append(())
    rows.append(("view", "class", "count"))
    for view, tot in (("edge", edge_tot), ("neighbourhood", hood_tot)):
        rows.extend((view, d.value, tot[d]) for d in Defect)
    incoherent = sum(r.any_incoherent for r in reports)
    rows.append(("instances", "incoherent", incoherent))
    rows.append(("instances", "total", len(reports)))
    return _csv(rows)


def format_sweep(result) -> str:
    """Columns: kind,threshold,budget,metric,value.

    ``point`` rows hold one metric at one threshold; ``auc`` rows integrate a
    curve over budget fraction; ``closure`` rows hold the closure diagnostics.
    """
    rows: list[Sequence] = [("kind", "threshold", "budget", "metric", "value")]
    for g, th in enumerate(result.thresholds):
        b = _num(result.budgets[g])
        rows.append(("point", int(th), b, "raw_deferred", int(result.raw_deferred[g])))
        rows.append(("point", int(th), b, "realised_deferred", int(result.realised_deferred[g])))
        for m, curve in result.curves.items():
            rows.append(("point", int(th), b, m, _num(curve[g])))
    for m, v in result.aucs.items():
        rows.append(("auc", "", "", m, _num(v)))
    cs = result.closure
    for name in ("activation_rate", "mean_added", "max_added", "realised_raw_ratio"):
        val = getattr(cs, name)
        rows.append(("closure", "", "", name, val if isinstance(val, int) else _num(val)))
    return _csv(rows)


def read_sweep(source) -> list[dict[str, str]]:
    text, _ = _text(source)
    return list(csv.DictReader(_io.StringIO(text)))


def write_text(path, text: str) -> None:
    Path(path).write_text(text, encoding="utf-8", newline="")
