"""Append-only result store, reference comparison, frontier selection, reports.

Benchmark records accumulate one canonical JSON document per line in
``results.jsonl``; existing bytes are never rewritten. Selection works over
objectives (a dotted path into the record summary plus a direction) and keeps
exactly the non-dominated records. ``emit_report`` renders the store as
``report.json`` plus a self-contained ``report.html`` that opens offline.
"""

from __future__ import annotations

import html
import json
import math
import re
import warnings
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

from .canonical import canonical_json_bytes
from .components import validate_result_doc
from .errors import (
    DuplicateRecord,
    EmptyStore,
    InvalidObjective,
    MissingMetric,
    SchemaViolation,
    StorageFailure,
)
from .harness import record_id
from .locks import locked
from .solution import MISSING_METRIC, MetricRule, check_rule

STORE_NAME = "results.jsonl"
REPORT_JSON = "report.json"
REPORT_HTML = "report.html"

# statistic substituted when a rule or objective names a distribution
# (e.g. `latency_ms`) instead of a point inside it (`latency_ms.p90`)
DEFAULT_STATISTIC = "median"

_PATH_RE = re.compile(r"^[a-z0-9_]+(\.[a-z0-9_]+)*$")


# --- objectives ---------------------------------------------------------------


@dataclass(frozen=True)
class Objective:
    """One axis of frontier selection: a summary metric and a direction."""

    path: str
    direction: str

    def __post_init__(self):
        if not _PATH_RE.match(self.path):
            raise InvalidObjective(f"bad metric path: {self.path!r}")
        if self.direction not in ("min", "max"):
            raise InvalidObjective(
                f"direction must be 'min' or 'max', got {self.direction!r}"
            )

    @classmethod
    def parse(cls, text: str) -> "Objective":
        path, sep, direction = text.rpartition(":")
        if not sep:
            raise InvalidObjective(f"expected PATH:min|max, got {text!r}")
        return cls(path, direction)

    def resolve(self, record: dict) -> Optional[float]:
        return summary_value(record, self.path)

    def __str__(self) -> str:
        return f"{self.path}:{self.direction}"


DEFAULT_OBJECTIVES = (
    Objective("latency_ms.median", "min"),
    Objective("accuracy", "max"),
)


def summary_value(
    record: dict, path: str, statistic: str = DEFAULT_STATISTIC
) -> Optional[float]:
    """Resolve a dotted metric path against a record's summary.

    A path landing on a distribution summary yields its default statistic.
    Missing keys and non-numeric or non-finite leaves resolve to None.
    """
    node = record.get("summary")
    for part in path.split("."):
        if not isinstance(node, dict) or part not in node:
            return None
        node = node[part]
    if isinstance(node, dict):
        node = node.get(statistic)
    if isinstance(node, bool) or not isinstance(node, (int, float)):
        return None
    if not math.isfinite(node):
        return None
    return node


# --- store --------------------------------------------------------------------


def _dedup_key(record: dict) -> Tuple[str, str, Optional[str]]:
    return (
        record.get("lockfile_digest", ""),
        record.get("timestamp", ""),
        record.get("submitter"),
    )


def ingest(record: dict, store: Path) -> str:
    """Append one schema-valid record; returns its content id."""
    violations = validate_result_doc(record)
    if violations:
        raise SchemaViolation(violations)
    store = Path(store)
    store.parent.mkdir(parents=True, exist_ok=True)
    key = _dedup_key(record)
    with locked(store.parent / (store.name + ".lock")):
        for existing in _iter_records(store):
            if _dedup_key(existing) == key:
                raise DuplicateRecord(
                    f"duplicate result for {key[0][:12]} at {key[1]}"
                    + (f" from {key[2]}" if key[2] else "")
                )
        with open(store, "ab") as fh:
            fh.write(canonical_json_bytes(record) + b"\n")
    return record_id(record)


def _iter_records(store: Path) -> Iterator[dict]:
    if not store.exists():
        return
    with open(store, "rb") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except ValueError as exc:
                raise StorageFailure(f"{store}: bad record on line {lineno}: {exc}")
            yield record


def load_store(store: Path) -> List[dict]:
    return list(_iter_records(Path(store)))


def query(
    store: Path, solution: Optional[str] = None, since: Optional[str] = None
) -> List[dict]:
    """Records filtered by solution ref (`ns/name` or `ns/name@version`) and
    inclusive timestamp lower bound."""
    out = []
    for record in _iter_records(Path(store)):
        if solution is not None and not _solution_matches(record, solution):
            continue
        if since is not None and record.get("timestamp", "") < since:
            continue
        out.append(record)
    return out


def _solution_matches(record: dict, solution: str) -> bool:
    sol = record.get("solution") or [None, None]
    id_, _, version = solution.partition("@")
    if sol[0] != id_:
        return False
    return not version or sol[1] == version


# --- reference comparison -------------------------------------------------------


@dataclass
class ComparisonRow:
    metric: str
    value: Optional[float]
    reference: Optional[float]
    delta: Optional[float]
    status: str

    def to_doc(self) -> dict:
        return {
            "metric": self.metric,
            "value": self.value,
            "reference": self.reference,
            "delta": self.delta,
            "status": self.status,
        }


@dataclass
class ComparisonReport:
    rows: List[ComparisonRow]

    @property
    def overall(self) -> bool:
        return all(row.status == "match" for row in self.rows)

    def to_doc(self) -> dict:
        return {"overall": self.overall, "metrics": [r.to_doc() for r in self.rows]}


def compare(
    record: dict, reference: Dict[str, float], rules: Sequence[MetricRule]
) -> ComparisonReport:
    """Check a record's summary against reference numbers, one row per rule.

    The reference mapping supplies the comparison baseline; a rule's own ref
    is the fallback when the mapping lacks its metric.
    """
    rows = []
    for rule in rules:
        ref = reference.get(rule.metric, rule.ref)
        value = summary_value(record, rule.metric)
        if isinstance(ref, bool) or not isinstance(ref, (int, float)):
            rows.append(ComparisonRow(rule.metric, value, None, None, "missing"))
            continue
        result = check_rule(replace(rule, ref=ref), value)
        if result.note == MISSING_METRIC:
            status = "missing"
        elif result.passed:
            status = "match"
        else:
            status = "mismatch"
        rows.append(ComparisonRow(rule.metric, result.value, ref, result.delta, status))
    return ComparisonReport(rows)


# --- frontier -------------------------------------------------------------------


def _dominates(a: Sequence[float], b: Sequence[float], directions: Sequence[str]) -> bool:
    """True iff a is at least as good as b everywhere and strictly better once."""
    strict = False
    for av, bv, direction in zip(a, b, directions):
        if direction == "min":
            if av > bv:
                return False
            if av < bv:
                strict = True
        else:
            if av < bv:
                return False
            if av > bv:
                strict = True
    return strict


def pareto_front(
    records: Sequence[dict],
    objectives: Sequence[Objective],
    excluded: Optional[List[Tuple[str, str]]] = None,
) -> List[dict]:
    """Non-dominated subset of records, input order preserved; ties all kept.

    Records on which an objective path does not resolve cannot be ordered;
    they are collected into `excluded` as (record id, path) pairs, or raised
    as MissingMetric when the caller did not ask to collect them.
    """
    if not objectives:
        raise InvalidObjective("at least one objective required")
    directions = [o.direction for o in objectives]

    resolved = []
    dropped = []
    for record in records:
        values = []
        for objective in objectives:
            value = objective.resolve(record)
            if value is None:
                dropped.append((record_id(record), objective.path))
                break
            values.append(value)
        else:
            resolved.append((record, values))
    if dropped:
        if excluded is None:
            raise MissingMetric(dropped)
        excluded.extend(dropped)

    # cull against the running front; members are mutually non-dominated, so
    # a candidate beaten by one member cannot unseat any other
    front: List[Tuple[dict, List[float]]] = []
    for record, values in resolved:
        beaten = False
        survivors = []
        for entry in front:
            if _dominates(entry[1], values, directions):
                beaten = True
                break
            if not _dominates(values, entry[1], directions):
                survivors.append(entry)
        if beaten:
            continue
        survivors.append((record, values))
        front = survivors
    return [record for record, _ in front]


# --- report emission --------------------------------------------------------------


def emit_report(
    store: Path,
    out_dir: Path,
    objectives: Optional[Sequence[Objective]] = None,
    solution: Optional[str] = None,
) -> Tuple[Path, Path]:
    """Write report.json and report.html for the (optionally filtered) store.

    Output is a pure function of the store contents and arguments: no
    timestamps, no externally fetched assets.
    """
    store = Path(store)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    objectives = list(objectives) if objectives else list(DEFAULT_OBJECTIVES)

    records = query(store, solution=solution)
    if not records:
        warnings.warn(
            f"no records in {store}"
            + (f" for solution {solution}" if solution else ""),
            EmptyStore,
        )

    excluded: List[Tuple[str, str]] = []
    front = pareto_front(records, objectives, excluded=excluded) if records else []
    front_ids = {record_id(r) for r in front}
    missing_by_id: Dict[str, List[str]] = {}
    for rid, path in excluded:
        missing_by_id.setdefault(rid, []).append(path)

    references: Dict[str, dict] = {}
    for record in records:
        if record.get("reference") and record["solution"][0] not in references:
            references[record["solution"][0]] = record

    rows = []
    for record in records:
        rid = record_id(record)
        entry = {
            "id": rid,
            "record": record,
            "on_frontier": rid in front_ids,
            "reference": bool(record.get("reference")),
            "objectives": {str(o): o.resolve(record) for o in objectives},
        }
        if rid in missing_by_id:
            entry["missing_metrics"] = missing_by_id[rid]
        reference = references.get(record["solution"][0])
        if reference is not None and not record.get("reference"):
            entry["comparison"] = _comparison_summary(record, reference, objectives)
        rows.append(entry)

    doc = {
        "meta": {
            "statistic": DEFAULT_STATISTIC,
            "objectives": [{"path": o.path, "direction": o.direction} for o in objectives],
            "solution": solution,
            "record_count": len(records),
        },
        "records": rows,
        "frontier": [record_id(r) for r in front],
        "excluded": [{"id": rid, "path": path} for rid, path in excluded],
    }

    json_path = out_dir / REPORT_JSON
    json_path.write_bytes(canonical_json_bytes(doc) + b"\n")
    html_path = out_dir / REPORT_HTML
    html_path.write_text(_render_html(doc, objectives), encoding="utf-8")
    return json_path, html_path


def _comparison_summary(
    record: dict, reference: dict, objectives: Sequence[Objective]
) -> Dict[str, dict]:
    out = {}
    for objective in objectives:
        value = objective.resolve(record)
        ref_value = objective.resolve(reference)
        delta = value - ref_value if value is not None and ref_value is not None else None
        out[objective.path] = {"value": value, "reference": ref_value, "delta": delta}
    return out


# --- static HTML ---------------------------------------------------------------


_STYLE = """
body { font-family: sans-serif; margin: 2em; color: #222; background: #fff; }
table { border-collapse: collapse; margin: 1em 0; }
th, td { border: 1px solid #bbb; padding: 0.35em 0.7em; text-align: left; }
th { background: #eee; }
tr.frontier { background: #fff3d6; }
.meta { color: #555; }
svg { border: 1px solid #ccc; background: #fafafa; }
"""


def _fmt(value) -> str:
    if value is None:
        return "n/a"
    if isinstance(value, float):
        return format(value, ".6g")
    return str(value)


def _render_html(doc: dict, objectives: Sequence[Objective]) -> str:
    meta = doc["meta"]
    parts = [
        "<!doctype html>",
        "<html>",
        "<head>",
        '<meta charset="utf-8">',
        "<title>reef benchmark report</title>",
        f"<style>{_STYLE}</style>",
        "</head>",
        "<body>",
        "<h1>Benchmark report</h1>",
        '<p class="meta">'
        + html.escape(
            f"records: {meta['record_count']}"
            + (f", solution: {meta['solution']}" if meta["solution"] else "")
            + f", statistic: {meta['statistic']}"
            + ", objectives: "
            + " ".join(str(o) for o in objectives)
        )
        + "</p>",
    ]
    parts.append(_render_table(doc, objectives))
    if len(objectives) >= 2:
        scatter = _render_scatter(doc, objectives[0], objectives[1])
        if scatter:
            parts.append("<h2>Frontier</h2>")
            parts.append(scatter)
    parts.append("</body>")
    parts.append("</html>")
    return "\n".join(parts) + "\n"


def _render_table(doc: dict, objectives: Sequence[Objective]) -> str:
    head = ["record", "solution", "platform"]
    head += [str(o) for o in objectives]
    head += ["frontier", "reference", "submitter", "timestamp"]
    lines = ["<table>", "<tr>" + "".join(f"<th>{html.escape(h)}</th>" for h in head) + "</tr>"]
    for entry in doc["records"]:
        record = entry["record"]
        platform = record.get("platform", {})
        cells = [
            entry["id"][:12],
            f"{record['solution'][0]}@{record['solution'][1]}",
            f"{platform.get('os', '?')}-{platform.get('arch', '?')}",
        ]
        cells += [_fmt(entry["objectives"][str(o)]) for o in objectives]
        cells += [
            "yes" if entry["on_frontier"] else "",
            "yes" if entry["reference"] else "",
            record.get("submitter") or "",
            record.get("timestamp", ""),
        ]
        klass = ' class="frontier"' if entry["on_frontier"] else ""
        lines.append(
            f"<tr{klass}>" + "".join(f"<td>{html.escape(c)}</td>" for c in cells) + "</tr>"
        )
    lines.append("</table>")
    return "\n".join(lines)


def _render_scatter(doc: dict, x_obj: Objective, y_obj: Objective) -> Optional[str]:
    points = []
    for entry in doc["records"]:
        x = entry["objectives"][str(x_obj)]
        y = entry["objectives"][str(y_obj)]
        if x is None or y is None:
            continue
        points.append((x, y, entry["on_frontier"], entry["id"][:12]))
    if not points:
        return None

    width, height = 640, 420
    left, right, top, bottom = 70, 20, 20, 50
    xs = [p[0] for p in points]
    ys = [p[1] for p in points]

    def scale(value, lo, hi, out_lo, out_hi):
        if hi == lo:
            return (out_lo + out_hi) / 2.0
        return out_lo + (value - lo) * (out_hi - out_lo) / (hi - lo)

    circles = []
    for x, y, on_front, label in points:
        cx = scale(x, min(xs), max(xs), left, width - right)
        cy = scale(y, min(ys), max(ys), height - bottom, top)
        fill = "#c62828" if on_front else "#999999"
        circles.append(
            f'<circle cx="{cx:.1f}" cy="{cy:.1f}" r="5" fill="{fill}">'
            f"<title>{html.escape(label)}</title></circle>"
        )

    axis_color = "#444444"
    labels = [
        f'<text x="{left}" y="{height - bottom + 18}" font-size="11">{html.escape(_fmt(min(xs)))}</text>',
        f'<text x="{width - right}" y="{height - bottom + 18}" font-size="11" text-anchor="end">{html.escape(_fmt(max(xs)))}</text>',
        f'<text x="{left - 6}" y="{height - bottom}" font-size="11" text-anchor="end">{html.escape(_fmt(min(ys)))}</text>',
        f'<text x="{left - 6}" y="{top + 10}" font-size="11" text-anchor="end">{html.escape(_fmt(max(ys)))}</text>',
        f'<text x="{(left + width - right) // 2}" y="{height - 12}" font-size="12" text-anchor="middle">{html.escape(str(x_obj))}</text>',
        f'<text x="16" y="{(top + height - bottom) // 2}" font-size="12" text-anchor="middle" transform="rotate(-90 16 {(top + height - bottom) // 2})">{html.escape(str(y_obj))}</text>',
    ]
    return "\n".join(
        [
            f'<svg width="{width}" height="{height}" viewBox="0 0 {width} {height}" role="img">',
            f'<line x1="{left}" y1="{height - bottom}" x2="{width - right}" y2="{height - bottom}" stroke="{axis_color}"/>',
            f'<line x1="{left}" y1="{top}" x2="{left}" y2="{height - bottom}" stroke="{axis_color}"/>',
        ]
        + labels
        + circles
        + ["</svg>"]
    )
