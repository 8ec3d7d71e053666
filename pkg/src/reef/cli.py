"""The cr command line: init, run, benchmark, validate, publish, report.

Every subcommand prints human-readable lines by default and exactly one
JSON document on stdout with --json; errors become a JSON document on
stderr in that mode. Exit codes: 0 success, 1 validation failure, 2 usage
error, 3 environment or dependency error, 4 transport error.
"""

from __future__ import annotations

import argparse
import fnmatch
import json
import sys
import tempfile
from pathlib import Path

from .components import load_component
from .config import load_config
from .demo import DEMO_SOLUTION, seed_demo
from .detector import DetectorRule, detect, register_env
from .errors import (
    DuplicateRecord,
    InvalidRef,
    NotInitialized,
    ReefError,
    UnknownComponent,
)
from .harness import BenchmarkConfig, benchmark, record_id, write_result
from .registry import resolve as resolve_version
from .results import Objective, emit_report, ingest
from .service import make_server, open_registry, submit_result
from .solution import Workspace, init_solution, run_solution, validate_solution
from .versions import Version, VersionReq


def resolve_ref(registry, text: str):
    """ns/name[@version], @latest default; a bare token (no slash) names the
    unique component whose flattened ns-name equals it."""
    id_part, _, version_part = text.partition("@")
    if not id_part:
        raise InvalidRef(f"empty component id in ref {text!r}")
    # Reject malformed versions before touching the index so grammar
    # errors keep their usage exit code.
    version = None
    if version_part not in ("", "latest"):
        version = Version.parse(version_part)
    index = registry.index()
    if "/" not in id_part:
        matches = sorted(cid for cid in index.entries if cid.replace("/", "-") == id_part)
        if not matches:
            raise UnknownComponent(id_part)
        if len(matches) > 1:
            raise InvalidRef(f"ambiguous ref {text!r}: matches " + ", ".join(matches))
        id_part = matches[0]
    if version is None:
        version = resolve_version(index, id_part, VersionReq("*"))
    return id_part, version


def _workdir_for(cfg, ref: str) -> Path:
    return cfg.workspace(ref.partition("@")[0])


# --- subcommands ------------------------------------------------------------


def cmd_init(args, cfg):
    registry = open_registry(cfg.registry, token=cfg.token)
    id_, version = resolve_ref(registry, args.ref)
    workdir = _workdir_for(cfg, id_)
    solution = registry.pull(id_, str(version), workdir)
    lockfile, trace = init_solution(
        solution, registry, workdir, cfg.prefix, cfg.env_db, cfg.platform
    )
    ws = Workspace(workdir)
    doc = {
        "solution": f"{id_}@{version}",
        "workdir": str(workdir),
        "lockfile": str(ws.lock_path),
        "lockfile_digest": lockfile.digest(),
        "pins": [list(pin) for pin in lockfile.pins],
        "trace": [t["kind"] for t in trace],
    }
    lines = [f"initialized {id_}@{version}"]
    lines += [f"  stage {t['index']}: {t['kind']}: {t['detail']}" for t in trace]
    lines += [f"pinned {len(lockfile.pins)} component(s)", f"lockfile: {ws.lock_path}"]
    return 0, doc, lines


def _workspace(cfg, ref: str) -> Workspace:
    ws = Workspace(_workdir_for(cfg, ref))
    if not ws.lock_path.is_file():
        raise NotInitialized(f"no workspace for {ref}; run `cr init {ref}` first")
    return ws


def cmd_run(args, cfg):
    ws = _workspace(cfg, args.ref)
    workdir = ws.workdir
    manifest = ws.solution().meta
    inputs = dict(manifest.get("inputs", {}))
    if args.input:
        inputs.update(json.loads(Path(args.input).read_text()))
    output = run_solution(workdir, inputs)
    out_path = workdir / manifest["run"].get("outputs", "output.json")
    doc = {"output": str(out_path), "result": output}
    return 0, doc, [f"run complete: {out_path}"]


def cmd_benchmark(args, cfg):
    ws = _workspace(cfg, args.ref)
    workdir = ws.workdir
    manifest = ws.solution().meta
    config = BenchmarkConfig(
        repetitions=args.repetitions,
        warmup=args.warmup,
        input_values=dict(manifest.get("inputs", {})),
        submitter=args.submitter,
    )
    record = benchmark(workdir, config)
    path = write_result(record, cfg.results_dir)
    stored = True
    try:
        ingest(record, cfg.store)
    except DuplicateRecord:
        stored = False
    doc = {
        "result": str(path),
        "id": record_id(record),
        "summary": record["summary"],
        "stored": stored,
    }
    lines = [
        f"benchmark complete: {path}",
        f"  median latency: {record['summary']['latency_ms']['median']:.3f} ms",
        f"  throughput: {record['summary']['throughput']:.3f} items/s",
    ]
    if args.submit:
        doc["submitted_to"] = args.submit
        submit_result(record, args.submit, token=cfg.token)
        lines.append(f"submitted to {args.submit}")
    return 0, doc, lines


def cmd_validate(args, cfg):
    workdir = _workdir_for(cfg, args.ref)
    report = validate_solution(workdir)
    lines = []
    for result in report.results:
        status = "PASS" if result.passed else "FAIL"
        detail = f"value={result.value}" + (
            f" delta={result.delta}" if result.delta is not None else ""
        )
        if result.note:
            detail += f" ({result.note})"
        lines.append(f"{status} {result.metric} {result.op} {result.ref}: {detail}")
    lines.append("validation passed" if report.passed else "validation FAILED")
    return (0 if report.passed else 1), report.to_doc(), lines


def cmd_publish(args, cfg):
    component = load_component(Path(args.directory))
    receipt = open_registry(cfg.registry, token=cfg.token).publish(component)
    line = f"published {receipt['id']}@{receipt['version']} ({receipt['digest'][:12]})"
    return 0, receipt, [line]


def cmd_pull(args, cfg):
    registry = open_registry(cfg.registry, token=cfg.token)
    id_, version = resolve_ref(registry, args.ref)
    dest = Path(args.dest) if args.dest else Path.cwd() / f"{id_.replace('/', '-')}-{version}"
    component = registry.pull(id_, str(version), dest)
    doc = {
        "id": id_,
        "version": str(version),
        "digest": component.digest,
        "dest": str(dest),
    }
    return 0, doc, [f"pulled {id_}@{version} into {dest}"]


def cmd_search(args, cfg):
    index = open_registry(cfg.registry, token=cfg.token).index()
    pattern = args.pattern
    ids = sorted(index.entries)
    if any(ch in pattern for ch in "*?["):
        hits = [i for i in ids if fnmatch.fnmatch(i, pattern)]
    else:
        hits = [i for i in ids if pattern in i]
    matches = [
        {
            "id": id_,
            "kind": index.entries[id_][-1].kind,
            "versions": [str(v) for v in index.versions(id_)],
        }
        for id_ in hits
    ]
    doc = {"pattern": pattern, "matches": matches}
    lines = [f"{m['id']} ({m['kind']}): {' '.join(m['versions'])}" for m in matches]
    return 0, doc, lines or ["no matches"]


def cmd_detect(args, cfg):
    registry = open_registry(cfg.registry, token=cfg.token)
    id_, version = resolve_ref(registry, args.ref)
    with tempfile.TemporaryDirectory(prefix="reef-detect-") as tmp:
        component = registry.pull(id_, str(version), tmp)
        rule = DetectorRule.from_meta(component.meta)
    entries = detect(rule, search_dirs=args.dirs)
    for entry in entries:
        register_env(entry, cfg.env_db)
    doc = {"software": rule.software, "entries": [e.to_doc() for e in entries]}
    lines = [
        f"{e.software} {e.version} at {e.location}" for e in entries
    ] or [f"no {rule.software} found"]
    return 0, doc, lines


def cmd_report(args, cfg):
    objectives = [Objective.parse(text) for text in args.objective] or None
    out_dir = Path(args.out) if args.out else cfg.report_dir
    json_path, html_path = emit_report(
        cfg.store, out_dir, objectives, solution=args.solution
    )
    report = json.loads(json_path.read_text())
    doc = {
        "report_json": str(json_path),
        "report_html": str(html_path),
        "records": report["meta"]["record_count"],
        "frontier": report["frontier"],
    }
    lines = [
        f"report written: {html_path}",
        f"  records: {report['meta']['record_count']},"
        f" on frontier: {len(report['frontier'])}",
    ]
    return 0, doc, lines


def cmd_demo_seed(args, cfg):
    registry = open_registry(cfg.registry, token=cfg.token)
    receipts = seed_demo(registry, cfg.assets_dir)
    doc = {"components": receipts, "solution": DEMO_SOLUTION}
    lines = [f"{r['status']}: {r['ref']}" for r in receipts]
    lines.append(f"ready: cr init {DEMO_SOLUTION}")
    return 0, doc, lines


def cmd_serve(args, cfg):
    if cfg.registry.startswith(("http://", "https://")):
        raise InvalidRef("serve needs a local registry path, not a URL")
    server = make_server(
        cfg.registry, cfg.store, host=args.host, port=args.port,
        token=args.token if args.token is not None else cfg.token,
    )
    print(f"serving registry {cfg.registry} on {server.url}", file=sys.stderr, flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    return 0, {"url": server.url}, ["server stopped"]


# --- wiring -----------------------------------------------------------------


def _common(sp):
    sp.add_argument("--json", action="store_true", default=argparse.SUPPRESS,
                    help="emit one JSON document on stdout")
    sp.add_argument("--config", default=argparse.SUPPRESS, help="path to reef.toml")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cr",
        description="Portable benchmarking workflows over versioned components.",
    )
    parser.add_argument("--config", help="path to reef.toml (default: ./reef.toml)")
    parser.add_argument("--json", action="store_true",
                        help="emit one JSON document on stdout")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    p = sub.add_parser("init", help="resolve a solution and execute its pipeline")
    p.add_argument("ref", help="solution reference ns/name[@version]")
    _common(p)
    p.set_defaults(handler=cmd_init)

    p = sub.add_parser("run", help="execute an initialized solution once")
    p.add_argument("ref")
    p.add_argument("--input", help="JSON file with input values")
    _common(p)
    p.set_defaults(handler=cmd_run)

    p = sub.add_parser("benchmark", help="measure repeated runs of a solution")
    p.add_argument("ref")
    p.add_argument("--repetitions", type=int, default=10)
    p.add_argument("--warmup", type=int, default=1)
    p.add_argument("--submit", help="results service URL to submit the record to")
    p.add_argument("--submitter", help="submitter name stored in the record")
    _common(p)
    p.set_defaults(handler=cmd_benchmark)

    p = sub.add_parser("validate", help="check the last run against the manifest rules")
    p.add_argument("ref")
    _common(p)
    p.set_defaults(handler=cmd_validate)

    p = sub.add_parser("publish", help="publish a component directory")
    p.add_argument("directory")
    _common(p)
    p.set_defaults(handler=cmd_publish)

    p = sub.add_parser("pull", help="fetch a component into a directory")
    p.add_argument("ref")
    p.add_argument("--dest")
    _common(p)
    p.set_defaults(handler=cmd_pull)

    p = sub.add_parser("search", help="list components matching a pattern")
    p.add_argument("pattern")
    _common(p)
    p.set_defaults(handler=cmd_search)

    p = sub.add_parser("detect", help="probe the host for a detector's software")
    p.add_argument("ref", help="detector component reference")
    p.add_argument("--dir", dest="dirs", action="append",
                   help="extra search directory (repeatable)")
    _common(p)
    p.set_defaults(handler=cmd_detect)

    p = sub.add_parser("report", help="emit report.json and report.html from the store")
    p.add_argument("--solution", help="only records for this solution id")
    p.add_argument("--objective", action="append", default=[],
                   metavar="PATH:min|max", help="frontier objective (repeatable)")
    p.add_argument("--out", help="output directory")
    _common(p)
    p.set_defaults(handler=cmd_report)

    p = sub.add_parser("demo-seed", help="publish the bundled demo components")
    _common(p)
    p.set_defaults(handler=cmd_demo_seed)

    p = sub.add_parser("serve", help="serve the registry and results store over HTTP")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8787)
    p.add_argument("--token", help="bearer token required for mutations")
    _common(p)
    p.set_defaults(handler=cmd_serve)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if not hasattr(args, "handler"):
        parser.print_help()
        return 2
    try:
        cfg = load_config(args.config)
        code, doc, lines = args.handler(args, cfg)
    except ReefError as exc:
        if args.json:
            print(
                json.dumps({"error": type(exc).__name__, "message": str(exc)}),
                file=sys.stderr,
            )
        else:
            print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    if args.json:
        print(json.dumps(doc, indent=2, sort_keys=True))
    else:
        for line in lines:
            print(line)
    return code


if __name__ == "__main__":
    sys.exit(main())
