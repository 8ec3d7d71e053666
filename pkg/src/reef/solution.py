"""Solution lifecycle: pin dependencies, drive pipeline stages, run, validate.

A solution component's meta is the manifest: declared deps, an ordered
pipeline of stages, a run command template, and validation rules. ``init``
turns the manifest into a lockfile plus a ready workdir, ``run`` executes the
command with rendered placeholders, ``validate`` checks metrics against the
manifest's rules.
"""

import json
import math
import os
import shutil
import subprocess
import time
from dataclasses import dataclass
from decimal import Decimal
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

from .components import load_component, write_component
from .detector import DetectorRule, detect, load_envs, register_env, select_env
from .errors import (
    MalformedOutput,
    MissingEnvDependency,
    NonZeroExit,
    NoSatisfyingEnvironment,
    NotInitialized,
    ReefError,
    RenderError,
    StageFailed,
    UnknownPlaceholder,
)
from .installer import install, recipe_from_component
from .registry import Lockfile, dep_specs_from_meta
from .render import render
from .versions import VersionReq

DEFAULT_OUTPUT = "output.json"

MISSING_METRIC = "MissingMetric"


# --- validation rules -------------------------------------------------------


@dataclass(frozen=True)
class MetricRule:
    metric: str
    op: str
    ref: float
    tolerance: float = 0.0

    @classmethod
    def from_doc(cls, doc: dict) -> "MetricRule":
        return cls(
            metric=doc["metric"],
            op=doc["op"],
            ref=doc["ref"],
            tolerance=doc.get("tolerance", 0.0),
        )

    def to_doc(self) -> dict:
        doc = {"metric": self.metric, "op": self.op, "ref": self.ref}
        if self.op.startswith("within-"):
            doc["tolerance"] = self.tolerance
        return doc


@dataclass
class RuleResult:
    metric: str
    op: str
    ref: float
    tolerance: float
    value: Optional[float]
    delta: Optional[float]
    passed: bool
    note: str = ""

    def to_doc(self) -> dict:
        return {
            "metric": self.metric,
            "op": self.op,
            "ref": self.ref,
            "tolerance": self.tolerance,
            "value": self.value,
            "delta": self.delta,
            "passed": self.passed,
            "note": self.note,
        }


@dataclass
class ValidationReport:
    results: List[RuleResult]

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results)

    def to_doc(self) -> dict:
        return {"passed": self.passed, "rules": [r.to_doc() for r in self.results]}


def check_rule(rule: MetricRule, value: Optional[float]) -> RuleResult:
    if value is None or not isinstance(value, (int, float)) or isinstance(value, bool):
        return RuleResult(
            metric=rule.metric, op=rule.op, ref=rule.ref, tolerance=rule.tolerance,
            value=None, delta=None, passed=False, note=MISSING_METRIC,
        )
    if not math.isfinite(value):
        return RuleResult(
            metric=rule.metric, op=rule.op, ref=rule.ref, tolerance=rule.tolerance,
            value=value, delta=None, passed=False, note="NonFiniteValue",
        )
    # rules and metrics arrive as decimal literals in JSON; comparing in
    # decimal space keeps boundaries like |1.05 - 1.00| <= 0.05 inclusive
    dec_value, dec_ref = _dec(value), _dec(rule.ref)
    dec_delta = dec_value - dec_ref
    if rule.op == "within-abs":
        passed = abs(dec_delta) <= _dec(rule.tolerance)
    elif rule.op == "within-rel":
        passed = abs(dec_delta) <= _dec(rule.tolerance) * abs(dec_ref)
    elif rule.op == "at-least":
        passed = dec_value >= dec_ref
    elif rule.op == "at-most":
        passed = dec_value <= dec_ref
    else:
        raise ReefError(f"unknown comparator {rule.op!r}")
    return RuleResult(
        metric=rule.metric, op=rule.op, ref=rule.ref, tolerance=rule.tolerance,
        value=value, delta=float(dec_delta), passed=passed,
    )


def _dec(x) -> Decimal:
    return Decimal(str(x))


def validate_metrics(metrics: Dict[str, object], rules: Sequence[MetricRule]) -> ValidationReport:
    """Failures are report content, never exceptions; inclusive boundaries."""
    return ValidationReport([check_rule(rule, metrics.get(rule.metric)) for rule in rules])


def rules_from_manifest(manifest: dict) -> List[MetricRule]:
    return [MetricRule.from_doc(doc) for doc in manifest.get("validation", [])]


# --- workspace --------------------------------------------------------------


class Workspace:
    """Filesystem layout of one initialized solution."""

    def __init__(self, workdir: Path):
        self.workdir = Path(workdir)

    @property
    def lock_path(self) -> Path:
        return self.workdir / "lock.json"

    @property
    def trace_path(self) -> Path:
        return self.workdir / "trace.json"

    @property
    def envmap_path(self) -> Path:
        return self.workdir / "envmap.json"

    @property
    def logs_dir(self) -> Path:
        return self.workdir / "logs"

    @property
    def deps_dir(self) -> Path:
        return self.workdir / "deps"

    @property
    def output_path(self) -> Path:
        return self.workdir / DEFAULT_OUTPUT

    def lockfile(self) -> Lockfile:
        if not self.lock_path.is_file():
            raise NotInitialized(f"no lockfile in {self.workdir}; run init first")
        return Lockfile.from_bytes(self.lock_path.read_bytes())

    def trace(self) -> List[dict]:
        if not self.trace_path.is_file():
            raise NotInitialized(f"no stage trace in {self.workdir}; run init first")
        return json.loads(self.trace_path.read_text())

    def envmap(self) -> dict:
        if not self.envmap_path.is_file():
            raise NotInitialized(f"no envmap in {self.workdir}; run init first")
        return json.loads(self.envmap_path.read_text())

    def solution(self):
        return load_component(self.workdir)


# --- init -------------------------------------------------------------------


def init_solution(
    solution,
    registry,
    workdir: Path,
    prefix: Path,
    env_db: Path,
    platform: str,
    search_dirs: Optional[Sequence[str]] = None,
) -> Tuple[Lockfile, List[dict]]:
    """Resolve, pull, and execute the pipeline; returns (lockfile, trace).

    Reproducible by construction: the lockfile depends only on the manifest,
    the index contents, and the platform.
    """
    manifest = solution.meta
    ws = Workspace(workdir)
    ws.workdir.mkdir(parents=True, exist_ok=True)
    ws.logs_dir.mkdir(exist_ok=True)
    _materialize_solution(solution, ws)

    specs = dep_specs_from_meta(manifest)
    pins = registry.closure(specs, platform)
    lockfile = Lockfile(
        solution=(solution.id, str(solution.version)),
        pins=[(id_, str(version), digest) for id_, version, digest in pins],
        platform=platform,
        index_digest=registry.index_digest(),
    )

    pulled = {}
    for id_, version, _digest in pins:
        dest = ws.deps_dir / f"{id_.replace('/', '-')}-{version}"
        if dest.exists():
            shutil.rmtree(dest)
        pulled[id_] = registry.pull(id_, str(version), dest)

    trace = _run_stages(manifest, pulled, ws, prefix, env_db, platform, search_dirs)

    ws.lock_path.write_bytes(lockfile.to_bytes())
    ws.trace_path.write_text(json.dumps(trace, indent=2, sort_keys=True) + "\n")
    return lockfile, trace


def _materialize_solution(solution, ws: Workspace) -> None:
    if Path(solution.root).resolve() == ws.workdir.resolve():
        return
    write_component(
        ws.workdir,
        solution.to_doc(),
        {
            rel: (Path(solution.root) / rel).read_bytes()
            for rel in solution.file_paths
        },
    )


def _run_stages(manifest, pulled, ws, prefix, env_db, platform, search_dirs) -> List[dict]:
    env_accum: Dict[str, str] = {}
    dep_roots: Dict[str, str] = {}
    trace: List[dict] = []

    for index, stage in enumerate(manifest["pipeline"]):
        kind = stage["kind"]
        target = stage.get("target")
        params = dict(stage.get("params", {}))
        log_lines = [f"stage {index}: {kind}" + (f" target={target}" if target else "")]
        try:
            if kind == "prepare-env":
                detail = _stage_prepare(ws, log_lines)
            elif kind == "detect-software":
                detail = _stage_detect(
                    pulled[target], params, pulled, prefix, env_db,
                    platform, search_dirs, env_accum, dep_roots, log_lines,
                )
            else:
                detail = _stage_install(
                    pulled[target], params, prefix, env_db, platform,
                    env_accum, dep_roots, log_lines,
                )
        except ReefError as exc:
            log_lines.append(f"FAILED: {exc}")
            _write_stage_log(ws, index, log_lines)
            raise StageFailed(index, kind, exc) from exc
        log_lines.append(f"ok: {detail}")
        _write_stage_log(ws, index, log_lines)
        trace.append({"index": index, "kind": kind, "target": target, "detail": detail})

    ws.envmap_path.write_text(
        json.dumps({"env": env_accum, "deps": dep_roots}, indent=2, sort_keys=True) + "\n"
    )
    return trace


def _write_stage_log(ws, index, lines):
    (ws.logs_dir / f"stage-{index}.log").write_text("\n".join(lines) + "\n")


def _stage_prepare(ws, log_lines) -> str:
    # scaffold only; no interpreter-level virtual environment is created
    for sub in (ws.logs_dir, ws.deps_dir):
        sub.mkdir(exist_ok=True)
    log_lines.append(f"workdir ready at {ws.workdir}")
    return "workspace scaffold ready"


def _stage_detect(
    component, params, pulled, prefix, env_db, platform, search_dirs,
    env_accum, dep_roots, log_lines,
) -> str:
    rule = DetectorRule.from_meta(component.meta)
    req = VersionReq(str(params.get("req", "*")))
    diagnostics: List[str] = []
    entries = detect(rule, search_dirs, diagnostics=diagnostics, platform=platform)
    log_lines.extend(diagnostics)
    for entry in entries:
        register_env(entry, env_db)
        log_lines.append(f"detected {entry.software} {entry.version} at {entry.location}")

    try:
        chosen = select_env(load_envs(env_db, software=rule.software), req)
    except NoSatisfyingEnvironment:
        fallback = _fallback_package(rule.software, pulled)
        if fallback is None:
            raise MissingEnvDependency(rule.software, str(req))
        log_lines.append(f"detection found nothing satisfying {req}; installing {fallback.ref}")
        install(recipe_from_component(fallback), prefix, env_db, platform)
        dep_roots[fallback.id] = str(_installed_root(prefix, fallback))
        try:
            chosen = select_env(load_envs(env_db, software=rule.software), req)
        except NoSatisfyingEnvironment:
            raise MissingEnvDependency(rule.software, str(req))

    env_accum.update(chosen.exports)
    return f"selected {chosen.software} {chosen.version} ({chosen.source})"


def _fallback_package(software: str, pulled) -> Optional[object]:
    for component in pulled.values():
        if component.name == software and component.meta.get("recipes"):
            return component
    return None


def _installed_root(prefix, component) -> Path:
    return Path(prefix) / component.namespace / component.name / str(component.version)


def _stage_install(
    component, params, prefix, env_db, platform, env_accum, dep_roots, log_lines,
) -> str:
    recipe = recipe_from_component(component)
    executed: List[dict] = []
    entry = install(recipe, prefix, env_db, platform, params=params, executed=executed)
    env_accum.update(entry.exports)
    dep_roots[component.id] = entry.location
    log_lines.append(f"{len(executed)} step(s) executed")
    return f"installed {component.ref} ({len(executed)} steps)"


# --- run --------------------------------------------------------------------


def run_solution(
    workdir: Path,
    input_values: Optional[Dict[str, object]] = None,
    monitor=None,
) -> dict:
    """Render the manifest's run command, execute it, parse its JSON output.

    ``monitor``, when given, is attached to the child: ``monitor.attach(proc)``
    right after spawn and ``monitor.detach(duration_s)`` after it exits, with
    the monotonic wall time around the child's lifetime.
    """
    ws = Workspace(workdir)
    ws.lockfile()  # proves init completed
    solution = ws.solution()
    manifest = solution.meta
    envmap = ws.envmap()

    context: Dict[str, object] = {}
    for name, value in envmap.get("env", {}).items():
        context[f"env:{name}"] = value
    for dep_id, root in envmap.get("deps", {}).items():
        context[f"dep:{dep_id}:root"] = root
    for key, value in (input_values or {}).items():
        context[f"input:{key}"] = value

    try:
        command = [render(arg, context) for arg in manifest["run"]["command"]]
    except UnknownPlaceholder as exc:
        raise RenderError(f"run command references unknown placeholder ${{{exc.key}}}") from exc

    ws.logs_dir.mkdir(exist_ok=True)
    k = _next_run_index(ws)
    out_path = ws.logs_dir / f"run-{k}.out"
    err_path = ws.logs_dir / f"run-{k}.err"

    env = dict(os.environ)
    env.update({name: str(value) for name, value in envmap.get("env", {}).items()})
    env["REEF_RUN_INDEX"] = str(k)

    start = time.monotonic()
    proc = subprocess.Popen(
        command, cwd=ws.workdir, env=env,
        stdout=subprocess.PIPE, stderr=subprocess.PIPE, text=True,
    )
    if monitor is not None:
        monitor.attach(proc)
    stdout, stderr = proc.communicate()
    duration = time.monotonic() - start
    if monitor is not None:
        monitor.detach(duration)

    out_path.write_text(stdout)
    err_path.write_text(stderr)
    if proc.returncode != 0:
        raise NonZeroExit(proc.returncode, str(err_path))

    output_file = ws.workdir / manifest["run"].get("outputs", DEFAULT_OUTPUT)
    if not output_file.is_file():
        raise MalformedOutput(f"run produced no output file at {output_file}")
    try:
        output = json.loads(output_file.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise MalformedOutput(f"run output is not valid JSON: {exc}") from exc
    if not isinstance(output, dict):
        raise MalformedOutput("run output must be a JSON object")
    return output


def _next_run_index(ws: Workspace) -> int:
    existing = [
        int(p.stem.split("-", 1)[1])
        for p in ws.logs_dir.glob("run-*.out")
        if p.stem.split("-", 1)[1].isdigit()
    ]
    return max(existing, default=-1) + 1


def validate_solution(workdir: Path) -> ValidationReport:
    """Check the most recent run's metrics against the manifest's rules."""
    ws = Workspace(workdir)
    ws.lockfile()
    solution = ws.solution()
    output_file = ws.workdir / solution.meta["run"].get("outputs", DEFAULT_OUTPUT)
    if not output_file.is_file():
        raise NotInitialized(f"no run output in {ws.workdir}; run the solution first")
    output = json.loads(output_file.read_text())
    metrics = output.get("metrics", {}) if isinstance(output, dict) else {}
    return validate_metrics(metrics, rules_from_manifest(solution.meta))
