"""Component model: metadata loading, schema validation, content digests.

A component is a directory holding ``meta.json`` plus the payload files it
lists. ``meta.json`` carries the envelope (``id``, ``version``, ``kind``,
``files``) and the kind-specific payload under ``meta``. The digest binds
the canonical metadata bytes and every payload file (path and contents,
length-prefixed, path-sorted), so any change to either produces a new
digest.
"""

from __future__ import annotations

import json
import re
import struct
from dataclasses import dataclass, field
from functools import lru_cache
from hashlib import sha256
from importlib import resources
from pathlib import Path, PurePosixPath
from typing import Iterable

from jsonschema import Draft202012Validator
from referencing import Registry, Resource

from .canonical import canonical_json_bytes
from .errors import DuplicatePath, MissingMeta, PathEscape, SchemaViolation, StorageFailure
from .render import placeholders
from .versions import Version, VersionReq, parse_component_id

META_NAME = "meta.json"
KINDS = ("detector", "package", "dataset", "model", "script", "solution")

# every stage kind may appear once per pipeline, except install-deps
REPEATABLE_STAGES = {"install-deps"}

_REQUIRED_MSG = re.compile(r"^'(.+)' is a required property$")


@dataclass(frozen=True)
class Violation:
    path: str
    message: str

    def __str__(self) -> str:
        return f"{self.path}: {self.message}"


@dataclass
class Component:
    id: str
    version: Version
    kind: str
    meta: dict
    digest: str
    files: list[tuple[str, int]] = field(default_factory=list)
    root: Path | None = None

    @property
    def namespace(self) -> str:
        return self.id.split("/", 1)[0]

    @property
    def name(self) -> str:
        return self.id.split("/", 1)[1]

    @property
    def ref(self) -> str:
        return f"{self.id}@{self.version}"

    @property
    def file_paths(self) -> list[str]:
        return [path for path, _ in self.files]

    def to_doc(self) -> dict:
        return {
            "id": self.id,
            "version": str(self.version),
            "kind": self.kind,
            "meta": self.meta,
            "files": self.file_paths,
        }


@lru_cache(maxsize=1)
def _schema_registry() -> tuple[Registry, dict[str, dict]]:
    schemas: dict[str, dict] = {}
    schema_dir = resources.files("reef") / "schemas"
    for entry in schema_dir.iterdir():
        if entry.name.endswith(".schema.json"):
            doc = json.loads(entry.read_text(encoding="utf-8"))
            schemas[doc["$id"]] = doc
    registry = Registry().with_resources(
        (uri, Resource.from_contents(doc)) for uri, doc in schemas.items()
    )
    return registry, schemas


@lru_cache(maxsize=None)
def _validator(schema_id: str) -> Draft202012Validator:
    registry, schemas = _schema_registry()
    return Draft202012Validator(schemas[schema_id], registry=registry)


def _error_path(error) -> str:
    path = error.json_path
    if error.validator == "required":
        match = _REQUIRED_MSG.match(error.message)
        if match:
            prop = match.group(1)
            if re.fullmatch(r"[A-Za-z_][A-Za-z0-9_-]*", prop):
                return f"{path}.{prop}"
            return f'{path}["{prop}"]'
    return path


def _schema_violations(schema_id: str, doc) -> list[Violation]:
    return [
        Violation(_error_path(err), err.message)
        for err in _validator(schema_id).iter_errors(doc)
    ]


def validate_meta(kind: str, meta) -> list[Violation]:
    """Validate a kind-specific payload; returns violations, empty when valid."""
    if kind not in KINDS:
        return [Violation("$", f"unknown component kind: {kind!r}")]
    if not isinstance(meta, dict):
        return [Violation("$", "meta must be a JSON object")]
    violations = _schema_violations(f"reef:{kind}", meta)
    violations.extend(_semantic_checks(kind, meta))
    violations.sort(key=lambda v: (v.path, v.message))
    return violations


def validate_result_doc(doc) -> list[Violation]:
    """Validate a benchmark result document; returns violations, empty when valid."""
    if not isinstance(doc, dict):
        return [Violation("$", "result must be a JSON object")]
    violations = _schema_violations("reef:result", doc)
    violations.sort(key=lambda v: (v.path, v.message))
    return violations


def _check_req(text, path: str, out: list[Violation]) -> None:
    if not isinstance(text, str):
        return
    try:
        VersionReq(text)
    except Exception as exc:
        out.append(Violation(path, str(exc)))


def _semantic_checks(kind: str, meta: dict) -> list[Violation]:
    out: list[Violation] = []

    deps = meta.get("deps")
    if isinstance(deps, dict):
        for dep_id, val in deps.items():
            req = val.get("req") if isinstance(val, dict) else val
            _check_req(req, f'$.deps["{dep_id}"]', out)

    env = meta.get("env")
    if isinstance(env, list):
        for i, entry in enumerate(env):
            if isinstance(entry, dict):
                _check_req(entry.get("req"), f"$.env[{i}].req", out)

    if kind == "detector":
        regex = meta.get("version_regex")
        if isinstance(regex, str):
            try:
                groups = re.compile(regex).groups
            except re.error as exc:
                out.append(Violation("$.version_regex", f"invalid regex: {exc}"))
            else:
                if groups != 1:
                    out.append(
                        Violation(
                            "$.version_regex",
                            f"regex must have exactly one capture group, found {groups}",
                        )
                    )
        command = meta.get("version_command")
        if isinstance(command, list) and not any(
            "exe" in placeholders(arg) for arg in command if isinstance(arg, str)
        ):
            out.append(Violation("$.version_command", "command never references ${exe}"))

    if kind == "solution":
        out.extend(_solution_checks(meta))

    return out


def _solution_checks(meta: dict) -> list[Violation]:
    out: list[Violation] = []
    declared = set(meta.get("deps", {})) if isinstance(meta.get("deps"), dict) else set()
    pipeline = meta.get("pipeline")
    if isinstance(pipeline, list):
        kind_counts: dict[str, int] = {}
        for i, stage in enumerate(pipeline):
            if not isinstance(stage, dict):
                continue
            stage_kind = stage.get("kind")
            if isinstance(stage_kind, str):
                kind_counts[stage_kind] = kind_counts.get(stage_kind, 0) + 1
            target = stage.get("target")
            if isinstance(target, str) and target not in declared:
                out.append(
                    Violation(
                        f"$.pipeline[{i}].target",
                        f"stage target {target!r} is not a declared dependency",
                    )
                )
            params = stage.get("params")
            if stage_kind == "detect-software" and isinstance(params, dict):
                _check_req(params.get("req"), f"$.pipeline[{i}].params.req", out)
        for stage_kind, count in sorted(kind_counts.items()):
            if count > 1 and stage_kind not in REPEATABLE_STAGES:
                out.append(
                    Violation(
                        "$.pipeline",
                        f"stage kind {stage_kind!r} appears {count} times; only install-deps may repeat",
                    )
                )
    checks = meta.get("validation")
    if isinstance(checks, list):
        for i, check in enumerate(checks):
            if (
                isinstance(check, dict)
                and isinstance(check.get("tolerance"), (int, float))
                and check["tolerance"] < 0
            ):
                out.append(
                    Violation(f"$.validation[{i}].tolerance", "tolerance must be >= 0")
                )
    return out


def _safe_relpath(path: str) -> PurePosixPath:
    pure = PurePosixPath(path)
    if pure.is_absolute() or ".." in pure.parts or "\\" in path:
        raise PathEscape(f"path escapes component directory: {path!r}")
    return pure


def load_component(directory: Path | str) -> Component:
    """Load and validate the component stored in ``directory``."""
    directory = Path(directory)
    meta_path = directory / META_NAME
    if not meta_path.is_file():
        raise MissingMeta(f"no {META_NAME} in {directory}")
    try:
        doc = json.loads(meta_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SchemaViolation([Violation("$", f"metadata is not valid JSON: {exc}")])
    if not isinstance(doc, dict):
        raise SchemaViolation([Violation("$", "metadata must be a JSON object")])

    violations = _schema_violations("reef:envelope", doc)
    if violations:
        raise SchemaViolation(sorted(violations, key=lambda v: (v.path, v.message)))
    violations = validate_meta(doc["kind"], doc["meta"])
    if violations:
        raise SchemaViolation(violations)
    parse_component_id(doc["id"])

    items: list[tuple[str, bytes]] = []
    files: list[tuple[str, int]] = []
    for rel in doc["files"]:
        _safe_relpath(rel)
        full = directory / rel
        if not full.is_file():
            raise StorageFailure(f"listed file missing: {rel!r} under {directory}")
        data = full.read_bytes()
        items.append((rel, data))
        files.append((rel, len(data)))

    return Component(
        id=doc["id"],
        version=Version.parse(doc["version"]),
        kind=doc["kind"],
        meta=doc["meta"],
        digest=canonical_digest(items, doc),
        files=files,
        root=directory,
    )


def _lv(data: bytes) -> bytes:
    return struct.pack(">Q", len(data)) + data


def canonical_digest(files: Iterable[tuple[str, bytes]], meta: dict) -> str:
    """Digest over canonical metadata bytes plus path-sorted file contents."""
    h = sha256()
    h.update(_lv(canonical_json_bytes(meta)))
    seen: set[str] = set()
    for path, data in sorted(files, key=lambda item: item[0]):
        if path in seen:
            raise DuplicatePath(f"path listed twice: {path!r}")
        seen.add(path)
        h.update(_lv(path.encode("utf-8")))
        h.update(_lv(data))
    return h.hexdigest()


def write_component(directory: Path, doc: dict, payload: dict[str, str | bytes] | None = None) -> Component:
    """Author a component directory from a metadata document and payload files."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    payload = payload or {}
    doc = dict(doc)
    doc["files"] = sorted(set(doc.get("files", [])) | set(payload))
    for rel, contents in payload.items():
        target = directory / _safe_relpath(rel)
        target.parent.mkdir(parents=True, exist_ok=True)
        if isinstance(contents, str):
            target.write_text(contents, encoding="utf-8")
        else:
            target.write_bytes(contents)
        if rel.endswith(".sh"):
            target.chmod(0o755)
    (directory / META_NAME).write_text(
        json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return load_component(directory)
