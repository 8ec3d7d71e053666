"""Registry: versioned publish/pull, dependency resolution, lockfiles.

The store is content-addressed: ``blobs/<digest>`` holds a deterministic
archive of the component directory, ``index.json`` maps component ids to
ascending version entries. Published versions are immutable. A lockfile
records the fully pinned closure of one solution against one index digest,
encoded canonically so equal lockfiles are byte-equal.
"""

from __future__ import annotations

import json
import logging
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

from .archive import extract_tar_gz, pack_tree
from .canonical import canonical_json_bytes, sha256_hex
from .components import META_NAME, Component, load_component
from .errors import (
    CycleDetected,
    DigestMismatch,
    DuplicateVersion,
    NoMatchingVersion,
    StorageFailure,
    UnknownComponent,
    VersionConflict,
)
from .locks import locked
from .versions import Version, VersionReq

log = logging.getLogger(__name__)


def platform_matches(tags: list[str] | None, platform: str) -> bool:
    """None means unrestricted; '*' inside a list does too."""
    if tags is None:
        return True
    return platform in tags or "*" in tags


@dataclass(frozen=True)
class DependencySpec:
    id: str
    req: VersionReq
    kind: str | None = None
    platforms: tuple[str, ...] | None = None

    @classmethod
    def from_doc(cls, doc: dict) -> "DependencySpec":
        platforms = doc.get("platforms")
        return cls(
            id=doc["id"],
            req=VersionReq(doc["req"]),
            kind=doc.get("kind"),
            platforms=tuple(platforms) if platforms else None,
        )

    def to_doc(self) -> dict:
        doc: dict = {"id": self.id, "req": str(self.req)}
        if self.kind:
            doc["kind"] = self.kind
        if self.platforms:
            doc["platforms"] = list(self.platforms)
        return doc


def dep_specs_from_meta(meta: dict) -> list[DependencySpec]:
    """Dependency specs declared by a component's metadata, sorted by id."""
    specs = []
    for dep_id, val in sorted(meta.get("deps", {}).items()):
        if isinstance(val, str):
            specs.append(DependencySpec(id=dep_id, req=VersionReq(val)))
        else:
            platforms = val.get("platforms")
            specs.append(
                DependencySpec(
                    id=dep_id,
                    req=VersionReq(val["req"]),
                    platforms=tuple(platforms) if platforms else None,
                )
            )
    return specs


@dataclass
class IndexEntry:
    version: Version
    kind: str
    digest: str
    deps: list[DependencySpec] = field(default_factory=list)

    @classmethod
    def from_doc(cls, doc: dict) -> "IndexEntry":
        return cls(
            version=Version.parse(doc["version"]),
            kind=doc["kind"],
            digest=doc["digest"],
            deps=[DependencySpec.from_doc(d) for d in doc.get("deps", [])],
        )

    def to_doc(self) -> dict:
        doc: dict = {
            "version": str(self.version),
            "kind": self.kind,
            "digest": self.digest,
        }
        if self.deps:
            doc["deps"] = [d.to_doc() for d in self.deps]
        return doc


class RegistryIndex:
    """In-memory view of the index document."""

    def __init__(self, entries: dict[str, list[IndexEntry]] | None = None):
        self.entries: dict[str, list[IndexEntry]] = entries or {}

    @classmethod
    def from_doc(cls, doc: dict) -> "RegistryIndex":
        entries = {
            id_: [IndexEntry.from_doc(e) for e in lst]
            for id_, lst in doc.get("components", {}).items()
        }
        return cls(entries)

    def to_doc(self) -> dict:
        return {
            "components": {
                id_: [e.to_doc() for e in lst]
                for id_, lst in sorted(self.entries.items())
            }
        }

    def to_bytes(self) -> bytes:
        return canonical_json_bytes(self.to_doc())

    def digest(self) -> str:
        return sha256_hex(self.to_bytes())

    def versions(self, id_: str) -> list[Version]:
        return [e.version for e in self.entries.get(id_, [])]

    def entry(self, id_: str, version: Version) -> IndexEntry:
        for e in self.entries.get(id_, []):
            if e.version == version:
                return e
        raise UnknownComponent(f"{id_}@{version}")

    def has(self, id_: str, version: Version) -> bool:
        return any(e.version == version for e in self.entries.get(id_, []))

    def add(self, id_: str, entry: IndexEntry) -> None:
        if self.has(id_, entry.version):
            raise DuplicateVersion(f"{id_}@{entry.version}")
        lst = self.entries.setdefault(id_, [])
        lst.append(entry)
        lst.sort(key=lambda e: e.version.as_tuple())


def resolve(index: RegistryIndex, id_: str, req: VersionReq) -> Version:
    """Maximum published version of ``id_`` satisfying ``req``."""
    if id_ not in index.entries:
        raise UnknownComponent(id_)
    available = index.versions(id_)
    matching = [v for v in available if req.satisfies(v)]
    if not matching:
        raise NoMatchingVersion(id_, str(req), [str(v) for v in available])
    return max(matching)


class _Unsolvable(Exception):
    """Internal backtracking signal; never escapes closure()."""


def closure(
    index: RegistryIndex, specs: list[DependencySpec], platform: str
) -> list[tuple[str, Version, str]]:
    """Pin every component reachable from ``specs`` to a single version.

    Preference order is highest-version-first; the search backtracks, so a
    conflict is only reported when no assignment at all can satisfy every
    req along the chosen edges. Output is topologically ordered
    (dependencies first) and deterministic for fixed inputs.
    """
    roots = [s for s in specs if platform_matches(s.platforms, platform)]
    # remembered per id across the whole search, for error reporting
    reqs_seen: dict[str, list[str]] = {}
    failure: dict[str, object] = {}

    def note_req(id_: str, req: VersionReq) -> None:
        texts = reqs_seen.setdefault(id_, [])
        if str(req) not in texts:
            texts.append(str(req))

    def search(pins: dict[str, Version], pending: list[DependencySpec]) -> dict[str, Version]:
        if not pending:
            return pins
        spec, rest = pending[0], pending[1:]
        note_req(spec.id, spec.req)

        if spec.id in pins:
            if spec.req.satisfies(pins[spec.id]):
                return search(pins, rest)
            failure.setdefault("conflict", spec.id)
            raise _Unsolvable

        if spec.id not in index.entries:
            failure.setdefault("unknown", spec.id)
            raise _Unsolvable
        candidates = [v for v in index.versions(spec.id) if spec.req.satisfies(v)]
        if not candidates:
            failure.setdefault("nomatch", spec.id)
            raise _Unsolvable
        for version in sorted(candidates, reverse=True):
            entry = index.entry(spec.id, version)
            edges = [d for d in entry.deps if platform_matches(d.platforms, platform)]
            try:
                return search({**pins, spec.id: version}, rest + edges)
            except _Unsolvable:
                continue
        raise _Unsolvable

    try:
        pins = search({}, list(roots))
    except _Unsolvable:
        if "conflict" in failure:
            id_ = failure["conflict"]
            raise VersionConflict(id_, reqs_seen.get(id_, []))
        if "nomatch" in failure:
            id_ = failure["nomatch"]
            req = reqs_seen[id_][-1]
            raise NoMatchingVersion(id_, req, [str(v) for v in index.versions(id_)])
        raise UnknownComponent(failure["unknown"])

    return _topo_order(index, pins, roots, platform)


def _topo_order(
    index: RegistryIndex,
    pins: dict[str, Version],
    roots: list[DependencySpec],
    platform: str,
) -> list[tuple[str, Version, str]]:
    WHITE, GRAY, BLACK = 0, 1, 2
    color = {id_: WHITE for id_ in pins}
    order: list[tuple[str, Version, str]] = []
    stack_path: list[str] = []

    def edges_of(id_: str) -> list[str]:
        entry = index.entry(id_, pins[id_])
        return [
            d.id
            for d in entry.deps
            if platform_matches(d.platforms, platform) and d.id in pins
        ]

    def visit(id_: str) -> None:
        if color[id_] == BLACK:
            return
        if color[id_] == GRAY:
            cycle_start = stack_path.index(id_)
            raise CycleDetected(stack_path[cycle_start:] + [id_])
        color[id_] = GRAY
        stack_path.append(id_)
        for dep_id in edges_of(id_):
            visit(dep_id)
        stack_path.pop()
        color[id_] = BLACK
        entry = index.entry(id_, pins[id_])
        order.append((id_, pins[id_], entry.digest))

    for spec in roots:
        if spec.id in pins:
            visit(spec.id)
    return order


@dataclass
class Lockfile:
    solution: tuple[str, str]
    pins: list[tuple[str, str, str]]
    platform: str
    index_digest: str

    def to_doc(self) -> dict:
        return {
            "solution": list(self.solution),
            "pins": [list(p) for p in self.pins],
            "platform": self.platform,
            "index_digest": self.index_digest,
        }

    def to_bytes(self) -> bytes:
        return canonical_json_bytes(self.to_doc())

    def digest(self) -> str:
        return sha256_hex(self.to_bytes())

    @classmethod
    def from_doc(cls, doc: dict) -> "Lockfile":
        return cls(
            solution=(doc["solution"][0], doc["solution"][1]),
            pins=[(p[0], p[1], p[2]) for p in doc["pins"]],
            platform=doc["platform"],
            index_digest=doc["index_digest"],
        )

    @classmethod
    def from_bytes(cls, data: bytes) -> "Lockfile":
        return cls.from_doc(json.loads(data.decode("utf-8")))


def _atomic_write(path: Path, data: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class LocalRegistry:
    """Registry backed by a directory: ``blobs/<digest>`` plus ``index.json``."""

    def __init__(self, root: Path | str):
        self.root = Path(root)

    @property
    def _index_path(self) -> Path:
        return self.root / "index.json"

    @property
    def _lock_path(self) -> Path:
        return self.root / "index.lock"

    def _blob_path(self, digest: str) -> Path:
        return self.root / "blobs" / digest

    def index(self) -> RegistryIndex:
        if not self._index_path.is_file():
            return RegistryIndex()
        try:
            doc = json.loads(self._index_path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise StorageFailure(f"unreadable index at {self._index_path}: {exc}")
        return RegistryIndex.from_doc(doc)

    def index_digest(self) -> str:
        return self.index().digest()

    def publish(self, component: Component) -> dict:
        if component.root is None:
            raise StorageFailure("component has no backing directory")
        digest = component.digest
        blob = pack_tree(component.root, [META_NAME] + component.file_paths)
        entry = IndexEntry(
            version=component.version,
            kind=component.kind,
            digest=digest,
            deps=dep_specs_from_meta(component.meta),
        )
        with locked(self._lock_path):
            index = self.index()
            index.add(component.id, entry)
            blob_path = self._blob_path(digest)
            if not blob_path.exists():
                _atomic_write(blob_path, blob)
            _atomic_write(self._index_path, index.to_bytes())
        log.info("published %s (%s)", component.ref, digest[:12])
        return {"id": component.id, "version": str(component.version), "digest": digest}

    def pull(self, id_: str, version: Version | str, dest: Path | str) -> Component:
        if isinstance(version, str):
            version = Version.parse(version)
        index = self.index()
        if id_ not in index.entries:
            raise UnknownComponent(id_)
        entry = index.entry(id_, version)
        blob_path = self._blob_path(entry.digest)
        if not blob_path.is_file():
            raise StorageFailure(f"missing blob for {id_}@{version}: {entry.digest}")
        dest = Path(dest)
        dest.mkdir(parents=True, exist_ok=True)
        extract_tar_gz(blob_path, dest)
        component = load_component(dest)
        if component.digest != entry.digest:
            raise DigestMismatch(f"{id_}@{version}", entry.digest, component.digest)
        return component

    def blob_bytes(self, id_: str, version: Version) -> tuple[bytes, str]:
        index = self.index()
        if id_ not in index.entries:
            raise UnknownComponent(id_)
        entry = index.entry(id_, version)
        blob_path = self._blob_path(entry.digest)
        if not blob_path.is_file():
            raise StorageFailure(f"missing blob for {id_}@{version}: {entry.digest}")
        return blob_path.read_bytes(), entry.digest

    def publish_blob(self, id_: str, version: Version, blob: bytes, digest: str) -> dict:
        """Accept a pre-packed blob (service PUT path); verifies the digest."""
        with tempfile.TemporaryDirectory(prefix="reef-pub-") as tmp:
            extract_tar_gz(blob, Path(tmp))
            component = load_component(Path(tmp))
            actual = component.digest
            if actual != digest:
                raise DigestMismatch(f"{id_}@{version}", digest, actual)
            if component.id != id_ or component.version != version:
                raise StorageFailure(
                    f"blob metadata says {component.ref}, expected {id_}@{version}"
                )
            entry = IndexEntry(
                version=component.version,
                kind=component.kind,
                digest=actual,
                deps=dep_specs_from_meta(component.meta),
            )
            with locked(self._lock_path):
                index = self.index()
                index.add(id_, entry)
                blob_path = self._blob_path(actual)
                if not blob_path.exists():
                    _atomic_write(blob_path, blob)
                _atomic_write(self._index_path, index.to_bytes())
        return {"id": id_, "version": str(version), "digest": actual}

    def resolve(self, id_: str, req: VersionReq | str) -> Version:
        if isinstance(req, str):
            req = VersionReq(req)
        return resolve(self.index(), id_, req)

    def closure(
        self, specs: list[DependencySpec], platform: str
    ) -> list[tuple[str, Version, str]]:
        return closure(self.index(), specs, platform)
