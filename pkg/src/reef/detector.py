"""Host software detection.

Probes candidate executables with a version command, parses the version out
of the output, and records what was found as environment entries that the
installer and solutions can select by version requirement.
"""

import json
import logging
import os
import re
import subprocess
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

from .canonical import canonical_json_bytes, sha256_hex
from .errors import (
    InvalidRule,
    MissingLocation,
    NoSatisfyingEnvironment,
    StorageFailure,
)
from .locks import locked
from .render import placeholders, render
from .versions import Version, host_platform, zero_extend

log = logging.getLogger(__name__)

PROBE_TIMEOUT = 10.0  # seconds per candidate; slower probes are skipped

ENV_DB_NAME = "envs.jsonl"

_COMMAND_KEYS = {"exe"}
_EXPORT_KEYS = {"exe", "dir", "version"}


@dataclass(frozen=True)
class DetectorRule:
    """How to find one piece of software on the host."""

    software: str
    candidates: Tuple[str, ...]
    search_dirs: Tuple[str, ...] = ()
    version_command: Tuple[str, ...] = ("${exe}", "--version")
    version_regex: str = r"([0-9]+\.[0-9]+\.[0-9]+)"
    exports: Dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if not self.candidates:
            raise InvalidRule("rule has no candidate filenames")
        try:
            pattern = re.compile(self.version_regex)
        except re.error as exc:
            raise InvalidRule(f"bad version pattern: {exc}") from exc
        if pattern.groups != 1:
            raise InvalidRule(
                f"version pattern must have exactly one capture group, has {pattern.groups}"
            )
        if not any("${exe}" in arg for arg in self.version_command):
            raise InvalidRule("version command never references ${exe}")
        for arg in self.version_command:
            unknown = set(placeholders(arg)) - _COMMAND_KEYS
            if unknown:
                raise InvalidRule(f"unknown placeholder in version command: {sorted(unknown)}")
        for name, template in self.exports.items():
            unknown = set(placeholders(template)) - _EXPORT_KEYS
            if unknown:
                raise InvalidRule(f"unknown placeholder in export {name!r}: {sorted(unknown)}")

    @property
    def pattern(self) -> "re.Pattern":
        return re.compile(self.version_regex)

    @classmethod
    def from_meta(cls, meta: dict) -> "DetectorRule":
        return cls(
            software=meta["software"],
            candidates=tuple(meta["candidates"]),
            search_dirs=tuple(meta.get("search_dirs", ())),
            version_command=tuple(meta["version_command"]),
            version_regex=meta["version_regex"],
            exports=dict(meta.get("exports", {})),
        )


@dataclass(frozen=True)
class EnvironmentEntry:
    """One usable installation of some software, pinned to a location."""

    software: str
    version: Version
    location: str
    exports: Dict[str, str]
    platform: str
    # bookkeeping only: two detections of the same install are equal entries
    detected_at: str = field(compare=False, default="")
    source: str = "detected"

    def to_doc(self) -> dict:
        return {
            "software": self.software,
            "version": str(self.version),
            "location": self.location,
            "exports": dict(self.exports),
            "platform": self.platform,
            "detected_at": self.detected_at,
            "source": self.source,
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "EnvironmentEntry":
        return cls(
            software=doc["software"],
            version=Version.parse(doc["version"]),
            location=doc["location"],
            exports=dict(doc.get("exports", {})),
            platform=doc["platform"],
            detected_at=doc["detected_at"],
            source=doc.get("source", "detected"),
        )

    @property
    def entry_id(self) -> str:
        return sha256_hex(canonical_json_bytes(self.to_doc()))


def utc_stamp() -> str:
    return time.strftime("%Y%m%dT%H%M%SZ", time.gmtime())


def default_search_dirs() -> List[str]:
    return [d for d in os.environ.get("PATH", "").split(os.pathsep) if d]


def detect(
    rule: DetectorRule,
    search_dirs: Optional[Sequence[str]] = None,
    diagnostics: Optional[List[str]] = None,
    platform: Optional[str] = None,
) -> List[EnvironmentEntry]:
    """Probe every candidate executable and return entries for the matches.

    Results are ordered by (version descending, location ascending), so the
    first entry is always the best default choice. Candidates whose probe
    fails to run, times out, or prints something the pattern does not match
    are skipped; timeouts and exec failures go into ``diagnostics`` when the
    caller passes a list.
    """
    if search_dirs is None:
        dirs = default_search_dirs()
    else:
        dirs = [str(d) for d in search_dirs]
    dirs.extend(rule.search_dirs)

    pattern = rule.pattern
    platform = platform or host_platform()
    stamp = utc_stamp()

    entries = []
    for exe in _find_candidates(rule.candidates, dirs):
        output = _probe(rule, exe, diagnostics)
        if output is None:
            continue
        match = pattern.search(output)
        if not match:
            continue
        version = _normalize_version(match.group(1), exe, diagnostics)
        if version is None:
            continue
        context = {"exe": exe, "dir": str(Path(exe).parent), "version": str(version)}
        exports = {name: render(tmpl, context) for name, tmpl in rule.exports.items()}
        entries.append(
            EnvironmentEntry(
                software=rule.software,
                version=version,
                location=exe,
                exports=exports,
                platform=platform,
                detected_at=stamp,
            )
        )

    # stable two-pass sort: location ascending within equal versions
    entries.sort(key=lambda e: e.location)
    entries.sort(key=lambda e: e.version.as_tuple(), reverse=True)
    return entries


def _find_candidates(names: Sequence[str], dirs: Sequence[str]) -> List[str]:
    found = []
    seen = set()
    for directory in dirs:
        for name in names:
            path = os.path.join(directory, name)
            full = os.path.abspath(path)
            if full in seen:
                continue
            if os.path.isfile(full) and os.access(full, os.X_OK):
                seen.add(full)
                found.append(full)
    return found


def _probe(rule: DetectorRule, exe: str, diagnostics: Optional[List[str]]) -> Optional[str]:
    command = [render(arg, {"exe": exe}) for arg in rule.version_command]
    try:
        proc = subprocess.run(
            command,
            capture_output=True,
            text=True,
            timeout=PROBE_TIMEOUT,
        )
    except subprocess.TimeoutExpired:
        _note(diagnostics, f"{exe}: probe timed out after {PROBE_TIMEOUT:g}s, skipped")
        return None
    except OSError as exc:
        _note(diagnostics, f"{exe}: probe failed to run ({exc}), skipped")
        return None
    # some tools print the version on stderr, or exit nonzero on --version
    return proc.stdout + "\n" + proc.stderr


def _normalize_version(text: str, exe: str, diagnostics: Optional[List[str]]) -> Optional[Version]:
    padded = zero_extend(text)
    if padded != text:
        log.info("zero-extended version %r to %r for %s", text, padded, exe)
        _note(diagnostics, f"{exe}: version {text!r} zero-extended to {padded!r}")
    try:
        return Version.parse(padded)
    except Exception:
        _note(diagnostics, f"{exe}: captured version {text!r} does not parse, skipped")
        return None


def _note(diagnostics: Optional[List[str]], message: str) -> None:
    if diagnostics is not None:
        diagnostics.append(message)


def select_env(entries: Sequence[EnvironmentEntry], req) -> EnvironmentEntry:
    """Pick the best entry satisfying ``req``: highest version, then path order."""
    ordered = sorted(entries, key=lambda e: e.location)
    ordered.sort(key=lambda e: e.version.as_tuple(), reverse=True)
    for entry in ordered:
        if req.satisfies(entry.version):
            return entry
    software = entries[0].software if entries else "(none)"
    raise NoSatisfyingEnvironment(software, req, [e.version for e in ordered])


def register_env(entry: EnvironmentEntry, env_db: Path) -> str:
    """Persist an entry; equal (software, version, location) replaces the old record."""
    if not os.path.exists(entry.location):
        raise MissingLocation(f"environment location does not exist: {entry.location}")
    env_db = Path(env_db)
    env_db.parent.mkdir(parents=True, exist_ok=True)
    key = (entry.software, str(entry.version), entry.location)
    with locked(env_db.parent / (env_db.name + ".lock")):
        kept = []
        for existing in _read_db(env_db):
            if (existing.software, str(existing.version), existing.location) != key:
                kept.append(existing)
        kept.append(entry)
        try:
            body = "".join(
                json.dumps(e.to_doc(), sort_keys=True) + "\n" for e in kept
            )
            tmp = env_db.parent / (env_db.name + ".tmp")
            tmp.write_text(body)
            os.replace(tmp, env_db)
        except OSError as exc:
            raise StorageFailure(f"cannot write env db {env_db}: {exc}") from exc
    return entry.entry_id


def load_envs(env_db: Path, software: Optional[str] = None) -> List[EnvironmentEntry]:
    entries = _read_db(Path(env_db))
    if software is not None:
        entries = [e for e in entries if e.software == software]
    return entries


def _read_db(env_db: Path) -> List[EnvironmentEntry]:
    if not env_db.exists():
        return []
    entries = []
    try:
        text = env_db.read_text()
    except OSError as exc:
        raise StorageFailure(f"cannot read env db {env_db}: {exc}") from exc
    for line in text.splitlines():
        line = line.strip()
        if line:
            entries.append(EnvironmentEntry.from_doc(json.loads(line)))
    return entries
