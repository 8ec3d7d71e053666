"""Exception hierarchy shared by all reef subsystems.

Every error carries an ``exit_code`` used by the CLI: 2 for usage errors,
3 for environment/dependency errors, 4 for transport errors. Validation
failures (exit 1) are report content, not exceptions.
"""

from __future__ import annotations


class ReefError(Exception):
    """Base class for all reef errors."""

    exit_code = 3


# --- grammar / usage errors (exit 2) ---------------------------------------


class InvalidComponentId(ReefError):
    exit_code = 2


class InvalidVersion(ReefError):
    exit_code = 2


class InvalidVersionReq(ReefError):
    exit_code = 2


class InvalidPlatformTag(ReefError):
    exit_code = 2


class InvalidRef(ReefError):
    exit_code = 2


# --- component model ---------------------------------------------------------


class MissingMeta(ReefError):
    """Component directory has no metadata file."""


class SchemaViolation(ReefError):
    """Metadata failed schema validation; ``violations`` lists each offense."""

    def __init__(self, violations, message: str | None = None):
        self.violations = list(violations)
        detail = "; ".join(str(v) for v in self.violations)
        super().__init__(message or f"schema violations: {detail}")


class PathEscape(ReefError):
    """A listed path leaves the component directory."""


class DuplicatePath(ReefError):
    """Digest input lists the same path twice."""


# --- registry ----------------------------------------------------------------


class UnknownComponent(ReefError):
    def __init__(self, ref: str):
        self.ref = ref
        super().__init__(f"unknown component: {ref}")


class NoMatchingVersion(ReefError):
    def __init__(self, id_: str, req: str, available):
        self.id = id_
        self.req = req
        self.available = list(available)
        avail = ", ".join(str(v) for v in self.available) or "none"
        super().__init__(f"{id_}: no version satisfies {req!r} (available: {avail})")


class CycleDetected(ReefError):
    def __init__(self, cycle):
        self.cycle = list(cycle)
        super().__init__("dependency cycle: " + " -> ".join(self.cycle))


class VersionConflict(ReefError):
    def __init__(self, id_: str, reqs):
        self.id = id_
        self.reqs = [str(r) for r in reqs]
        super().__init__(
            f"{id_}: no single version satisfies all of {', '.join(self.reqs)}"
        )


class DuplicateVersion(ReefError):
    def __init__(self, ref: str):
        self.ref = ref
        super().__init__(f"version already published: {ref}")


class StorageFailure(ReefError):
    pass


class DigestMismatch(ReefError):
    def __init__(self, ref: str, expected: str, actual: str):
        self.ref = ref
        self.expected = expected
        self.actual = actual
        super().__init__(f"{ref}: digest mismatch (expected {expected}, got {actual})")


class TransportFailure(ReefError):
    exit_code = 4


# --- detector ----------------------------------------------------------------


class InvalidRule(ReefError):
    pass


class NoSatisfyingEnvironment(ReefError):
    def __init__(self, software: str, req: str, available):
        self.software = software
        self.req = req
        self.available = list(available)
        avail = ", ".join(str(v) for v in self.available) or "none"
        super().__init__(f"{software}: no environment satisfies {req!r} (available: {avail})")


class MissingLocation(ReefError):
    """Environment entry points at a location that does not exist."""


# --- installer ---------------------------------------------------------------


class NoVariantForPlatform(ReefError):
    def __init__(self, ref: str, platform: str):
        self.ref = ref
        self.platform = platform
        super().__init__(f"{ref}: no install recipe variant for platform {platform}")


class FetchDigestMismatch(ReefError):
    def __init__(self, url: str, expected: str, actual: str):
        self.url = url
        self.expected = expected
        self.actual = actual
        super().__init__(f"fetched {url}: digest mismatch (expected {expected}, got {actual})")


class StepFailed(ReefError):
    def __init__(self, step_index: int, status: int | None, output: str):
        self.step_index = step_index
        self.status = status
        self.output = output
        super().__init__(f"step {step_index} failed (exit {status}): {output.strip()[-400:]}")


class MissingEnvDependency(ReefError):
    def __init__(self, software: str, req: str):
        self.software = software
        self.req = req
        super().__init__(f"missing environment dependency: {software} {req}")


class SandboxEscape(ReefError):
    """A step path leaves the install sandbox."""


class UnknownPlaceholder(ReefError):
    def __init__(self, key: str):
        self.key = key
        super().__init__(f"unknown placeholder: ${{{key}}}")


# --- solution ----------------------------------------------------------------


class StageFailed(ReefError):
    """Wraps any detect/install/closure error with the failing stage index."""

    def __init__(self, stage_index: int, stage_kind: str, cause: Exception):
        self.stage_index = stage_index
        self.stage_kind = stage_kind
        self.cause = cause
        super().__init__(f"stage {stage_index} ({stage_kind}) failed: {cause}")


class NotInitialized(ReefError):
    """Workdir lacks init state (lockfile / environment map)."""


class RenderError(ReefError):
    pass


class NonZeroExit(ReefError):
    def __init__(self, status: int, log_path: str):
        self.status = status
        self.log_path = log_path
        super().__init__(f"run command exited {status} (stderr: {log_path})")


class MalformedOutput(ReefError):
    pass


# --- harness -----------------------------------------------------------------


class BenchmarkFailed(ReefError):
    def __init__(self, repetition: int, phase: str, cause: Exception | None = None):
        self.repetition = repetition
        self.phase = phase
        self.cause = cause
        detail = f": {cause}" if cause is not None else ""
        super().__init__(f"benchmark failed at {phase} repetition {repetition}{detail}")


class EmptySamples(ReefError):
    pass


# --- results -----------------------------------------------------------------


class DuplicateRecord(ReefError):
    pass


class InvalidObjective(ReefError):
    exit_code = 2


class MissingMetric(ReefError):
    """Frontier input records lack an objective metric."""

    def __init__(self, excluded):
        self.excluded = list(excluded)
        detail = ", ".join(f"{rid[:12]}:{path}" for rid, path in self.excluded)
        super().__init__(f"records missing objective metrics: {detail}")


class EmptyStore(Warning):
    """Report emission found no records; an empty report is still written."""
