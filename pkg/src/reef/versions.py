"""Version numbers, version requirements, and platform tags.

Versions are strict three-part ``major.minor.patch`` with no leading zeros.
Requirements come in four shapes:

  ``*``                any version
  ``1.2.3``            exactly that version
  ``1.*`` / ``1.2.*``  wildcard on the trailing parts
  ``>=1.2.0,<2.0.0``   comma-joined comparator conjunction

``resolve`` style questions (highest match, all-reqs intersection) live in
the registry; this module only answers "does version V satisfy req R".
"""

from __future__ import annotations

import platform as _platform
import re
from dataclasses import dataclass
from functools import total_ordering

from .errors import InvalidComponentId, InvalidPlatformTag, InvalidVersion, InvalidVersionReq

_NUM = r"(?:0|[1-9][0-9]*)"
_VERSION_RE = re.compile(rf"^({_NUM})\.({_NUM})\.({_NUM})$")
_WILD1_RE = re.compile(rf"^({_NUM})\.\*$")
_WILD2_RE = re.compile(rf"^({_NUM})\.({_NUM})\.\*$")
# comparator bounds may omit trailing parts; they zero-extend (">=1.2" == ">=1.2.0")
_CMP_RE = re.compile(rf"^(>=|<=|>|<|==)({_NUM}(?:\.{_NUM}){{0,2}})$")

_ID_RE = re.compile(r"^[a-z0-9-]{1,64}/[a-z0-9-]{1,64}$")
_PLATFORM_RE = re.compile(r"^[a-z0-9]+-[a-z0-9_]+$")


@total_ordering
@dataclass(frozen=True)
class Version:
    major: int
    minor: int
    patch: int

    @classmethod
    def parse(cls, text: str) -> "Version":
        match = _VERSION_RE.match(text)
        if not match:
            raise InvalidVersion(f"invalid version: {text!r}")
        return cls(int(match.group(1)), int(match.group(2)), int(match.group(3)))

    def as_tuple(self) -> tuple[int, int, int]:
        return (self.major, self.minor, self.patch)

    def __lt__(self, other: "Version") -> bool:
        return self.as_tuple() < other.as_tuple()

    def __str__(self) -> str:
        return f"{self.major}.{self.minor}.{self.patch}"


class VersionReq:
    """Parsed requirement; ``satisfies`` answers membership."""

    def __init__(self, text: str):
        self.text = text.strip()
        if not self.text:
            raise InvalidVersionReq("empty version requirement")
        self._predicates = _parse_req(self.text)

    def satisfies(self, version: Version) -> bool:
        return all(pred(version) for pred in self._predicates)

    def __str__(self) -> str:
        return self.text

    def __repr__(self) -> str:
        return f"VersionReq({self.text!r})"

    def __eq__(self, other) -> bool:
        return isinstance(other, VersionReq) and self.text == other.text

    def __hash__(self) -> int:
        return hash(self.text)


def _parse_req(text: str):
    if text == "*":
        return [lambda v: True]

    match = _VERSION_RE.match(text)
    if match:
        exact = Version(int(match.group(1)), int(match.group(2)), int(match.group(3)))
        return [lambda v: v == exact]

    match = _WILD1_RE.match(text)
    if match:
        major = int(match.group(1))
        return [lambda v: v.major == major]

    match = _WILD2_RE.match(text)
    if match:
        major, minor = int(match.group(1)), int(match.group(2))
        return [lambda v: v.major == major and v.minor == minor]

    if "," in text or _CMP_RE.match(text):
        predicates = []
        for part in text.split(","):
            part = part.strip()
            match = _CMP_RE.match(part)
            if not match:
                raise InvalidVersionReq(f"invalid version requirement: {text!r}")
            op, bound_text = match.group(1), match.group(2)
            bound = Version.parse(zero_extend(bound_text))
            predicates.append(_comparator(op, bound))
        return predicates

    raise InvalidVersionReq(f"invalid version requirement: {text!r}")


def zero_extend(text: str) -> str:
    """Pad a partial version with zeros: "9.3" becomes "9.3.0"."""
    parts = text.split(".")
    while len(parts) < 3:
        parts.append("0")
    return ".".join(parts)


def _comparator(op: str, bound: Version):
    if op == ">=":
        return lambda v: v >= bound
    if op == "<=":
        return lambda v: v <= bound
    if op == ">":
        return lambda v: v > bound
    if op == "<":
        return lambda v: v < bound
    return lambda v: v == bound


def parse_component_id(id_: str) -> tuple[str, str]:
    """Split ``namespace/name``, enforcing the id grammar."""
    if not _ID_RE.match(id_):
        raise InvalidComponentId(f"invalid component id: {id_!r}")
    namespace, name = id_.split("/", 1)
    return namespace, name


def check_platform_tag(tag: str) -> str:
    if not _PLATFORM_RE.match(tag):
        raise InvalidPlatformTag(f"invalid platform tag: {tag!r}")
    return tag


def host_platform() -> str:
    """``<os>-<arch>`` tag for the running machine, e.g. ``linux-x86_64``."""
    os_name = _platform.system().lower()
    arch = _platform.machine().lower()
    return check_platform_tag(f"{os_name}-{arch}")
