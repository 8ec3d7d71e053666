"""Placeholder substitution for recipes, run templates, and export values.

Templates use ``${key}`` markers. Rendering is a single pass: values are
substituted verbatim and never re-scanned, so a value containing ``${``
cannot trigger a second expansion.
"""

from __future__ import annotations

import re

from .errors import UnknownPlaceholder

_PLACEHOLDER = re.compile(r"\$\{([^}]+)\}")


def stringify(value) -> str:
    """Context values may be numbers or bools; render them as JSON would."""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float) and value.is_integer():
        return str(int(value))
    return str(value)


def render(template: str, context: dict[str, object]) -> str:
    def replace(match: re.Match) -> str:
        key = match.group(1)
        if key not in context:
            raise UnknownPlaceholder(key)
        return stringify(context[key])

    return _PLACEHOLDER.sub(replace, template)


def placeholders(template: str) -> list[str]:
    """Keys referenced by a template, in order of first appearance."""
    seen: list[str] = []
    for match in _PLACEHOLDER.finditer(template):
        key = match.group(1)
        if key not in seen:
            seen.append(key)
    return seen
