"""Canonical JSON encoding and digest helpers.

All persisted metadata (component meta, index, lockfiles) goes through
canonical_json_bytes so equal values always serialize to identical bytes:
keys sorted, no insignificant whitespace, UTF-8, no NaN/Infinity.
"""

from __future__ import annotations

import hashlib
import json


def canonical_json_bytes(value) -> bytes:
    text = json.dumps(
        value,
        sort_keys=True,
        separators=(",", ":"),
        ensure_ascii=False,
        allow_nan=False,
    )
    return text.encode("utf-8")


def sha256_hex(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def sha256_file(path, chunk_size: int = 1 << 20) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        while True:
            chunk = fh.read(chunk_size)
            if not chunk:
                break
            h.update(chunk)
    return h.hexdigest()
