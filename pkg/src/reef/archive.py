"""Deterministic archives and escape-safe extraction.

Blobs in the registry are tar.gz files built so the same input tree always
produces the same bytes: entries sorted by path, mtime zeroed, numeric
owner zeroed, fixed permission bits, and a gzip stream with no timestamp.
"""

from __future__ import annotations

import gzip
import io
import tarfile
import zipfile
from pathlib import Path

from .errors import PathEscape, ReefError


def pack_tree(root: Path, paths: list[str]) -> bytes:
    """Pack ``paths`` (relative to root, sorted here) into deterministic tar.gz bytes."""
    buffer = io.BytesIO()
    with tarfile.open(fileobj=buffer, mode="w", format=tarfile.PAX_FORMAT) as tar:
        for rel in sorted(paths):
            full = root / rel
            info = tarfile.TarInfo(name=rel)
            info.size = full.stat().st_size
            info.mtime = 0
            info.uid = 0
            info.gid = 0
            info.uname = ""
            info.gname = ""
            info.mode = 0o755 if full.stat().st_mode & 0o100 else 0o644
            with open(full, "rb") as fh:
                tar.addfile(info, fh)
    raw = buffer.getvalue()

    out = io.BytesIO()
    with gzip.GzipFile(fileobj=out, mode="wb", mtime=0) as gz:
        gz.write(raw)
    return out.getvalue()


def _check_member(name: str, error: type[ReefError]) -> str:
    path = Path(name)
    if path.is_absolute() or ".." in path.parts:
        raise error(f"archive member escapes destination: {name!r}")
    return name


def extract_tar_gz(data_or_path, dest: Path, error: type[ReefError] = PathEscape) -> list[str]:
    """Extract a tar.gz into ``dest``; returns extracted member names sorted."""
    if isinstance(data_or_path, (bytes, bytearray)):
        fileobj = io.BytesIO(data_or_path)
        tar = tarfile.open(fileobj=fileobj, mode="r:gz")
    else:
        tar = tarfile.open(data_or_path, mode="r:gz")
    names: list[str] = []
    with tar:
        for member in tar.getmembers():
            _check_member(member.name, error)
            if member.islnk() or member.issym():
                target = Path(member.linkname)
                if target.is_absolute() or ".." in target.parts:
                    raise error(f"archive link escapes destination: {member.name!r}")
            tar.extract(member, dest)
            names.append(member.name)
    return sorted(names)


def extract_zip(path, dest: Path, error: type[ReefError] = PathEscape) -> list[str]:
    names: list[str] = []
    with zipfile.ZipFile(path) as zf:
        for info in zf.infolist():
            _check_member(info.filename, error)
            zf.extract(info, dest)
            names.append(info.filename)
    return sorted(names)
