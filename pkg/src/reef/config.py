"""Global configuration: reef.toml plus environment variable overrides.

Everything lives under one root directory (default ``./.reef``) unless a
setting points elsewhere, so a fresh checkout works with no configuration
at all. Precedence per setting: environment variable, then reef.toml, then
the root-relative default.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

try:
    import tomllib
except ModuleNotFoundError:  # 3.10
    import tomli as tomllib

from .harness import host_platform_info

CONFIG_NAME = "reef.toml"
DEFAULT_ROOT = ".reef"


def host_platform() -> str:
    info = host_platform_info()
    return f"{info['os']}-{info['arch']}"


@dataclass(frozen=True)
class Config:
    root: Path
    registry: str
    prefix: Path
    env_db: Path
    store: Path
    platform: str
    token: Optional[str] = None

    # fixed layout under the root
    @property
    def work_dir(self) -> Path:
        return self.root / "work"

    @property
    def results_dir(self) -> Path:
        return self.root / "results"

    @property
    def report_dir(self) -> Path:
        return self.root / "report"

    @property
    def assets_dir(self) -> Path:
        return self.root / "assets"

    def workspace(self, component_id: str) -> Path:
        return self.work_dir / component_id.replace("/", "-")


def _path(value, base: Path) -> Path:
    p = Path(value)
    return p if p.is_absolute() else base / p


def load_config(path=None, cwd=None, env=None) -> Config:
    env = os.environ if env is None else env
    cwd = Path(cwd) if cwd is not None else Path.cwd()

    doc = {}
    base = cwd
    config_path = Path(path) if path else cwd / CONFIG_NAME
    if config_path.is_file():
        with open(config_path, "rb") as fh:
            doc = tomllib.load(fh)
        base = config_path.parent

    root = _path(doc.get("root", DEFAULT_ROOT), base)

    registry = env.get("REEF_REGISTRY") or doc.get("registry") or str(root / "registry")
    if not registry.startswith(("http://", "https://")):
        registry = str(_path(registry, base))

    return Config(
        root=root,
        registry=registry,
        prefix=_path(env.get("REEF_PREFIX") or doc.get("prefix") or root / "prefix", base),
        env_db=_path(doc.get("env_db") or root / "envs.jsonl", base),
        store=_path(doc.get("store") or root / "results.jsonl", base),
        platform=env.get("REEF_PLATFORM") or doc.get("platform") or host_platform(),
        token=env.get("REEF_TOKEN") or doc.get("token"),
    )
