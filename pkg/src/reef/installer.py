"""Recipe execution into a managed prefix.

A package's recipe is a short list of steps (fetch, extract, run-script,
write-file) per platform. Installs are atomic: steps run in a scratch
directory that is renamed into place, and a stamp file with the rendered
plan's digest makes re-installs free.
"""

import hashlib
import os
import shutil
import subprocess
import urllib.request
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

from .archive import extract_tar_gz, extract_zip
from .canonical import canonical_json_bytes, sha256_hex
from .detector import EnvironmentEntry, load_envs, register_env, select_env, utc_stamp
from .errors import (
    FetchDigestMismatch,
    MissingEnvDependency,
    NoSatisfyingEnvironment,
    NoVariantForPlatform,
    SandboxEscape,
    StepFailed,
)
from .locks import locked
from .registry import platform_matches
from .render import render
from .versions import Version, VersionReq, parse_component_id

STAMP_NAME = ".reef-installed"

FETCH_TIMEOUT = 60.0

# step fields that stay literal when the plan is rendered
_UNRENDERED = {"verb", "format", "digest"}


@dataclass(frozen=True)
class Variant:
    platforms: Tuple[str, ...]
    steps: Tuple[dict, ...]


@dataclass(frozen=True)
class InstallRecipe:
    """Everything needed to materialize one component under the prefix."""

    id: str
    version: Version
    variants: Tuple[Variant, ...]
    env: Tuple[Tuple[str, VersionReq], ...] = ()
    exports: Dict[str, str] = field(default_factory=dict)
    params: Dict[str, object] = field(default_factory=dict)
    component_digest: str = ""
    root: Optional[Path] = None

    @property
    def namespace(self) -> str:
        return parse_component_id(self.id)[0]

    @property
    def name(self) -> str:
        return parse_component_id(self.id)[1]


def recipe_from_component(component) -> InstallRecipe:
    """Lift a pulled component into a recipe; no declared recipe means a
    payload-only install (the component's files, zero steps)."""
    meta = component.meta
    raw = meta.get("recipes") or [{"platforms": ["*"], "steps": []}]
    variants = tuple(
        Variant(platforms=tuple(v["platforms"]), steps=tuple(v["steps"])) for v in raw
    )
    env = tuple((d["name"], VersionReq(d["req"])) for d in meta.get("env", []))
    return InstallRecipe(
        id=component.id,
        version=component.version,
        variants=variants,
        env=env,
        exports=dict(meta.get("exports", {})),
        params=dict(meta.get("params", {})),
        component_digest=component.digest,
        root=component.root,
    )


def plan_install(recipe: InstallRecipe, platform: str) -> List[dict]:
    """Steps of the first variant whose platform list admits ``platform``."""
    for variant in recipe.variants:
        if platform_matches(variant.platforms, platform):
            return list(variant.steps)
    raise NoVariantForPlatform(recipe.id, platform)


def render_exports(templates: Dict[str, str], context: Dict[str, object]) -> Dict[str, str]:
    return {name: render(template, context) for name, template in templates.items()}


def install_dir(prefix: Path, recipe: InstallRecipe) -> Path:
    return Path(prefix) / recipe.namespace / recipe.name / str(recipe.version)


def install(
    recipe: InstallRecipe,
    prefix: Path,
    env_db: Path,
    platform: str,
    params: Optional[Dict[str, object]] = None,
    executed: Optional[List[dict]] = None,
) -> EnvironmentEntry:
    """Run the recipe's plan for ``platform`` and register the result.

    A valid stamp (same rendered plan, same component payload) short-circuits
    to zero steps. Failures leave no stamp and no final directory, so the next
    attempt starts clean.
    """
    prefix = Path(prefix)
    steps = plan_install(recipe, platform)
    final_dir = install_dir(prefix, recipe)

    env_exports = _resolve_env_deps(recipe, env_db)
    context = _render_context(recipe, final_dir, platform, env_exports, params)
    rendered_steps = [_render_step(step, context) for step in steps]
    rendered_exports = render_exports(recipe.exports, context)
    plan_digest = _plan_digest(rendered_steps, rendered_exports, recipe.component_digest)

    component_dir = prefix / recipe.namespace / recipe.name
    component_dir.mkdir(parents=True, exist_ok=True)
    with locked(component_dir / ".install.lock"):
        stamp = final_dir / STAMP_NAME
        if stamp.is_file() and stamp.read_text().strip() == plan_digest:
            return _register(recipe, final_dir, rendered_exports, platform, env_db)

        scratch = component_dir / f".build-{recipe.version}"
        if scratch.exists():
            shutil.rmtree(scratch)
        scratch.mkdir()
        try:
            _seed_payload(recipe, scratch)
            for index, step in enumerate(rendered_steps):
                if executed is not None:
                    executed.append(step)
                _run_step(index, step, scratch, env_exports, rendered_exports)
            (scratch / STAMP_NAME).write_text(plan_digest + "\n")
            if final_dir.exists():
                shutil.rmtree(final_dir)  # stale install without a valid stamp
            os.rename(scratch, final_dir)
        except BaseException:
            shutil.rmtree(scratch, ignore_errors=True)
            raise
    return _register(recipe, final_dir, rendered_exports, platform, env_db)


def _resolve_env_deps(recipe: InstallRecipe, env_db: Path) -> Dict[str, str]:
    merged = {}
    for name, req in recipe.env:
        try:
            entry = select_env(load_envs(env_db, software=name), req)
        except NoSatisfyingEnvironment as exc:
            raise MissingEnvDependency(name, str(req)) from exc
        merged.update(entry.exports)
    return merged


def _render_context(recipe, final_dir, platform, env_exports, params):
    context: Dict[str, object] = {
        "prefix": str(final_dir),
        "name": recipe.name,
        "namespace": recipe.namespace,
        "version": str(recipe.version),
        "platform": platform,
    }
    context.update(env_exports)
    context.update(recipe.params)
    if params:
        context.update(params)
    return context


def _render_step(step: dict, context: Dict[str, object]) -> dict:
    rendered = {}
    for key, value in step.items():
        if key in _UNRENDERED:
            rendered[key] = value
        elif isinstance(value, str):
            rendered[key] = render(value, context)
        elif isinstance(value, list):
            rendered[key] = [render(item, context) for item in value]
        else:
            rendered[key] = value
    return rendered


def _plan_digest(steps: List[dict], exports: Dict[str, str], component_digest: str) -> str:
    doc = {"steps": steps, "exports": exports, "component": component_digest}
    return sha256_hex(canonical_json_bytes(doc))


def _seed_payload(recipe: InstallRecipe, scratch: Path) -> None:
    if recipe.root is None:
        return
    for rel in sorted(p.relative_to(recipe.root).as_posix()
                      for p in Path(recipe.root).rglob("*") if p.is_file()):
        if rel == "meta.json":
            continue
        source = Path(recipe.root) / rel
        dest = scratch / rel
        dest.parent.mkdir(parents=True, exist_ok=True)
        shutil.copy2(source, dest)


def _sandboxed(scratch: Path, rel: str) -> Path:
    if rel.startswith("/") or rel.startswith("~"):
        raise SandboxEscape(f"absolute path in step: {rel!r}")
    target = (scratch / rel).resolve()
    root = scratch.resolve()
    if target != root and root not in target.parents:
        raise SandboxEscape(f"path escapes the install sandbox: {rel!r}")
    return target


def _run_step(index, step, scratch, env_exports, rendered_exports):
    verb = step["verb"]
    if verb == "fetch":
        _step_fetch(index, step, scratch)
    elif verb == "extract":
        _step_extract(index, step, scratch)
    elif verb == "run-script":
        _step_run_script(index, step, scratch, env_exports, rendered_exports)
    elif verb == "write-file":
        target = _sandboxed(scratch, step["path"])
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_text(step["contents"])
    else:
        raise StepFailed(index, -1, f"unknown step verb {verb!r}")


def _step_fetch(index, step, scratch):
    url = step["url"]
    if not url.startswith(("file://", "http://", "https://")):
        raise StepFailed(index, -1, f"unsupported fetch URL scheme: {url}")
    try:
        with urllib.request.urlopen(url, timeout=FETCH_TIMEOUT) as response:
            data = response.read()
    except OSError as exc:
        raise StepFailed(index, -1, f"fetch failed for {url}: {exc}") from exc
    actual = hashlib.sha256(data).hexdigest()
    if actual != step["digest"]:
        raise FetchDigestMismatch(url, step["digest"], actual)
    rel = step.get("to") or os.path.basename(url.rstrip("/")) or "download"
    target = _sandboxed(scratch, rel)
    target.parent.mkdir(parents=True, exist_ok=True)
    target.write_bytes(data)


def _step_extract(index, step, scratch):
    archive = _sandboxed(scratch, step["archive"])
    if not archive.is_file():
        raise StepFailed(index, -1, f"archive not found: {step['archive']}")
    dest = _sandboxed(scratch, step.get("to") or ".")
    dest.mkdir(parents=True, exist_ok=True)
    if step["format"] == "tar-gz":
        extract_tar_gz(archive, dest, error=SandboxEscape)
    else:
        extract_zip(archive, dest, error=SandboxEscape)


def _step_run_script(index, step, scratch, env_exports, rendered_exports):
    script = _sandboxed(scratch, step["script"])
    if not script.is_file():
        raise StepFailed(index, -1, f"script not found: {step['script']}")
    env = dict(os.environ)
    env.update(env_exports)
    env.update(rendered_exports)
    proc = subprocess.run(
        ["sh", str(script)] + list(step.get("args", [])),
        cwd=scratch,
        env=env,
        capture_output=True,
        text=True,
    )
    if proc.returncode != 0:
        raise StepFailed(index, proc.returncode, proc.stdout + proc.stderr)


def _register(recipe, final_dir, exports, platform, env_db) -> EnvironmentEntry:
    entry = EnvironmentEntry(
        software=recipe.name,
        version=recipe.version,
        location=str(final_dir),
        exports=exports,
        platform=platform,
        detected_at=utc_stamp(),
        source="installed",
    )
    register_env(entry, env_db)
    return entry
