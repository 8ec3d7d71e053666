"""Bundled demo: a mock object-detection benchmark in the `demo` namespace.

The solution walks the full stage sequence against mock stand-ins: a tiny
generated image set instead of COCO, a fake framework and model, and a
bench app that emits fixed metrics. Everything installs from local bytes
(the model archive is staged on disk and fetched over file://), so the
whole flow runs offline in seconds while exercising the same machinery a
real solution would.
"""

from __future__ import annotations

import tempfile
from pathlib import Path

from .archive import pack_tree
from .canonical import sha256_hex
from .components import write_component

DEMO_SOLUTION = "demo/mock-detection"

_GEN_IMAGES = """\
#!/bin/sh
set -e
n="$1"
mkdir -p images
i=1
while [ "$i" -le "$n" ]; do
  printf 'mock image %s\\n' "$i" > "images/img-$i.txt"
  i=$((i + 1))
done
printf '%s\\n' "$n" > images/count.txt
"""

_INSTALL_TOOLCHAIN = """\
#!/bin/sh
set -e
v="$1"
mkdir -p bin
printf '#!/bin/sh\\necho "mock-toolchain %s"\\n' "$v" > bin/mock-toolchain
chmod +x bin/mock-toolchain
"""

_BUILD_BENCH_APP = """\
#!/bin/sh
set -e
mkdir -p bin
cp bench-app.in bin/bench-app
chmod +x bin/bench-app
"""

_BENCH_APP = """\
#!/bin/sh
set -e
dataset_dir="$1"
model_path="$2"
if [ ! -f "$model_path" ]; then
  echo "missing model: $model_path" >&2
  exit 1
fi
count=$(cat "$dataset_dir/count.txt")
sleep 0.02
cat > output.json <<EOF
{"metrics": {"latency_ms": 30.0, "accuracy": 0.93}, "items_processed": $count}
EOF
"""


def _model_archive(assets_dir: Path) -> tuple[str, str]:
    """Stage the model weights archive; returns (file:// URL, digest)."""
    assets_dir = Path(assets_dir)
    assets_dir.mkdir(parents=True, exist_ok=True)
    with tempfile.TemporaryDirectory(prefix="reef-demo-") as tmp:
        weights = Path(tmp) / "model.bin"
        weights.write_bytes(b"mock ssd-mobilenet weights\n" * 64)
        blob = pack_tree(Path(tmp), ["model.bin"])
    archive = assets_dir / "mock-ssd-mobilenet-1.0.0.tar.gz"
    archive.write_bytes(blob)
    return archive.resolve().as_uri(), sha256_hex(blob)


def demo_documents(assets_dir: Path) -> list[tuple[dict, dict]]:
    """(metadata document, payload files) for every demo component."""
    model_url, model_digest = _model_archive(assets_dir)
    return [
        (
            {
                "id": "demo/coco-mock",
                "version": "1.0.0",
                "kind": "dataset",
                "meta": {
                    "params": {"count": 50},
                    "recipes": [
                        {
                            "platforms": ["*"],
                            "steps": [
                                {"verb": "run-script", "script": "gen.sh", "args": ["${count}"]}
                            ],
                        }
                    ],
                    "exports": {
                        "DATASET_DIR": "${prefix}/images",
                        "DATASET_COUNT": "${count}",
                    },
                },
            },
            {"gen.sh": _GEN_IMAGES},
        ),
        (
            {
                "id": "demo/toolchain-detector",
                "version": "1.0.0",
                "kind": "detector",
                "meta": {
                    "software": "mock-toolchain",
                    "candidates": ["mock-toolchain"],
                    "version_command": ["${exe}", "--version"],
                    "version_regex": "mock-toolchain ([0-9]+\\.[0-9]+\\.[0-9]+)",
                    "exports": {"TOOLCHAIN_BIN": "${exe}"},
                },
            },
            {},
        ),
        (
            {
                "id": "demo/mock-toolchain",
                "version": "9.1.0",
                "kind": "package",
                "meta": {
                    "recipes": [
                        {
                            "platforms": ["*"],
                            "steps": [
                                {
                                    "verb": "run-script",
                                    "script": "install.sh",
                                    "args": ["${version}"],
                                }
                            ],
                        }
                    ],
                    "exports": {"TOOLCHAIN_BIN": "${prefix}/bin/mock-toolchain"},
                },
            },
            {"install.sh": _INSTALL_TOOLCHAIN},
        ),
        (
            {
                "id": "demo/mock-tensorflow",
                "version": "1.15.2",
                "kind": "package",
                "meta": {
                    "recipes": [
                        {
                            "platforms": ["*"],
                            "steps": [
                                {
                                    "verb": "write-file",
                                    "path": "lib/VERSION",
                                    "contents": "${version}\n",
                                },
                                {
                                    "verb": "write-file",
                                    "path": "bin/mock-tf",
                                    "contents": "#!/bin/sh\necho \"mock-tensorflow ${version}\"\n",
                                },
                            ],
                        }
                    ],
                    "exports": {"TF_HOME": "${prefix}", "TF_VERSION": "${version}"},
                },
            },
            {},
        ),
        (
            {
                "id": "demo/mock-ssd-mobilenet",
                "version": "1.0.0",
                "kind": "model",
                "meta": {
                    "env": [{"name": "mock-tensorflow", "req": "1.15.*"}],
                    "recipes": [
                        {
                            "platforms": ["*"],
                            "steps": [
                                {"verb": "fetch", "url": model_url, "digest": model_digest},
                                {
                                    "verb": "extract",
                                    "archive": "mock-ssd-mobilenet-1.0.0.tar.gz",
                                    "format": "tar-gz",
                                },
                            ],
                        }
                    ],
                    "exports": {"MODEL_PATH": "${prefix}/model.bin"},
                },
            },
            {},
        ),
        (
            {
                "id": "demo/mock-utils",
                "version": "0.3.1",
                "kind": "package",
                "meta": {
                    "recipes": [
                        {
                            "platforms": ["*"],
                            "steps": [
                                {
                                    "verb": "write-file",
                                    "path": "bin/mock-utils",
                                    "contents": "#!/bin/sh\necho \"mock-utils ${version}\"\n",
                                }
                            ],
                        }
                    ],
                    "exports": {"UTILS_DIR": "${prefix}"},
                },
            },
            {},
        ),
        (
            {
                "id": "demo/bench-app",
                "version": "2.1.0",
                "kind": "script",
                "meta": {
                    "recipes": [
                        {
                            "platforms": ["*"],
                            "steps": [{"verb": "run-script", "script": "build.sh"}],
                        }
                    ],
                    "exports": {"BENCH_APP": "${prefix}/bin/bench-app"},
                },
            },
            {"build.sh": _BUILD_BENCH_APP, "bench-app.in": _BENCH_APP},
        ),
        (
            {
                "id": DEMO_SOLUTION,
                "version": "1.0.0",
                "kind": "solution",
                "meta": {
                    "deps": {
                        "demo/coco-mock": "1.*",
                        "demo/toolchain-detector": "*",
                        "demo/mock-toolchain": "9.*",
                        "demo/mock-tensorflow": "1.15.*",
                        "demo/mock-ssd-mobilenet": "1.*",
                        "demo/mock-utils": "*",
                        "demo/bench-app": "2.*",
                    },
                    "pipeline": [
                        {"kind": "prepare-env"},
                        {
                            "kind": "install-dataset",
                            "target": "demo/coco-mock",
                            "params": {"count": 50},
                        },
                        {
                            "kind": "detect-software",
                            "target": "demo/toolchain-detector",
                            "params": {"req": "*"},
                        },
                        {"kind": "install-framework", "target": "demo/mock-tensorflow"},
                        {"kind": "install-model", "target": "demo/mock-ssd-mobilenet"},
                        {"kind": "install-deps", "target": "demo/mock-utils"},
                        {"kind": "compile", "target": "demo/bench-app"},
                    ],
                    "run": {
                        "command": [
                            "sh",
                            "${env:BENCH_APP}",
                            "${env:DATASET_DIR}",
                            "${env:MODEL_PATH}",
                        ],
                        "outputs": "output.json",
                    },
                    "validation": [
                        {"metric": "latency_ms", "op": "within-abs", "ref": 30.0, "tolerance": 5.0},
                        {"metric": "accuracy", "op": "at-least", "ref": 0.9},
                    ],
                },
            },
            {},
        ),
    ]


def seed_demo(registry, assets_dir: Path) -> list[dict]:
    """Publish the demo components; already-published versions are skipped."""
    index = registry.index()
    receipts = []
    with tempfile.TemporaryDirectory(prefix="reef-seed-") as tmp:
        for doc, payload in demo_documents(assets_dir):
            ref = f"{doc['id']}@{doc['version']}"
            if any(str(v) == doc["version"] for v in index.versions(doc["id"])):
                receipts.append({"ref": ref, "status": "exists"})
                continue
            src = Path(tmp) / doc["id"].replace("/", "-")
            component = write_component(src, doc, payload)
            registry.publish(component)
            receipts.append({"ref": ref, "status": "published"})
    return receipts
