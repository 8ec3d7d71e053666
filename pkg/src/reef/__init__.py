"""reef: a portable-MLOps toolchain.

Packages models, datasets and software as versioned, JSON-described
components; resolves and installs them reproducibly on the host; runs
solution pipelines; benchmarks them; and compares results including
Pareto-frontier selection.
"""

__version__ = "0.1.0"
