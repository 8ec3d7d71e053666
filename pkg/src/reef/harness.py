"""Benchmark harness: warmup plus repeated measured runs of a solution.

Latency is the monotonic wall clock around the child process, summarized
with nearest-rank percentiles. Peak RSS is sampled beside the child; when
sampling yields nothing it is reported as null, never zero.
"""

import math
import platform as platform_module
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

import psutil

from .canonical import canonical_json_bytes, sha256_hex
from .detector import utc_stamp
from .errors import BenchmarkFailed, EmptySamples, ReefError
from .solution import Workspace, run_solution

RSS_SAMPLE_INTERVAL = 0.05

DEFAULT_REPETITIONS = 10
DEFAULT_WARMUP = 1


@dataclass(frozen=True)
class BenchmarkConfig:
    repetitions: int = DEFAULT_REPETITIONS
    warmup: int = DEFAULT_WARMUP
    input_values: Dict[str, object] = field(default_factory=dict)
    submitter: Optional[str] = None

    def __post_init__(self):
        if self.repetitions < 1:
            raise ValueError("repetitions must be at least 1")
        if self.warmup < 0:
            raise ValueError("warmup must be non-negative")


def summarize(samples_ms: List[float]) -> Dict[str, float]:
    """Nearest-rank percentiles: p-th = sorted value at 1-based rank ceil(p*n/100)."""
    if not samples_ms:
        raise EmptySamples()
    ordered = sorted(samples_ms)
    n = len(ordered)

    def rank(p: int) -> float:
        return ordered[(p * n + 99) // 100 - 1]

    # fsum then clamp: float rounding must not push the mean past the extremes
    mean = min(max(math.fsum(ordered) / n, ordered[0]), ordered[-1])
    return {
        "min": ordered[0],
        "mean": mean,
        "median": rank(50),
        "p90": rank(90),
        "p99": rank(99),
    }


class RssSampler:
    """Polls the child's process tree RSS while it runs; keeps the peak."""

    def __init__(self, interval: float = RSS_SAMPLE_INTERVAL):
        self.interval = interval
        self.peak: Optional[int] = None
        self.last_duration: Optional[float] = None
        self._thread: Optional[threading.Thread] = None

    def attach(self, proc) -> None:
        self._thread = threading.Thread(target=self._sample, args=(proc.pid,), daemon=True)
        self._thread.start()

    def detach(self, duration_s: float) -> None:
        self.last_duration = duration_s
        if self._thread is not None:
            self._thread.join(timeout=self.interval * 4)
            self._thread = None

    def _sample(self, pid: int) -> None:
        try:
            root = psutil.Process(pid)
        except psutil.Error:
            return
        while True:
            try:
                total = root.memory_info().rss
                for child in root.children(recursive=True):
                    try:
                        total += child.memory_info().rss
                    except psutil.Error:
                        pass
            except psutil.Error:
                return
            if self.peak is None or total > self.peak:
                self.peak = total
            if not root.is_running():
                return
            time.sleep(self.interval)


def host_platform_info() -> Dict[str, str]:
    info = {
        "os": platform_module.system().lower(),
        "arch": platform_module.machine().lower(),
    }
    cpu = _cpu_description()
    if cpu:
        info["cpu"] = cpu
    return info


def _cpu_description() -> Optional[str]:
    try:
        with open("/proc/cpuinfo") as handle:
            for line in handle:
                if line.lower().startswith("model name"):
                    return line.split(":", 1)[1].strip()
    except OSError:
        pass
    return platform_module.processor() or None


def benchmark(workdir: Path, config: Optional[BenchmarkConfig] = None) -> dict:
    """Run warmups (discarded) then measured repetitions; returns a result doc."""
    config = config or BenchmarkConfig()
    ws = Workspace(workdir)
    lockfile = ws.lockfile()

    for i in range(config.warmup):
        try:
            run_solution(workdir, config.input_values)
        except ReefError as exc:
            raise BenchmarkFailed(i, "warmup", exc) from exc

    sampler = RssSampler()
    samples_ms: List[float] = []
    total_items = 0
    accuracy = None
    for k in range(config.repetitions):
        try:
            output = run_solution(workdir, config.input_values, monitor=sampler)
        except ReefError as exc:
            raise BenchmarkFailed(k, "measure", exc) from exc
        samples_ms.append(sampler.last_duration * 1000.0)
        items = output.get("items_processed")
        if isinstance(items, (int, float)) and not isinstance(items, bool):
            total_items += items
        metrics = output.get("metrics", {})
        if isinstance(metrics, dict) and isinstance(metrics.get("accuracy"), (int, float)):
            accuracy = float(metrics["accuracy"])

    summary = {
        "latency_ms": summarize(samples_ms),
        "throughput": _throughput(total_items, samples_ms),
        "accuracy": accuracy,
        "peak_rss_bytes": sampler.peak,
    }
    record = {
        "solution": list(lockfile.solution),
        "lockfile_digest": lockfile.digest(),
        "platform": host_platform_info(),
        "summary": summary,
        "repetitions": config.repetitions,
        "timestamp": utc_stamp(),
    }
    if config.submitter:
        record["submitter"] = config.submitter
    return record


def _throughput(total_items: float, samples_ms: List[float]) -> float:
    total_seconds = sum(samples_ms) / 1000.0
    if total_seconds <= 0:
        return 0.0
    return total_items / total_seconds


def record_id(record: dict) -> str:
    return sha256_hex(canonical_json_bytes(record))


def write_result(record: dict, out_dir: Path) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / f"result-{record['timestamp']}-{record_id(record)[:12]}.json"
    path.write_bytes(canonical_json_bytes(record) + b"\n")
    return path
