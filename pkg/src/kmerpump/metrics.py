"""Internal instrumentation: accumulating timers, throughput counters,
and a speedup model.

Timers accumulate both elapsed real time and elapsed per-thread CPU
time, in nanoseconds, keyed by (name, thread).  The whole accumulator
can be disabled at construction, in which case every call is a cheap
no-op and pipeline output is unaffected.

The speedup model is the standard serial-fraction bound
S(N) = 1 / ((1 - P) + P / N); fitting inverts it from measured
(cores, speedup) observations.
"""
from __future__ import annotations

import json
import threading
import time
from dataclasses import dataclass, field

from scipy.optimize import minimize_scalar

KNOWN_COUNTERS = ("bytes_read", "reads_parsed", "reads_kept", "kmers_counted")


class InstrumentationError(RuntimeError):
    """Timer misuse (stop without start, nested start); totals stay intact."""


class _TimerSlot:
    __slots__ = ("real_ns", "cpu_ns", "running", "_real_at", "_cpu_at")

    def __init__(self):
        self.real_ns = 0
        self.cpu_ns = 0
        self.running = False
        self._real_at = 0
        self._cpu_at = 0


class MetricsAccumulator:
    """Per-thread timer and counter accumulators with a merge-on-report step."""

    def __init__(self, enabled: bool = True):
        self.enabled = enabled
        self._timers: dict[tuple[str, int], _TimerSlot] = {}
        self._counters: dict[str, int] = {name: 0 for name in KNOWN_COUNTERS}
        self._warnings: list[str] = []
        self._observations: list[tuple[int, float]] = []
        self._lock = threading.Lock()

    # -- timers ------------------------------------------------------------

    def _slot(self, name: str, thread_id: int) -> _TimerSlot:
        key = (name, thread_id)
        slot = self._timers.get(key)
        if slot is None:
            with self._lock:
                slot = self._timers.setdefault(key, _TimerSlot())
        return slot

    def start_timer(self, name: str, thread_id: int | None = None) -> None:
        if not self.enabled:
            return
        tid = threading.get_ident() if thread_id is None else thread_id
        slot = self._slot(name, tid)
        if slot.running:
            raise InstrumentationError(f"timer {name!r} already started in thread {tid}")
        slot.running = True
        slot._real_at = time.monotonic_ns()
        slot._cpu_at = time.thread_time_ns()

    def stop_timer(self, name: str, thread_id: int | None = None) -> tuple[int, int]:
        """Accumulate since the matching start; returns (real_ns, cpu_ns) totals."""
        if not self.enabled:
            return (0, 0)
        tid = threading.get_ident() if thread_id is None else thread_id
        slot = self._timers.get((name, tid))
        if slot is None or not slot.running:
            raise InstrumentationError(f"timer {name!r} stopped without start in thread {tid}")
        cpu_now = time.thread_time_ns()
        real_now = time.monotonic_ns()
        slot.real_ns += real_now - slot._real_at
        slot.cpu_ns += cpu_now - slot._cpu_at
        slot.running = False
        return (slot.real_ns, slot.cpu_ns)

    def timer_totals(self, name: str) -> tuple[int, int]:
        """(real_ns, cpu_ns) summed across threads for one timer name."""
        real = cpu = 0
        for (n, _), slot in list(self._timers.items()):
            if n == name:
                real += slot.real_ns
                cpu += slot.cpu_ns
        return real, cpu

    def wall_ns(self, name: str = "total") -> int:
        """Max elapsed real time across threads for a timer (0 if absent)."""
        return max((s.real_ns for (n, _), s in list(self._timers.items()) if n == name),
                   default=0)

    # -- counters ----------------------------------------------------------

    def add_counter(self, name: str, delta: int = 1) -> None:
        if not self.enabled:
            return
        if delta < 0:
            raise ValueError("counters are monotone; delta must be >= 0")
        with self._lock:
            self._counters[name] = self._counters.get(name, 0) + delta

    def counter(self, name: str) -> int:
        return self._counters.get(name, 0)

    def warn(self, message: str) -> None:
        if not self.enabled:
            return
        with self._lock:
            self._warnings.append(message)

    @property
    def warnings(self) -> list[str]:
        return list(self._warnings)

    def add_observation(self, cores: int, speedup: float) -> None:
        if not self.enabled:
            return
        with self._lock:
            self._observations.append((cores, speedup))

    # -- reporting ---------------------------------------------------------

    def snapshot(self) -> dict:
        """Merge per-thread state into one plain-dict view."""
        timers = []
        for (name, tid), slot in sorted(self._timers.items()):
            timers.append({"name": name, "thread": tid,
                           "real_ns": slot.real_ns, "cpu_ns": slot.cpu_ns})
        totals = {}
        for entry in timers:
            agg = totals.setdefault(entry["name"], {"real_ns": 0, "cpu_ns": 0, "threads": 0})
            agg["real_ns"] += entry["real_ns"]
            agg["cpu_ns"] += entry["cpu_ns"]
            agg["threads"] += 1
        wall = self.wall_ns("total")
        throughput = {}
        for counter, key in (("bytes_read", "bytes_per_s"),
                             ("reads_parsed", "reads_per_s"),
                             ("kmers_counted", "kmers_per_s")):
            value = self._counters.get(counter, 0)
            throughput[key] = value / (wall / 1e9) if wall > 0 else 0.0
        snap = {
            "counters": dict(self._counters),
            "timers": timers,
            "timer_totals": totals,
            "throughput": throughput,
            "warnings": list(self._warnings),
        }
        if self._observations:
            model = fit_parallel_fraction(self._observations)
            snap["speedup_fit"] = {
                "parallel_fraction": model.parallel_fraction,
                "observations": [{"cores": n, "speedup": s} for n, s in model.observations],
            }
        return snap


@dataclass
class SpeedupModel:
    """Serial-fraction speedup bound fitted to (cores, speedup) points."""

    parallel_fraction: float
    observations: list[tuple[int, float]] = field(default_factory=list)

    def predict(self, cores: int) -> float:
        p = self.parallel_fraction
        return 1.0 / ((1.0 - p) + p / cores)

    def residuals(self) -> list[float]:
        return [s - self.predict(n) for n, s in self.observations]


def fit_parallel_fraction(observations: list[tuple[int, float]]) -> SpeedupModel:
    """Fit the parallelizable fraction P from measured speedups.

    A single observation inverts the model exactly:
    P = (1 - 1/S) / (1 - 1/N).  Multiple observations are fitted by
    least squares over P in [0, 1].
    """
    if not observations:
        raise ValueError("at least one observation required")
    for n, s in observations:
        if n < 1:
            raise ValueError(f"core count must be >= 1, got {n}")
        if s < 1:
            raise ValueError(f"speedup must be >= 1, got {s}")
    usable = [(n, s) for n, s in observations if n >= 2]
    if not usable:
        raise ValueError("need at least one observation with 2 or more cores")
    if len(usable) == 1:
        n, s = usable[0]
        p = (1.0 - 1.0 / s) / (1.0 - 1.0 / n)
        return SpeedupModel(min(max(p, 0.0), 1.0), list(observations))

    def sse(p: float) -> float:
        return sum((s - 1.0 / ((1.0 - p) + p / n)) ** 2 for n, s in usable)

    result = minimize_scalar(sse, bounds=(0.0, 1.0), method="bounded",
                             options={"xatol": 1e-12})
    best = min((0.0, 1.0, float(result.x)), key=sse)
    return SpeedupModel(best, list(observations))


def render_report(acc: MetricsAccumulator, fmt: str = "text") -> str:
    """Render all counters, timers, throughputs, and the speedup fit.

    ``text`` is for eyes; ``jsonl`` emits one object per line with
    stable keys so the values round-trip exactly.
    """
    snap = acc.snapshot()
    if fmt == "jsonl":
        lines = [json.dumps({"record": "counters", **snap["counters"]}, sort_keys=True)]
        for entry in snap["timers"]:
            lines.append(json.dumps({"record": "timer", **entry}, sort_keys=True))
        for name, agg in sorted(snap["timer_totals"].items()):
            lines.append(json.dumps({"record": "timer_total", "name": name, **agg},
                                    sort_keys=True))
        lines.append(json.dumps({"record": "throughput", **snap["throughput"]},
                                sort_keys=True))
        for message in snap["warnings"]:
            lines.append(json.dumps({"record": "warning", "message": message}))
        if "speedup_fit" in snap:
            fit = snap["speedup_fit"]
            lines.append(json.dumps({"record": "speedup_fit",
                                     "parallel_fraction": fit["parallel_fraction"]},
                                    sort_keys=True))
        return "\n".join(lines) + "\n"
    if fmt != "text":
        raise ValueError(f"unknown report format {fmt!r}")
    lines = ["-- counters --"]
    for name, value in sorted(snap["counters"].items()):
        lines.append(f"{name:>16}: {value}")
    lines.append("-- timers (per thread) --")
    for entry in snap["timers"]:
        lines.append(f"{entry['name']:>16} [thread {entry['thread']}]: "
                     f"real {entry['real_ns'] / 1e9:.3f}s  cpu {entry['cpu_ns'] / 1e9:.3f}s")
    lines.append("-- timers (aggregate) --")
    for name, agg in sorted(snap["timer_totals"].items()):
        lines.append(f"{name:>16}: real {agg['real_ns'] / 1e9:.3f}s  "
                     f"cpu {agg['cpu_ns'] / 1e9:.3f}s  ({agg['threads']} threads)")
    lines.append("-- throughput --")
    for key, value in sorted(snap["throughput"].items()):
        lines.append(f"{key:>16}: {value:,.0f}")
    for message in snap["warnings"]:
        lines.append(f"warning: {message}")
    if "speedup_fit" in snap:
        lines.append(f"parallel fraction P = {snap['speedup_fit']['parallel_fraction']:.4f}")
    return "\n".join(lines) + "\n"
