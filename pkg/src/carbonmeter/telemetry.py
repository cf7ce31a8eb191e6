"""Instantaneous power readings for CPU, GPU, and RAM attributed to one process tree.

Providers turn raw OS/driver counters into three observation types which
``compose_sample`` folds into a single :class:`PowerSample`:

* CPU power is the processor's TDP scaled by the process tree's share of all
  cores, clamped to [0, 1].
* GPU power is the summed board power over all detected accelerator devices;
  with no devices (or no driver) it is zero.
* RAM power is a fixed wattage per allocated gigabyte (0.375 W/GB by default,
  the DDR3/DDR4 estimate), applied to the tree's resident set size.

A deterministic :class:`ReplayProvider` replays a recorded :class:`TraceSpec`
with step-function semantics, so whole pipelines can be verified offline.
"""

from __future__ import annotations

import csv
import logging
import math
import os
import platform
from bisect import bisect_right
from dataclasses import dataclass

from .errors import ProcessAccessDenied, ProcessGone, ReportParseError, TraceExhausted

try:  # pragma: no cover - optional accelerator driver
    import pynvml
except Exception:  # pragma: no cover - environments without the NVML wrapper
    pynvml = None  # type: ignore

import psutil

logger = logging.getLogger(__name__)

# Estimated draw of DDR3/DDR4 modules per allocated gigabyte. A configuration
# default, not a law: override via SessionConfig.ram_watts_per_gb.
RAM_WATTS_PER_GB = 0.375

_BYTES_PER_GB = 1024 ** 3

TRACE_HEADER = ("t_s", "cpu_percent", "core_count", "gpu_watts", "ram_gb")


def _require_finite(value: float, name: str) -> float:
    if not math.isfinite(value):
        raise ValueError(f"{name} must be finite, got {value!r}")
    return float(value)


def _require_non_negative(value: float, name: str) -> float:
    value = _require_finite(value, name)
    if value < 0:
        raise ValueError(f"{name} must be >= 0, got {value!r}")
    return value


@dataclass(frozen=True)
class PowerSample:
    """One timestamped reading of per-subsystem power draw, in watts."""

    timestamp_s: float
    cpu_watts: float
    gpu_watts: float
    ram_watts: float

    def __post_init__(self):
        _require_non_negative(self.timestamp_s, "timestamp_s")
        _require_non_negative(self.cpu_watts, "cpu_watts")
        _require_non_negative(self.gpu_watts, "gpu_watts")
        _require_non_negative(self.ram_watts, "ram_watts")

    @property
    def total_watts(self) -> float:
        return self.cpu_watts + self.gpu_watts + self.ram_watts


@dataclass(frozen=True)
class CpuObservation:
    """Process-tree CPU share plus the static facts needed to convert it to watts.

    ``process_cpu_percent`` is percent of one core, so it may exceed 100 on
    multi-core hosts.
    """

    process_cpu_percent: float
    core_count: int
    cpu_model_name: str = ""

    def __post_init__(self):
        _require_finite(self.process_cpu_percent, "process_cpu_percent")
        if self.core_count < 1:
            raise ValueError(f"core_count must be >= 1, got {self.core_count}")

    @property
    def utilization_fraction(self) -> float:
        """Share of the whole machine in [0, 1], clamped against bad readings."""
        fraction = self.process_cpu_percent / (100.0 * self.core_count)
        return min(max(fraction, 0.0), 1.0)


@dataclass(frozen=True)
class GpuObservation:
    """Summed board power over all detected accelerator devices."""

    device_count: int
    total_power_watts: float
    device_names: tuple[str, ...] = ()

    def __post_init__(self):
        if self.device_count < 0:
            raise ValueError(f"device_count must be >= 0, got {self.device_count}")
        _require_non_negative(self.total_power_watts, "total_power_watts")
        if self.device_count == 0 and self.total_power_watts != 0:
            raise ValueError("zero devices cannot draw power")

    @classmethod
    def absent(cls) -> "GpuObservation":
        return cls(device_count=0, total_power_watts=0.0)


@dataclass(frozen=True)
class RamObservation:
    """Gigabytes resident for the tracked process tree."""

    allocated_gb: float

    def __post_init__(self):
        _require_non_negative(self.allocated_gb, "allocated_gb")


def compose_sample(
    cpu_obs: CpuObservation,
    gpu_obs: GpuObservation,
    ram_obs: RamObservation,
    tdp_watts: float,
    timestamp_s: float,
    ram_watts_per_gb: float = RAM_WATTS_PER_GB,
) -> PowerSample:
    """Fold one round of observations into a single power sample.

    cpu_watts = tdp_watts * utilization fraction; ram_watts = watts/GB * GB.
    Both products are single multiplications, so they are bitwise reproducible
    for identical inputs.
    """
    if not (tdp_watts > 0) or not math.isfinite(tdp_watts):
        raise ValueError(f"tdp_watts must be > 0, got {tdp_watts!r}")
    return PowerSample(
        timestamp_s=timestamp_s,
        cpu_watts=tdp_watts * cpu_obs.utilization_fraction,
        gpu_watts=gpu_obs.total_power_watts,
        ram_watts=ram_watts_per_gb * ram_obs.allocated_gb,
    )


# --------------------------------------------------------------------------
# Replay traces
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class TraceRow:
    t_s: float
    cpu_percent: float
    core_count: int
    gpu_watts: float
    ram_gb: float


@dataclass(frozen=True)
class TraceSpec:
    """A recorded telemetry timeline for deterministic replay.

    Rows must start at t=0 and be strictly increasing in time. ``cpu_model``
    and ``gpu_names`` carry the hardware identity the trace pretends to be;
    they default to empty, which downstream resolves to the unmatched-CPU
    fallback and "no accelerator".
    """

    rows: tuple[TraceRow, ...]
    cpu_model: str = ""
    gpu_names: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "rows", tuple(self.rows))
        object.__setattr__(self, "gpu_names", tuple(self.gpu_names))
        if self.rows:
            if self.rows[0].t_s != 0.0:
                raise ValueError("trace must start at t=0")
            for prev, cur in zip(self.rows, self.rows[1:]):
                if cur.t_s <= prev.t_s:
                    raise ValueError(
                        f"trace timestamps must strictly increase "
                        f"({prev.t_s} then {cur.t_s})"
                    )

    @property
    def duration_s(self) -> float:
        return self.rows[-1].t_s if self.rows else 0.0

    @classmethod
    def from_csv(cls, path, cpu_model: str = "", gpu_names: tuple[str, ...] = ()) -> "TraceSpec":
        """Load a trace from CSV with header ``t_s,cpu_percent,core_count,gpu_watts,ram_gb``."""
        rows: list[TraceRow] = []
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None or tuple(h.strip() for h in header) != TRACE_HEADER:
                raise ReportParseError(
                    f"expected trace header {','.join(TRACE_HEADER)}", row=1
                )
            for lineno, raw in enumerate(reader, start=2):
                if not raw or (len(raw) == 1 and not raw[0].strip()):
                    continue
                if len(raw) != len(TRACE_HEADER):
                    raise ReportParseError(
                        f"expected {len(TRACE_HEADER)} columns, got {len(raw)}", row=lineno
                    )
                try:
                    rows.append(
                        TraceRow(
                            t_s=float(raw[0]),
                            cpu_percent=float(raw[1]),
                            core_count=int(raw[2]),
                            gpu_watts=float(raw[3]),
                            ram_gb=float(raw[4]),
                        )
                    )
                except ValueError as exc:
                    raise ReportParseError(str(exc), row=lineno) from exc
        try:
            return cls(rows=tuple(rows), cpu_model=cpu_model, gpu_names=gpu_names)
        except ValueError as exc:
            raise ReportParseError(str(exc)) from exc

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(TRACE_HEADER)
            for row in self.rows:
                writer.writerow(
                    [row.t_s, row.cpu_percent, row.core_count, row.gpu_watts, row.ram_gb]
                )


class TelemetryProvider:
    """Source of the three observation streams, polled with a session timestamp.

    Live providers ignore the timestamp and read the OS; the replay provider
    uses it to select a trace row. A provider instance is polled from a single
    sampler context and may be handed to that context at session start.
    """

    def sample_cpu(self, timestamp_s: float) -> CpuObservation:
        raise NotImplementedError

    def sample_gpu(self, timestamp_s: float) -> GpuObservation:
        raise NotImplementedError

    def sample_ram(self, timestamp_s: float) -> RamObservation:
        raise NotImplementedError

    def cpu_model_name(self) -> str:
        return ""

    def gpu_device_names(self) -> tuple[str, ...]:
        return ()


class ReplayProvider(TelemetryProvider):
    """Replays a :class:`TraceSpec` with step-function (zero-order-hold) semantics.

    A query at time t returns the trace row at or before t; querying past the
    last row raises :class:`TraceExhausted`. Identical traces always yield
    identical sample sequences.
    """

    def __init__(self, trace: TraceSpec):
        self.trace = trace
        self._timestamps = [row.t_s for row in trace.rows]

    def _row_at(self, timestamp_s: float) -> TraceRow:
        if not self.trace.rows:
            raise TraceExhausted("trace is empty")
        if timestamp_s > self._timestamps[-1]:
            raise TraceExhausted(
                f"t={timestamp_s} is past the last trace row at t={self._timestamps[-1]}"
            )
        index = bisect_right(self._timestamps, timestamp_s) - 1
        if index < 0:
            raise ValueError(f"t={timestamp_s} precedes the first trace row")
        return self.trace.rows[index]

    def sample_cpu(self, timestamp_s: float) -> CpuObservation:
        row = self._row_at(timestamp_s)
        return CpuObservation(
            process_cpu_percent=row.cpu_percent,
            core_count=row.core_count,
            cpu_model_name=self.trace.cpu_model,
        )

    def sample_gpu(self, timestamp_s: float) -> GpuObservation:
        row = self._row_at(timestamp_s)
        names = self.trace.gpu_names
        if names:
            count = len(names)
        else:
            count = 1 if row.gpu_watts > 0 else 0
        return GpuObservation(
            device_count=count, total_power_watts=row.gpu_watts, device_names=names
        )

    def sample_ram(self, timestamp_s: float) -> RamObservation:
        row = self._row_at(timestamp_s)
        return RamObservation(allocated_gb=row.ram_gb)

    def cpu_model_name(self) -> str:
        return self.trace.cpu_model

    def gpu_device_names(self) -> tuple[str, ...]:
        return self.trace.gpu_names


# --------------------------------------------------------------------------
# Live providers
# --------------------------------------------------------------------------

def detect_cpu_model() -> str:
    """Best-effort vendor model string for the host CPU."""
    try:
        with open("/proc/cpuinfo", encoding="utf-8") as fh:
            for line in fh:
                if line.lower().startswith("model name"):
                    return line.split(":", 1)[1].strip()
    except OSError:
        pass
    return platform.processor() or ""


class _NvmlGpu:
    """NVML wrapper that degrades to the zero observation on any failure.

    Per contract, absence of a driver or device never surfaces an error: GPU
    power is simply reported as zero.
    """

    def __init__(self):
        self._handles = []
        self._names: tuple[str, ...] = ()
        if pynvml is None:
            return
        try:
            pynvml.nvmlInit()
            count = pynvml.nvmlDeviceGetCount()
            names = []
            for index in range(count):
                handle = pynvml.nvmlDeviceGetHandleByIndex(index)
                self._handles.append(handle)
                name = pynvml.nvmlDeviceGetName(handle)
                names.append(name.decode() if isinstance(name, bytes) else str(name))
            self._names = tuple(names)
        except Exception:
            self._handles = []
            self._names = ()
            logger.debug("NVML unavailable; GPU power reported as zero", exc_info=True)

    @property
    def device_names(self) -> tuple[str, ...]:
        return self._names

    def sample(self) -> GpuObservation:
        if not self._handles:
            return GpuObservation.absent()
        total_mw = 0.0
        for handle in self._handles:
            try:
                total_mw += pynvml.nvmlDeviceGetPowerUsage(handle)
            except Exception:
                continue
        return GpuObservation(
            device_count=len(self._handles),
            total_power_watts=total_mw / 1000.0,
            device_names=self._names,
        )


class LiveProcessProvider(TelemetryProvider):
    """Samples the given process AND its descendants via psutil, plus NVML GPUs.

    CPU percent is the sum over the tree of per-process ``cpu_percent(None)``,
    i.e. the average load since the previous poll of each process object, so
    each tick reports the mean utilization over the elapsed interval. RAM is
    the tree's summed resident set size.
    """

    def __init__(self, pid: int | None = None):
        try:
            self._root = psutil.Process(os.getpid() if pid is None else pid)
        except psutil.NoSuchProcess as exc:
            raise ProcessGone(f"process {pid} does not exist") from exc
        self._tree: dict[int, psutil.Process] = {self._root.pid: self._root}
        self._core_count = os.cpu_count() or 1
        self._cpu_model = detect_cpu_model()
        self._gpu = _NvmlGpu()
        # priming call: psutil's first cpu_percent(None) per process returns 0.0
        self._root.cpu_percent(None)

    def _processes(self):
        try:
            children = self._root.children(recursive=True)
        except psutil.NoSuchProcess as exc:
            raise ProcessGone(f"process {self._root.pid} exited") from exc
        except psutil.AccessDenied as exc:
            raise ProcessAccessDenied(str(exc)) from exc
        tree = {self._root.pid: self._root}
        for child in children:
            tree[child.pid] = self._tree.get(child.pid, child)
        self._tree = tree
        return tree.values()

    def sample_cpu(self, timestamp_s: float) -> CpuObservation:
        total_percent = 0.0
        root_alive = False
        for proc in self._processes():
            try:
                total_percent += proc.cpu_percent(None)
                if proc.pid == self._root.pid:
                    root_alive = True
            except psutil.NoSuchProcess:
                continue
            except psutil.AccessDenied as exc:
                raise ProcessAccessDenied(str(exc)) from exc
        if not root_alive:
            raise ProcessGone(f"process {self._root.pid} exited")
        return CpuObservation(
            process_cpu_percent=total_percent,
            core_count=self._core_count,
            cpu_model_name=self._cpu_model,
        )

    def sample_gpu(self, timestamp_s: float) -> GpuObservation:
        return self._gpu.sample()

    def sample_ram(self, timestamp_s: float) -> RamObservation:
        total_rss = 0
        root_alive = False
        for proc in self._processes():
            try:
                total_rss += proc.memory_info().rss
                if proc.pid == self._root.pid:
                    root_alive = True
            except psutil.NoSuchProcess:
                continue
            except psutil.AccessDenied as exc:
                raise ProcessAccessDenied(str(exc)) from exc
        if not root_alive:
            raise ProcessGone(f"process {self._root.pid} exited")
        return RamObservation(allocated_gb=total_rss / _BYTES_PER_GB)

    def cpu_model_name(self) -> str:
        return self._cpu_model

    def gpu_device_names(self) -> tuple[str, ...]:
        return self._gpu.device_names
