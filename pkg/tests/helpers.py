"""Shared builders and stubs for the test suite."""

from __future__ import annotations

import itertools

from carbonmeter import reporting, telemetry


def trace(points, cpu_model: str = "", gpu_names: tuple[str, ...] = ()) -> telemetry.TraceSpec:
    """Build a TraceSpec from (t_s, cpu_percent, core_count, gpu_watts, ram_gb) tuples."""
    rows = tuple(telemetry.TraceRow(*point) for point in points)
    return telemetry.TraceSpec(rows=rows, cpu_model=cpu_model, gpu_names=gpu_names)


def constant_trace(
    duration_s: float,
    cpu_percent: float = 0.0,
    core_count: int = 1,
    gpu_watts: float = 0.0,
    ram_gb: float = 0.0,
    step_s: float = 3600.0,
    cpu_model: str = "",
    gpu_names: tuple[str, ...] = (),
) -> telemetry.TraceSpec:
    """A constant-load trace sampled every ``step_s`` from 0 through ``duration_s``."""
    times = list(itertools.takewhile(lambda t: t < duration_s, itertools.count(0.0, step_s)))
    times.append(float(duration_s))
    return trace(
        [(t, cpu_percent, core_count, gpu_watts, ram_gb) for t in times],
        cpu_model=cpu_model,
        gpu_names=gpu_names,
    )


class ManualClock:
    """A monotonic clock the test advances by hand."""

    def __init__(self, now: float = 0.0):
        self.now = now

    def __call__(self) -> float:
        return self.now

    def advance(self, seconds: float) -> None:
        self.now += seconds


class StubProvider(telemetry.TelemetryProvider):
    """Fixed observations, optionally dying at a set session timestamp."""

    def __init__(
        self,
        cpu_percent: float = 100.0,
        core_count: int = 4,
        gpu_watts: float = 0.0,
        ram_gb: float = 0.0,
        cpu_model: str = "stub cpu",
        gpu_names: tuple[str, ...] = (),
        die_at_t: float | None = None,
    ):
        self.cpu_percent = cpu_percent
        self.core_count = core_count
        self.gpu_watts = gpu_watts
        self.ram_gb = ram_gb
        self.cpu_model = cpu_model
        self.gpu_names = gpu_names
        self.die_at_t = die_at_t
        self.cpu_samples = 0

    def sample_cpu(self, timestamp_s):
        from carbonmeter.errors import ProcessGone

        if self.die_at_t is not None and timestamp_s >= self.die_at_t:
            raise ProcessGone("stub process exited")
        self.cpu_samples += 1
        return telemetry.CpuObservation(
            process_cpu_percent=self.cpu_percent,
            core_count=self.core_count,
            cpu_model_name=self.cpu_model,
        )

    def sample_gpu(self, timestamp_s):
        if not self.gpu_names and self.gpu_watts == 0:
            return telemetry.GpuObservation.absent()
        count = len(self.gpu_names) or 1
        return telemetry.GpuObservation(
            device_count=count,
            total_power_watts=self.gpu_watts,
            device_names=self.gpu_names,
        )

    def sample_ram(self, timestamp_s):
        return telemetry.RamObservation(allocated_gb=self.ram_gb)

    def cpu_model_name(self) -> str:
        return self.cpu_model

    def gpu_device_names(self) -> tuple[str, ...]:
        return self.gpu_names


class StubResolver:
    """Geolocation stub returning a canned country code (or None)."""

    def __init__(self, code: str | None):
        self.code = code
        self.calls = 0

    def resolve(self) -> str | None:
        self.calls += 1
        return self.code


def quantize(value: float) -> float:
    """Round to the report file's 6-decimal serialization so round trips are exact."""
    return float(f"{value:.6f}")


def make_record(
    project: str = "proj",
    description: str = "desc",
    start_time: str = "2024-01-02 03:04:05",
    duration_s: float = 12.0,
    power_kwh: float = 0.5,
    co2_kg: float = 0.25,
    cpu_name: str = "stub cpu",
    gpu_name: str = "n/a",
    os_name: str = "testos",
    country: str = "France",
) -> reporting.EmissionRecord:
    return reporting.EmissionRecord(
        project_name=project,
        experiment_description=description,
        start_time=start_time,
        duration_s=quantize(duration_s),
        power_kwh=quantize(power_kwh),
        co2_kg=quantize(co2_kg),
        cpu_name=cpu_name,
        gpu_name=gpu_name,
        os_name=os_name,
        country=country,
    )
