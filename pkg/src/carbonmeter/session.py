"""Tracker session lifecycle: configure -> start -> stop, plus wrap() and replay().

A session owns one energy ledger and one background sampler. ``start`` resolves
the region and the CPU's TDP, anchors the monotonic clock, and begins polling
the telemetry provider; ``stop`` halts sampling, finalizes the integrals,
converts energy to CO2, and appends exactly one record to the report file.
``wrap`` frames an arbitrary callable with that lifecycle, writing the record
even when the workload fails. ``replay`` drives the identical pipeline over a
recorded trace with simulated time, which is the package's deterministic
verification path.
"""

from __future__ import annotations

import datetime as _dt
import logging
import os
import platform
import threading
import time
from collections import Counter
from dataclasses import dataclass
from typing import Callable, TypeVar

from . import cpudb, emissions, reporting, telemetry
from .energy import EnergyLedger, EnergyTotals, finalize
from .errors import (
    AlreadyRunning,
    InvalidConfig,
    NonMonotonicTimestamp,
    NotRunning,
    ProcessAccessDenied,
    ProcessGone,
)

logger = logging.getLogger(__name__)

T = TypeVar("T")

CIVIL_TIME_FORMAT = "%Y-%m-%d %H:%M:%S"

# Civil start time stamped onto replayed records; replay output must be
# bit-reproducible, so it cannot depend on the wall clock.
REPLAY_START_TIME = "1970-01-01 00:00:00"
REPLAY_OS_NAME = "replay"

# Shown in the report's country column when no regional coefficient resolved
# and the global-average intensity was used.
FALLBACK_COUNTRY_LABEL = "global"


@dataclass
class SessionConfig:
    """User-supplied metadata and knobs for one tracking session."""

    project_name: str = "default"
    experiment_description: str = ""
    pue: float = 1.0
    sampling_period_s: float = 1.0
    output_path: str = "emission.csv"
    encrypt: bool = False
    region_override: str | None = None
    cpu_tdp_override: float | None = None
    gamma_override: float | None = None
    ram_watts_per_gb: float = telemetry.RAM_WATTS_PER_GB

    def validate(self) -> None:
        if not self.pue >= 1.0:
            raise InvalidConfig(f"pue must be >= 1, got {self.pue!r}")
        if not self.sampling_period_s > 0:
            raise InvalidConfig(f"sampling_period_s must be > 0, got {self.sampling_period_s!r}")
        if self.cpu_tdp_override is not None and not self.cpu_tdp_override > 0:
            raise InvalidConfig(f"cpu_tdp_override must be > 0, got {self.cpu_tdp_override!r}")
        if self.gamma_override is not None and not self.gamma_override > 0:
            raise InvalidConfig(f"gamma_override must be > 0, got {self.gamma_override!r}")
        if self.ram_watts_per_gb < 0:
            raise InvalidConfig(f"ram_watts_per_gb must be >= 0, got {self.ram_watts_per_gb!r}")
        if not self.output_path:
            raise InvalidConfig("output_path must not be empty")


@dataclass(frozen=True)
class HardwareIdentity:
    cpu_name: str
    gpu_names: tuple[str, ...]
    os_name: str

    @property
    def gpu_label(self) -> str:
        if not self.gpu_names:
            return "n/a"
        counts = Counter(self.gpu_names)
        return "; ".join(f"{count} x {name}" for name, count in counts.items())


# Sentinel: "construct the default network resolver" vs None = "never look up".
_DEFAULT_RESOLVER = object()


class Session:
    """One tracking session; legal phase transitions are configured -> running -> stopped.

    The ledger mutates only while running, and only under the internal lock;
    :meth:`progress` hands out snapshot copies, safe from any thread.
    """

    def __init__(
        self,
        config: SessionConfig,
        provider: telemetry.TelemetryProvider | None = None,
        cpu_database: cpudb.CpuDatabase | None = None,
        emission_database: emissions.EmissionDatabase | None = None,
        geo_resolver=_DEFAULT_RESOLVER,
        autosample: bool = True,
        clock: Callable[[], float] = time.monotonic,
        civil_time: Callable[[], str] | None = None,
        os_name: str | None = None,
        write_record: bool = True,
    ):
        self.config = config
        self._provider = provider
        self._cpu_db = cpu_database
        self._emission_db = emission_database
        self._geo_resolver = geo_resolver
        self._autosample = autosample
        self._clock = clock
        self._civil_time = civil_time or (lambda: _dt.datetime.now().strftime(CIVIL_TIME_FORMAT))
        self._os_name = os_name
        self._write_record = write_record

        self.phase = "configured"
        self.ledger = EnergyLedger()
        self.resolved_region: emissions.ResolvedRegion | None = None
        self.hardware: HardwareIdentity | None = None
        self.energy_totals: EnergyTotals | None = None
        self.start_time: str | None = None
        self.tdp_watts: float | None = None
        self.process_exited = False

        self._lock = threading.Lock()
        self._stop_event = threading.Event()
        self._thread: threading.Thread | None = None
        self._origin = 0.0
        self._access_warned = False
        self._exit_noticed_s: float | None = None

    # -- lifecycle ----------------------------------------------------------

    def start(self) -> "Session":
        """Begin sampling. Raises :class:`AlreadyRunning` off the configured phase."""
        if self.phase != "configured":
            raise AlreadyRunning(f"cannot start a session in phase {self.phase!r}")
        self.config.validate()
        if self.config.encrypt and reporting.passphrase_from_env() is None:
            raise InvalidConfig(
                f"encrypt=True requires the {reporting.PASSPHRASE_ENV_VAR} "
                "environment variable"
            )

        if self._provider is None:
            self._provider = telemetry.LiveProcessProvider()
        if self._cpu_db is None:
            self._cpu_db = cpudb.default_database()
        if self._emission_db is None:
            self._emission_db = emissions.default_database()

        override = self.config.region_override or os.environ.get(emissions.COUNTRY_ENV_VAR)
        resolver = self._geo_resolver
        if resolver is _DEFAULT_RESOLVER:
            resolver = emissions.HttpCountryResolver()
        self.resolved_region = emissions.resolve_region(override, resolver)

        if self.config.cpu_tdp_override is not None:
            self.tdp_watts = float(self.config.cpu_tdp_override)
        else:
            self.tdp_watts, matched = self._cpu_db.lookup_tdp(self._provider.cpu_model_name())
            if not matched:
                logger.info(
                    "CPU model %r not in catalog; assuming %s W",
                    self._provider.cpu_model_name(),
                    self.tdp_watts,
                )

        self.hardware = HardwareIdentity(
            cpu_name=self._provider.cpu_model_name() or "unknown",
            gpu_names=self._provider.gpu_device_names(),
            os_name=self._os_name if self._os_name is not None else platform.platform(),
        )
        self.start_time = self._civil_time()
        self.ledger = EnergyLedger()
        self.energy_totals = None
        self.phase = "running"
        self._origin = self._clock()

        if self._autosample:
            try:
                self._ingest(0.0)
            except ProcessGone:
                self.process_exited = True
                self._exit_noticed_s = 0.0
            if not self.process_exited:
                self._stop_event.clear()
                self._thread = threading.Thread(
                    target=self._sampler_loop, name="carbonmeter-sampler", daemon=True
                )
                self._thread.start()
        return self

    def stop(self) -> reporting.EmissionRecord:
        """Halt sampling, finalize, convert to CO2, append and return the record."""
        if self.phase != "running":
            raise NotRunning(f"cannot stop a session in phase {self.phase!r}")
        if self._thread is not None:
            self._stop_event.set()
            self._thread.join()
            self._thread = None
        if self._autosample:
            now_s = self._clock() - self._origin
            if not self.process_exited:
                try:
                    self._ingest(now_s)
                except ProcessGone:
                    self.process_exited = True
                    self._exit_noticed_s = now_s
            if self.process_exited:
                # no reading is possible past the exit; charge the tail
                # interval at the last known draw so duration covers the
                # process's actual lifetime
                close_at = self._exit_noticed_s if self._exit_noticed_s is not None else now_s
                with self._lock:
                    self.ledger.close(close_at)

        with self._lock:
            totals = finalize(self.ledger)
        self.energy_totals = totals
        record = self._build_record(totals)
        if self._write_record:
            passphrase = reporting.passphrase_from_env() if self.config.encrypt else None
            reporting.append_record(self.config.output_path, record, passphrase=passphrase)
        self.phase = "stopped"
        return record

    def progress(self) -> EnergyTotals:
        """Live snapshot of the energy integrals; callable from any thread."""
        with self._lock:
            return self.ledger.snapshot()

    # -- sampling -----------------------------------------------------------

    def _sampler_loop(self) -> None:
        while not self._stop_event.wait(self.config.sampling_period_s):
            tick_s = self._clock() - self._origin
            try:
                self._ingest(tick_s)
            except ProcessGone:
                # tracked process exited: freeze the ledger and let stop()
                # write the partial record
                self.process_exited = True
                if self._exit_noticed_s is None:
                    self._exit_noticed_s = tick_s
                return

    def _ingest(self, timestamp_s: float) -> None:
        """Sample the provider at the given session time and advance the ledger."""
        assert self._provider is not None and self.tdp_watts is not None
        try:
            cpu_obs = self._provider.sample_cpu(timestamp_s)
            gpu_obs = self._provider.sample_gpu(timestamp_s)
            ram_obs = self._provider.sample_ram(timestamp_s)
        except ProcessAccessDenied:
            # unknown power over this interval; zero-order hold carries the
            # previous level, which beats crashing the workload
            if not self._access_warned:
                logger.warning("cannot read process stats; skipping sample")
                self._access_warned = True
            return
        sample = telemetry.compose_sample(
            cpu_obs,
            gpu_obs,
            ram_obs,
            tdp_watts=self.tdp_watts,
            timestamp_s=timestamp_s,
            ram_watts_per_gb=self.config.ram_watts_per_gb,
        )
        with self._lock:
            try:
                self.ledger.add(sample)
            except NonMonotonicTimestamp:
                # coarse clocks can repeat a reading; drop it
                pass

    # -- record assembly ----------------------------------------------------

    def _gamma(self) -> float:
        if self.config.gamma_override is not None:
            return float(self.config.gamma_override)
        assert self._emission_db is not None and self.resolved_region is not None
        return self._emission_db.lookup_gamma(self.resolved_region)

    def _country_label(self) -> str:
        """The country column mirrors the coefficient actually used."""
        assert self.resolved_region is not None and self._emission_db is not None
        row = self._emission_db.find(self.resolved_region)
        if row is not None:
            if row.region_name:
                return f"{row.country_name}/{row.region_name}"
            return row.country_name
        return self.resolved_region.iso_a2 or FALLBACK_COUNTRY_LABEL

    def _build_record(self, totals: EnergyTotals) -> reporting.EmissionRecord:
        assert self.hardware is not None and self.start_time is not None
        co2_kg = emissions.carbon_footprint(totals, self._gamma(), self.config.pue)
        return reporting.EmissionRecord(
            project_name=self.config.project_name,
            experiment_description=self.config.experiment_description,
            start_time=self.start_time,
            duration_s=totals.duration_s,
            power_kwh=totals.total_kwh,
            co2_kg=co2_kg,
            cpu_name=self.hardware.cpu_name,
            gpu_name=self.hardware.gpu_label,
            os_name=self.hardware.os_name,
            country=self._country_label(),
        )


def wrap(config: SessionConfig, workload: Callable[[], T], **session_kwargs) -> T:
    """Run a callable inside a session: start, run, stop.

    The record is written even if the workload raises; the failure is
    re-raised after finalization (energy was spent either way).
    """
    session = Session(config, **session_kwargs)
    session.start()
    try:
        return workload()
    finally:
        session.stop()


def replay(
    config: SessionConfig,
    trace: telemetry.TraceSpec,
    cpu_database: cpudb.CpuDatabase | None = None,
    emission_database: emissions.EmissionDatabase | None = None,
    write: bool = False,
) -> reporting.EmissionRecord:
    """Run the full pipeline over a recorded trace with simulated time.

    The trace's own timestamps drive the ledger (no sleeping), the civil start
    time and OS name are pinned, and no network lookup happens, so the
    resulting record is bit-reproducible across runs and platforms. The record
    is appended to ``config.output_path`` only when ``write`` is set.
    """
    session = Session(
        config,
        provider=telemetry.ReplayProvider(trace),
        cpu_database=cpu_database,
        emission_database=emission_database,
        geo_resolver=None,
        autosample=False,
        civil_time=lambda: REPLAY_START_TIME,
        os_name=REPLAY_OS_NAME,
        write_record=write,
    )
    session.start()
    for row in trace.rows:
        session._ingest(row.t_s)
    return session.stop()
