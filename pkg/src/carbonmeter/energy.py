"""Integration of power samples into per-subsystem energy (kWh).

Zero-order-hold (left-rectangle) integration: each elapsed interval is charged
at the power level of the sample that OPENED it, matching the interpretation
that a poll reports the average load since the previous poll. For
piecewise-constant inputs whose breakpoints coincide with sample times this is
exact, which the tests exploit for tight assertions.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import NonMonotonicTimestamp
from .telemetry import PowerSample

_SECONDS_PER_HOUR = 3600.0
_WATTS_PER_KILOWATT = 1000.0


@dataclass
class EnergyLedger:
    """Running per-subsystem energy integrals for one session.

    Energy fields only ever grow. ``total_kwh`` is always derived, never
    stored. The first accumulated sample establishes the time origin and adds
    no energy.
    """

    cpu_kwh: float = 0.0
    gpu_kwh: float = 0.0
    ram_kwh: float = 0.0
    sample_count: int = 0
    _previous: PowerSample | None = field(default=None, repr=False)

    @property
    def last_timestamp_s(self) -> float:
        return self._previous.timestamp_s if self._previous is not None else 0.0

    @property
    def total_kwh(self) -> float:
        return self.cpu_kwh + self.gpu_kwh + self.ram_kwh

    def add(self, sample: PowerSample) -> "EnergyLedger":
        """Advance the ledger by one sample.

        The interval since the previous sample is charged at the previous
        sample's power. Raises :class:`NonMonotonicTimestamp` unless the new
        timestamp strictly exceeds the last one.
        """
        previous = self._previous
        if previous is not None:
            if sample.timestamp_s <= previous.timestamp_s:
                raise NonMonotonicTimestamp(
                    f"sample at t={sample.timestamp_s} does not advance past "
                    f"t={previous.timestamp_s}"
                )
            dt_hours = (sample.timestamp_s - previous.timestamp_s) / _SECONDS_PER_HOUR
            self.cpu_kwh += previous.cpu_watts * dt_hours / _WATTS_PER_KILOWATT
            self.gpu_kwh += previous.gpu_watts * dt_hours / _WATTS_PER_KILOWATT
            self.ram_kwh += previous.ram_watts * dt_hours / _WATTS_PER_KILOWATT
        self._previous = sample
        self.sample_count += 1
        return self

    def close(self, timestamp_s: float) -> "EnergyLedger":
        """Flush the open interval up to ``timestamp_s`` at the held power level.

        Used when no fresh reading is possible (the tracked process exited):
        the zero-order hold charges the tail interval at the last known draw.
        Timestamps at or before the last sample are ignored, so closing is
        safe to call unconditionally. An empty ledger gains a zero-power
        anchor, making the duration the only nonzero outcome.
        """
        previous = self._previous
        if previous is None:
            self._previous = PowerSample(
                timestamp_s=timestamp_s, cpu_watts=0.0, gpu_watts=0.0, ram_watts=0.0
            )
            self.sample_count += 1
            return self
        if timestamp_s <= previous.timestamp_s:
            return self
        return self.add(
            PowerSample(
                timestamp_s=timestamp_s,
                cpu_watts=previous.cpu_watts,
                gpu_watts=previous.gpu_watts,
                ram_watts=previous.ram_watts,
            )
        )

    def snapshot(self) -> "EnergyTotals":
        """Copy of the current totals, safe to hand to other threads."""
        return EnergyTotals(
            cpu_kwh=self.cpu_kwh,
            gpu_kwh=self.gpu_kwh,
            ram_kwh=self.ram_kwh,
            duration_s=self.last_timestamp_s,
        )


def accumulate(ledger: EnergyLedger, sample: PowerSample) -> EnergyLedger:
    """Functional alias for :meth:`EnergyLedger.add` (mutates and returns the ledger)."""
    return ledger.add(sample)


@dataclass(frozen=True)
class EnergyTotals:
    """Finalized per-subsystem energies for a stopped session."""

    cpu_kwh: float
    gpu_kwh: float
    ram_kwh: float
    duration_s: float

    @property
    def total_kwh(self) -> float:
        return self.cpu_kwh + self.gpu_kwh + self.ram_kwh


def finalize(ledger: EnergyLedger) -> EnergyTotals:
    """Close out a stopped session's ledger. An empty ledger yields all zeros."""
    return ledger.snapshot()
