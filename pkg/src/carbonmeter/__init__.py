"""Process-attributed energy and equivalent-CO2 tracking.

The package follows one pipeline: telemetry samples (CPU load, GPU power,
RAM residency) are composed into power draws, integrated into per-subsystem
energy, converted to a carbon footprint through a regional emission
intensity, and appended to a CSV report that downstream tools can summarize.
"""

from .emissions import GLOBAL_AVERAGE_GAMMA_KG_PER_MWH, carbon_footprint
from .energy import EnergyLedger, EnergyTotals
from .errors import CarbonMeterError
from .reporting import (
    PASSPHRASE_ENV_VAR,
    EmissionRecord,
    append_record,
    passphrase_from_env,
    read_records,
    summary,
)
from .session import Session, SessionConfig, replay, wrap
from .telemetry import PowerSample, ReplayProvider, TraceRow, TraceSpec

__version__ = "0.1.0"

__all__ = [
    "CarbonMeterError",
    "EmissionRecord",
    "EnergyLedger",
    "EnergyTotals",
    "GLOBAL_AVERAGE_GAMMA_KG_PER_MWH",
    "PASSPHRASE_ENV_VAR",
    "PowerSample",
    "ReplayProvider",
    "Session",
    "SessionConfig",
    "TraceRow",
    "TraceSpec",
    "append_record",
    "carbon_footprint",
    "passphrase_from_env",
    "read_records",
    "replay",
    "summary",
    "wrap",
    "__version__",
]
