"""Regional emission-intensity lookup and the energy -> CO2 conversion.

Emission intensity is stored in kg CO2 per MWh (the database convention) while
the footprint formula consumes kg per kWh; the /1000 unit bridge lives in
exactly one place, :func:`carbon_footprint`. Every lookup is total: region
match, then country match, then the global-average coefficient.
"""

from __future__ import annotations

import csv
import logging
import math
import urllib.request
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources

from .energy import EnergyTotals
from .errors import InvalidPue

logger = logging.getLogger(__name__)

# Global average intensity, used whenever no regional coefficient resolves.
GLOBAL_AVERAGE_GAMMA_KG_PER_MWH = 436.5

# ISO-Alpha-2 country override honored by sessions before any network lookup.
COUNTRY_ENV_VAR = "CARBONMETER_COUNTRY"

EMISSION_DB_HEADER = ("country_name", "iso_a2", "iso_a3", "un_m49", "region_name", "kg_per_mwh")


@dataclass(frozen=True)
class EmissionCoefficient:
    """One region's identity codes plus its intensity in kg CO2 per MWh."""

    country_name: str
    iso_a2: str
    iso_a3: str
    un_m49: int
    region_name: str | None
    gamma_kg_per_mwh: float


@dataclass(frozen=True)
class ResolvedRegion:
    """Where the session decided it is running, and how it found out."""

    iso_a2: str | None
    region_name: str | None = None
    source: str = "fallback"  # override | network-lookup | fallback

    @classmethod
    def fallback(cls) -> "ResolvedRegion":
        return cls(iso_a2=None, region_name=None, source="fallback")


class GeoResolver:
    """Minimal interface for an external country lookup client."""

    def resolve(self) -> str | None:
        """ISO-Alpha-2 code of the current facility, or None on any failure."""
        raise NotImplementedError


class HttpCountryResolver(GeoResolver):
    """Resolves the facility country from the public IP, at most once per session.

    Any failure (no network, timeout, garbage response) yields None so that a
    session silently falls back to the global-average coefficient; a tracker
    must never crash or stall the workload it is measuring.
    """

    def __init__(self, url: str = "https://ipinfo.io/country", timeout_s: float = 3.0):
        self.url = url
        self.timeout_s = timeout_s

    def resolve(self) -> str | None:
        try:
            with urllib.request.urlopen(self.url, timeout=self.timeout_s) as response:
                code = response.read(16).decode("utf-8", "replace").strip().upper()
        except Exception:
            logger.debug("country lookup failed; using global-average intensity", exc_info=True)
            return None
        if len(code) == 2 and code.isalpha():
            return code
        return None


def resolve_region(
    config_override: str | None = None,
    resolver: GeoResolver | None = None,
) -> ResolvedRegion:
    """Decide the session's region: override wins, then one external lookup, then fallback.

    An override of the form ``"CC"`` selects a country; ``"CC/Region Name"``
    additionally selects a sub-national region.
    """
    if config_override:
        country, _, region = config_override.partition("/")
        return ResolvedRegion(
            iso_a2=country.strip().upper(),
            region_name=region.strip() or None,
            source="override",
        )
    if resolver is not None:
        code = resolver.resolve()
        if code:
            return ResolvedRegion(iso_a2=code.upper(), region_name=None, source="network-lookup")
    return ResolvedRegion.fallback()


class EmissionDatabase:
    """Read-only (country, region) -> coefficient table."""

    def __init__(self, coefficients: list[EmissionCoefficient]):
        self._by_key: dict[tuple[str, str | None], EmissionCoefficient] = {}
        for coeff in coefficients:
            if not math.isfinite(coeff.gamma_kg_per_mwh) or coeff.gamma_kg_per_mwh <= 0:
                raise ValueError(
                    f"non-positive intensity for {coeff.iso_a2!r}: {coeff.gamma_kg_per_mwh}"
                )
            key = (coeff.iso_a2.upper(), coeff.region_name.lower() if coeff.region_name else None)
            if key in self._by_key:
                raise ValueError(f"duplicate emission database key: {key!r}")
            self._by_key[key] = coeff

    def __len__(self) -> int:
        return len(self._by_key)

    @classmethod
    def from_csv(cls, path) -> "EmissionDatabase":
        with open(path, newline="", encoding="utf-8") as fh:
            return cls._from_reader(csv.reader(fh))

    @classmethod
    def _from_reader(cls, reader) -> "EmissionDatabase":
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != EMISSION_DB_HEADER:
            raise ValueError(f"expected CSV header {','.join(EMISSION_DB_HEADER)}")
        coefficients = []
        for raw in reader:
            if not raw or (len(raw) == 1 and not raw[0].strip()):
                continue
            if len(raw) != len(EMISSION_DB_HEADER):
                raise ValueError(f"expected {len(EMISSION_DB_HEADER)} columns, got {raw!r}")
            coefficients.append(
                EmissionCoefficient(
                    country_name=raw[0].strip(),
                    iso_a2=raw[1].strip().upper(),
                    iso_a3=raw[2].strip().upper(),
                    un_m49=int(raw[3]),
                    region_name=raw[4].strip() or None,
                    gamma_kg_per_mwh=float(raw[5]),
                )
            )
        return cls(coefficients)

    def find(self, region: ResolvedRegion) -> EmissionCoefficient | None:
        """Best row for a resolved region: exact (country, region), else country-level."""
        if region.iso_a2 is None:
            return None
        country = region.iso_a2.upper()
        if region.region_name:
            row = self._by_key.get((country, region.region_name.lower()))
            if row is not None:
                return row
        return self._by_key.get((country, None))

    def lookup_gamma(self, region: ResolvedRegion) -> float:
        """Intensity in kg/MWh for a region; the global average if nothing matches."""
        row = self.find(region)
        if row is not None:
            return row.gamma_kg_per_mwh
        return GLOBAL_AVERAGE_GAMMA_KG_PER_MWH


@lru_cache(maxsize=1)
def default_database() -> EmissionDatabase:
    """The intensity table shipped with the package."""
    text = resources.files("carbonmeter.data").joinpath("emission_intensity.csv").read_text("utf-8")
    return EmissionDatabase._from_reader(csv.reader(text.splitlines()))


def lookup_gamma(region: ResolvedRegion, database: EmissionDatabase | None = None) -> float:
    return (database or default_database()).lookup_gamma(region)


def carbon_footprint(totals: EnergyTotals, gamma_kg_per_mwh: float, pue: float = 1.0) -> float:
    """Equivalent CO2 in kg for a session's energy totals.

    co2_kg = (gamma_kg_per_mwh / 1000) * pue * total_kwh. This is the single
    point where kg/MWh becomes kg/kWh.
    """
    if not math.isfinite(pue) or pue < 1.0:
        raise InvalidPue(f"pue must be >= 1, got {pue!r}")
    if not math.isfinite(gamma_kg_per_mwh) or gamma_kg_per_mwh <= 0:
        raise ValueError(f"gamma_kg_per_mwh must be > 0, got {gamma_kg_per_mwh!r}")
    return (gamma_kg_per_mwh / 1000.0) * pue * totals.total_kwh
