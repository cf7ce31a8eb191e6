"""TDP lookup for processor model strings.

OS-reported model names rarely match a catalog verbatim ("Intel(R) Xeon(R)
Gold 6248 CPU @ 2.50GHz" vs "Intel Xeon Gold 6248 CPU"), so lookups normalize
both sides and fall back to token-overlap matching. An unmatched CPU resolves
to a flat 100 W rather than failing: a wrong confident match would silently
corrupt every downstream number, so the overlap threshold is deliberately
strict.
"""

from __future__ import annotations

import csv
import math
import re
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources

# Total fallback when no catalog entry matches.
FALLBACK_TDP_WATTS = 100.0

# Minimum token-overlap score for a fuzzy match; below it the fallback wins.
FUZZY_MATCH_THRESHOLD = 0.8

_TRADEMARK_GLYPHS = re.compile(r"\(r\)|\(tm\)|\(c\)|®|™|©")
_CLOCK_SUFFIX = re.compile(r"@\s*\d+(?:\.\d+)?\s*[gm]hz")
_WHITESPACE = re.compile(r"\s+")


def normalize_model(raw_name: str) -> str:
    """Canonical form of a vendor model string.

    Lowercases, drops trademark glyphs, strips "@ 2.50GHz"-style clock
    suffixes, and collapses whitespace. Idempotent.
    """
    name = raw_name.lower()
    name = _TRADEMARK_GLYPHS.sub("", name)
    name = _CLOCK_SUFFIX.sub("", name)
    return _WHITESPACE.sub(" ", name).strip()


@dataclass(frozen=True)
class CpuSpec:
    model_name: str
    tdp_watts: float


def _token_overlap(left: set[str], right: set[str]) -> float:
    if not left or not right:
        return 0.0
    return len(left & right) / max(len(left), len(right))


class CpuDatabase:
    """Read-only model -> TDP table; safe for unrestricted concurrent lookups."""

    def __init__(self, specs: list[CpuSpec]):
        self._by_name: dict[str, CpuSpec] = {}
        for spec in specs:
            key = normalize_model(spec.model_name)
            if not key:
                raise ValueError("empty model name in CPU database")
            if key in self._by_name:
                raise ValueError(f"duplicate CPU model after normalization: {key!r}")
            if not math.isfinite(spec.tdp_watts) or spec.tdp_watts <= 0:
                raise ValueError(f"non-positive TDP for {spec.model_name!r}: {spec.tdp_watts}")
            self._by_name[key] = CpuSpec(model_name=key, tdp_watts=float(spec.tdp_watts))
        self._tokens = {key: set(key.split()) for key in self._by_name}

    def __len__(self) -> int:
        return len(self._by_name)

    @classmethod
    def from_csv(cls, path) -> "CpuDatabase":
        """Load a ``model,tdp_watts`` CSV (UTF-8)."""
        with open(path, newline="", encoding="utf-8") as fh:
            return cls._from_reader(csv.reader(fh))

    @classmethod
    def _from_reader(cls, reader) -> "CpuDatabase":
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["model", "tdp_watts"]:
            raise ValueError("expected CSV header 'model,tdp_watts'")
        specs = []
        for raw in reader:
            if not raw or (len(raw) == 1 and not raw[0].strip()):
                continue
            if len(raw) != 2:
                raise ValueError(f"expected 2 columns, got {raw!r}")
            specs.append(CpuSpec(model_name=raw[0], tdp_watts=float(raw[1])))
        return cls(specs)

    def lookup_tdp(self, raw_name: str) -> tuple[float, bool]:
        """TDP in watts for a model string, and whether the catalog matched.

        Exact normalized match first; otherwise the best token-overlap
        candidate at or above the threshold; otherwise ``(100.0, False)``.
        Never fails and never returns a non-positive wattage.
        """
        key = normalize_model(raw_name)
        spec = self._by_name.get(key)
        if spec is not None:
            return spec.tdp_watts, True
        query_tokens = set(key.split())
        best_score = 0.0
        best_key: str | None = None
        for candidate, tokens in self._tokens.items():
            score = _token_overlap(query_tokens, tokens)
            if score > best_score or (score == best_score and best_key is not None and candidate < best_key):
                best_score = score
                best_key = candidate
        if best_key is not None and best_score >= FUZZY_MATCH_THRESHOLD:
            return self._by_name[best_key].tdp_watts, True
        return FALLBACK_TDP_WATTS, False


@lru_cache(maxsize=1)
def default_database() -> CpuDatabase:
    """The catalog shipped with the package (seeded from public vendor TDP listings)."""
    text = resources.files("carbonmeter.data").joinpath("cpu_tdp.csv").read_text("utf-8")
    return CpuDatabase._from_reader(csv.reader(text.splitlines()))


def lookup_tdp(raw_name: str, database: CpuDatabase | None = None) -> tuple[float, bool]:
    """Module-level convenience over :meth:`CpuDatabase.lookup_tdp`."""
    return (database or default_database()).lookup_tdp(raw_name)
