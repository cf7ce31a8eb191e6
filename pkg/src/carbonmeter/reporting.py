"""Append-only emission report files, optional record encryption, and summaries.

The report is plain UTF-8 CSV with a fixed header. In encrypted mode every
FIELD of a row is individually encrypted with Fernet (AES-CBC + HMAC, so
tampering is detected, which is the point of the feature: results must be
authentic, not merely hidden) and the tokens are written where the plaintext
would be, keeping the file valid CSV with a plaintext header. The symmetric
key is derived from a passphrase with PBKDF2 and a random per-file salt stored
on a marker line right after the header. Plaintext and encrypted rows never
mix within one file.

The passphrase travels via the environment (:data:`PASSPHRASE_ENV_VAR`), never
a CLI flag: process listings leak flags.
"""

from __future__ import annotations

import base64
import csv
import io
import math
import os
import threading
from dataclasses import dataclass
from math import fsum

from cryptography.fernet import Fernet, InvalidToken
from cryptography.hazmat.primitives import hashes
from cryptography.hazmat.primitives.kdf.pbkdf2 import PBKDF2HMAC

from .errors import DecryptionError, EncryptionError, ReportParseError

try:
    import fcntl
except ImportError:  # pragma: no cover - non-POSIX hosts skip advisory locking
    fcntl = None  # type: ignore

PASSPHRASE_ENV_VAR = "CARBONMETER_PASSPHRASE"

REPORT_HEADER = (
    "project_name",
    "experiment_description",
    "start_time",
    "duration(s)",
    "power_consumption(kWh)",
    "CO2_emissions(kg)",
    "CPU_name",
    "GPU_name",
    "OS",
    "country",
)

_SALT_PREFIX = "#salt:"
_SALT_BYTES = 16
_KDF_ITERATIONS = 480_000

# PBKDF2 is deliberately slow; cache derived keys per (passphrase, salt) so a
# long run of appends to one file pays for the derivation once.
_key_cache: dict[tuple[bytes, bytes], bytes] = {}
_key_cache_lock = threading.Lock()


def passphrase_from_env() -> str | None:
    """The encryption passphrase, if the documented environment variable is set."""
    value = os.environ.get(PASSPHRASE_ENV_VAR)
    return value if value else None


def _derive_key(passphrase: str, salt: bytes) -> bytes:
    pw = passphrase.encode("utf-8")
    with _key_cache_lock:
        cached = _key_cache.get((pw, salt))
    if cached is not None:
        return cached
    kdf = PBKDF2HMAC(algorithm=hashes.SHA256(), length=32, salt=salt, iterations=_KDF_ITERATIONS)
    key = base64.urlsafe_b64encode(kdf.derive(pw))
    with _key_cache_lock:
        if len(_key_cache) > 64:
            _key_cache.clear()
        _key_cache[(pw, salt)] = key
    return key


def _format_number(value: float) -> str:
    """Locale-independent serialization: '.' decimal separator, 6 decimals."""
    return f"{value:.6f}"


def _parse_number(text: str, column: str, row: int) -> float:
    try:
        value = float(text)
    except ValueError as exc:
        raise ReportParseError(f"column {column!r}: not a number: {text!r}", row=row) from exc
    if not math.isfinite(value) or value < 0:
        raise ReportParseError(f"column {column!r}: must be finite and >= 0", row=row)
    return value


@dataclass(frozen=True)
class EmissionRecord:
    """One finished session's row in the emission report."""

    project_name: str
    experiment_description: str
    start_time: str
    duration_s: float
    power_kwh: float
    co2_kg: float
    cpu_name: str
    gpu_name: str
    os_name: str
    country: str

    def to_row(self) -> list[str]:
        return [
            self.project_name,
            self.experiment_description,
            self.start_time,
            _format_number(self.duration_s),
            _format_number(self.power_kwh),
            _format_number(self.co2_kg),
            self.cpu_name,
            self.gpu_name,
            self.os_name,
            self.country,
        ]

    @classmethod
    def from_row(cls, row: list[str], row_number: int) -> "EmissionRecord":
        if len(row) != len(REPORT_HEADER):
            raise ReportParseError(
                f"expected {len(REPORT_HEADER)} columns, got {len(row)}", row=row_number
            )
        return cls(
            project_name=row[0],
            experiment_description=row[1],
            start_time=row[2],
            duration_s=_parse_number(row[3], "duration(s)", row_number),
            power_kwh=_parse_number(row[4], "power_consumption(kWh)", row_number),
            co2_kg=_parse_number(row[5], "CO2_emissions(kg)", row_number),
            cpu_name=row[6],
            gpu_name=row[7],
            os_name=row[8],
            country=row[9],
        )


@dataclass(frozen=True)
class SummaryRow:
    """Column sums for one project, with optional cost at a kWh price."""

    project_name: str
    total_duration_s: float
    total_power_kwh: float
    total_co2_kg: float
    cost: float | None = None


class _LockedFile:
    """Advisory exclusive lock over a report file for the duration of one append."""

    def __init__(self, path):
        self._fh = open(path, "a+", newline="", encoding="utf-8")

    def __enter__(self):
        if fcntl is not None:
            fcntl.flock(self._fh.fileno(), fcntl.LOCK_EX)
        return self._fh

    def __exit__(self, *exc_info):
        try:
            self._fh.flush()
            if fcntl is not None:
                fcntl.flock(self._fh.fileno(), fcntl.LOCK_UN)
        finally:
            self._fh.close()


def _read_lines(fh) -> list[str]:
    fh.seek(0)
    return fh.read().splitlines()


def _parse_csv_line(line: str) -> list[str]:
    # a line that is only a fragment of a multi-line quoted record parses to
    # garbage or fails; callers treat both as "not the row I'm looking for"
    try:
        return next(csv.reader([line]))
    except (csv.Error, StopIteration):
        return []


def _salt_from_row(row: list[str]) -> bytes | None:
    if row and row[0].startswith(_SALT_PREFIX):
        try:
            return base64.urlsafe_b64decode(row[0][len(_SALT_PREFIX):])
        except (ValueError, TypeError):
            raise ReportParseError("malformed salt line", row=2)
    return None


def _csv_line(row: list[str]) -> str:
    buffer = io.StringIO()
    csv.writer(buffer, lineterminator="\n").writerow(row)
    return buffer.getvalue()


def append_record(path, record: EmissionRecord, passphrase: str | None = None) -> None:
    """Append one record, creating the file (and header) on first write.

    With a passphrase the row's field values are encrypted-then-encoded; the
    header stays plaintext. Appends are serialized per file via an advisory
    lock so concurrent sessions never interleave partial rows.
    """
    with _LockedFile(path) as fh:
        lines = _read_lines(fh)
        chunks: list[str] = []
        salt: bytes | None = None
        if not lines:
            chunks.append(_csv_line(list(REPORT_HEADER)))
            if passphrase is not None:
                salt = os.urandom(_SALT_BYTES)
                marker = _SALT_PREFIX + base64.urlsafe_b64encode(salt).decode("ascii")
                chunks.append(_csv_line([marker] + [""] * (len(REPORT_HEADER) - 1)))
        else:
            if _parse_csv_line(lines[0]) != list(REPORT_HEADER):
                raise ReportParseError("unexpected report header", row=1)
            salt = _salt_from_row(_parse_csv_line(lines[1])) if len(lines) > 1 else None
            if passphrase is not None and salt is None:
                raise EncryptionError(
                    f"{path}: refusing to append an encrypted row to a plaintext report"
                )
            if passphrase is None and salt is not None:
                raise EncryptionError(
                    f"{path}: refusing to append a plaintext row to an encrypted report"
                )
        row = record.to_row()
        if passphrase is not None:
            assert salt is not None
            fernet = Fernet(_derive_key(passphrase, salt))
            row = [fernet.encrypt(value.encode("utf-8")).decode("ascii") for value in row]
        chunks.append(_csv_line(row))
        fh.seek(0, io.SEEK_END)
        fh.write("".join(chunks))


def read_records(path, passphrase: str | None = None) -> list[EmissionRecord]:
    """Parse a report file back into records, decrypting when a passphrase is given.

    Reading an encrypted file without a passphrase (or with the wrong one)
    raises :class:`DecryptionError`; a passphrase supplied for a plaintext
    file is ignored.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != list(REPORT_HEADER):
        raise ReportParseError("unexpected report header", row=1)
    body = rows[1:]
    first_data_row = 2
    fernet: Fernet | None = None
    if body and body[0] and body[0][0].startswith(_SALT_PREFIX):
        salt = _salt_from_row(body[0])
        if passphrase is None:
            raise DecryptionError(f"{path}: report is encrypted; no passphrase provided")
        fernet = Fernet(_derive_key(passphrase, salt))
        body = body[1:]
        first_data_row = 3
    records = []
    for offset, row in enumerate(body):
        row_number = first_data_row + offset
        if not row:
            continue
        if fernet is not None:
            try:
                row = [fernet.decrypt(value.encode("ascii")).decode("utf-8") for value in row]
            except (InvalidToken, ValueError) as exc:
                raise DecryptionError(
                    f"{path}: row {row_number}: cannot decrypt (wrong key or tampered data)"
                ) from exc
        records.append(EmissionRecord.from_row(row, row_number))
    return records


def summary(
    path,
    kwh_price: float | None = None,
    passphrase: str | None = None,
) -> list[SummaryRow]:
    """Per-project column sums over a report, in first-seen project order.

    Totals are exact correctly-rounded float sums (math.fsum), so they do not
    depend on record order. With ``kwh_price`` the cost column is
    ``total_power_kwh * kwh_price``.
    """
    grouped: dict[str, list[EmissionRecord]] = {}
    for record in read_records(path, passphrase=passphrase):
        grouped.setdefault(record.project_name, []).append(record)
    rows = []
    for project, records in grouped.items():
        total_power = fsum(r.power_kwh for r in records)
        rows.append(
            SummaryRow(
                project_name=project,
                total_duration_s=fsum(r.duration_s for r in records),
                total_power_kwh=total_power,
                total_co2_kg=fsum(r.co2_kg for r in records),
                cost=total_power * kwh_price if kwh_price is not None else None,
            )
        )
    return rows
