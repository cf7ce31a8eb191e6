"""Exception types shared across the package."""


class CarbonMeterError(Exception):
    """Base class for all carbonmeter errors."""


class ProcessGone(CarbonMeterError):
    """The tracked process exited; the session should finalize."""


class ProcessAccessDenied(CarbonMeterError):
    """The tracker may not read the tracked process's statistics."""


class TraceExhausted(CarbonMeterError):
    """A replay trace was queried past its last row."""


class NonMonotonicTimestamp(CarbonMeterError, ValueError):
    """A power sample arrived at or before the ledger's last timestamp."""


class InvalidPue(CarbonMeterError, ValueError):
    """PUE below 1 is physically meaningless (facility overhead >= 0)."""


class InvalidConfig(CarbonMeterError, ValueError):
    """A session configuration field violates its constraints."""


class AlreadyRunning(CarbonMeterError):
    """start() called on a session that is not in the configured phase."""


class NotRunning(CarbonMeterError):
    """stop() called on a session that is not running."""


class ReportError(CarbonMeterError):
    """Base class for emission report file errors."""


class ReportParseError(ReportError):
    """A report or trace file row could not be parsed."""

    def __init__(self, message: str, row: int | None = None):
        self.row = row
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)


class EncryptionError(ReportError):
    """Record encryption failed or encryption modes were mixed in one file."""


class DecryptionError(ReportError):
    """A report row could not be decrypted (missing or wrong key, tampering)."""


class SpawnError(CarbonMeterError):
    """The tracked command could not be spawned."""
