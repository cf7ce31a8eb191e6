"""In-process tracking API over carbonmeter.

Three entry points, all thin adapters over the carbonmeter package so every
number observable here is the primary pipeline's own output:

- :class:`Tracker`: an object with ``start()``/``stop()`` framing one
  tracked session per start/stop pair.
- :func:`track`: a decorator writing one emission record per call of the
  decorated function, including calls that raise.
- :func:`summary`: per-project totals of a report as a pandas DataFrame.

:func:`replay` additionally exposes the deterministic trace pipeline, so
results produced through this package can be checked bit-for-bit against
the ``carbonmeter replay`` command line.
"""

import functools

import pandas as pd

from carbonmeter import (
    PASSPHRASE_ENV_VAR,
    CarbonMeterError,
    EmissionRecord,
    Session,
    SessionConfig,
    TraceSpec,
    passphrase_from_env,
)
from carbonmeter import replay as _replay_pipeline
from carbonmeter import summary as _summary_rows

__version__ = "0.1.0"

__all__ = ["CarbonMeterError", "Tracker", "replay", "summary", "track", "__version__"]


def _build_config(
    project_name: str = "default",
    experiment_description: str = "",
    file_name: str = "emission.csv",
    encode: bool = False,
    pue: float = 1.0,
    country: str | None = None,
    sampling_period: float = 1.0,
    cpu_tdp_override: float | None = None,
    gamma_override: float | None = None,
) -> SessionConfig:
    return SessionConfig(
        project_name=project_name,
        experiment_description=experiment_description,
        output_path=file_name,
        encrypt=encode,
        pue=pue,
        region_override=country,
        sampling_period_s=sampling_period,
        cpu_tdp_override=cpu_tdp_override,
        gamma_override=gamma_override,
    )


class Tracker:
    """Frames tracked sessions: ``start()`` begins sampling, ``stop()`` writes one record.

    One record is appended to ``file_name`` per completed start/stop pair;
    the tracker itself is reusable. With ``encode=True`` the record's value
    fields are encrypted using the passphrase from the ``CARBONMETER_PASSPHRASE``
    environment variable.
    """

    def __init__(
        self,
        project_name: str = "default",
        experiment_description: str = "",
        file_name: str = "emission.csv",
        encode: bool = False,
        pue: float = 1.0,
        country: str | None = None,
        sampling_period: float = 1.0,
        cpu_tdp_override: float | None = None,
        gamma_override: float | None = None,
    ):
        self._config = _build_config(
            project_name=project_name,
            experiment_description=experiment_description,
            file_name=file_name,
            encode=encode,
            pue=pue,
            country=country,
            sampling_period=sampling_period,
            cpu_tdp_override=cpu_tdp_override,
            gamma_override=gamma_override,
        )
        self._session: Session | None = None
        self.latest_record: EmissionRecord | None = None

    def start(self) -> None:
        if self._session is not None and self._session.phase == "running":
            raise RuntimeError("tracker is already running")
        session = Session(self._config)
        session.start()
        self._session = session

    def stop(self) -> EmissionRecord:
        if self._session is None or self._session.phase != "running":
            raise RuntimeError("tracker is not running; nothing to stop")
        record = self._session.stop()
        self.latest_record = record
        return record


def track(workload=None, /, **tracker_kwargs):
    """Decorator writing one emission record per invocation of the function.

    Usable bare (``@track``) or with Tracker keyword arguments
    (``@track(project_name=...)``). The record is written even when the
    function raises; the exception is then re-raised. The project name
    defaults to the function's name.
    """

    def decorate(func):
        @functools.wraps(func)
        def wrapper(*args, **kwargs):
            options = dict(tracker_kwargs)
            options.setdefault("project_name", func.__name__)
            tracker = Tracker(**options)
            tracker.start()
            try:
                return func(*args, **kwargs)
            finally:
                tracker.stop()

        return wrapper

    if workload is None:
        return decorate
    return decorate(workload)


def summary(
    file_name: str = "emission.csv",
    kwh_price: float | None = None,
    decrypt: bool = False,
) -> pd.DataFrame:
    """Per-project totals of a report file as a DataFrame, in first-seen order.

    With ``kwh_price`` a cost column (total kWh times price) is appended.
    ``decrypt=True`` reads encrypted reports using the passphrase from the
    ``CARBONMETER_PASSPHRASE`` environment variable.
    """
    passphrase = None
    if decrypt:
        passphrase = passphrase_from_env()
        if passphrase is None:
            raise RuntimeError(
                f"decrypt=True requires the {PASSPHRASE_ENV_VAR} environment variable"
            )
    rows = _summary_rows(file_name, kwh_price=kwh_price, passphrase=passphrase)
    columns = ["project", "duration(s)", "power(kWh)", "CO2(kg)"]
    data = {
        "project": [row.project_name for row in rows],
        "duration(s)": [row.total_duration_s for row in rows],
        "power(kWh)": [row.total_power_kwh for row in rows],
        "CO2(kg)": [row.total_co2_kg for row in rows],
    }
    if kwh_price is not None:
        columns.append("cost")
        data["cost"] = [row.cost for row in rows]
    return pd.DataFrame(data, columns=columns)


def replay(
    trace_file,
    file_name: str = "emission.csv",
    write: bool = False,
    **tracker_kwargs,
) -> EmissionRecord:
    """Run the deterministic pipeline over a recorded trace.

    Accepts the same keyword arguments as :class:`Tracker`. The record is
    appended to ``file_name`` only when ``write`` is set; either way it is
    returned, bit-identical to what the command line's replay produces for
    the same trace and options.
    """
    config = _build_config(file_name=file_name, **tracker_kwargs)
    return _replay_pipeline(config, TraceSpec.from_csv(trace_file), write=write)
