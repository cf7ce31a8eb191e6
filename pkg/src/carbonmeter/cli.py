"""Command-line front door: track a command, replay traces, print summaries.

Exit codes: 0 on success, the child's own code for ``run``, 2 for usage
errors, 3 for I/O or parse errors. Every flag also has an environment-variable
equivalent (``CARBONMETER_<COMMAND>_<FLAG>``); explicit flags win.
"""

from __future__ import annotations

import json
import subprocess
import sys

import click

from . import reporting, telemetry
from .errors import CarbonMeterError, ReportError, SpawnError
from .session import Session, SessionConfig, replay as replay_pipeline

IO_EXIT_CODE = 3


def _session_options(command):
    options = [
        click.option("--project", default="default", show_default=True, help="Project name recorded with the session."),
        click.option("--description", default="", help="Experiment description recorded with the session."),
        click.option("--output", default="emission.csv", show_default=True, help="Emission report file to append to."),
        click.option("--pue", type=float, default=1.0, show_default=True, help="Power usage effectiveness of the facility (>= 1)."),
        click.option("--country", default=None, help="ISO-Alpha-2 region override, e.g. FR or US/California."),
        click.option("--sampling-period", type=float, default=1.0, show_default=True, help="Seconds between telemetry samples."),
        click.option("--encrypt", is_flag=True, help=f"Encrypt record fields (passphrase from {reporting.PASSPHRASE_ENV_VAR})."),
        click.option("--gamma-override", type=float, default=None, help="Pin the emission intensity, kg CO2 per MWh."),
        click.option("--tdp-override", type=float, default=None, help="Pin the CPU TDP in watts, bypassing the catalog."),
    ]
    for option in reversed(options):
        command = option(command)
    return command


def _build_config(project, description, output, pue, country, sampling_period, encrypt,
                  gamma_override, tdp_override) -> SessionConfig:
    return SessionConfig(
        project_name=project,
        experiment_description=description,
        output_path=output,
        pue=pue,
        region_override=country,
        sampling_period_s=sampling_period,
        encrypt=encrypt,
        gamma_override=gamma_override,
        cpu_tdp_override=tdp_override,
    )


def _record_lines(record: reporting.EmissionRecord) -> str:
    pairs = list(zip(reporting.REPORT_HEADER, record.to_row()))
    width = max(len(name) for name, _ in pairs)
    return "\n".join(f"{name.ljust(width)}  {value}" for name, value in pairs)


def _record_json(record: reporting.EmissionRecord) -> str:
    return json.dumps(dict(zip(reporting.REPORT_HEADER, record.to_row())), indent=2)


@click.group()
def cli():
    """Track process energy use and equivalent CO2 emissions."""


@cli.command(context_settings={"ignore_unknown_options": True})
@_session_options
@click.argument("command", nargs=-1, type=click.UNPROCESSED, required=True)
def run(project, description, output, pue, country, sampling_period, encrypt,
        gamma_override, tdp_override, command):
    """Run COMMAND under tracking and propagate its exit status.

    The command's process tree is sampled until it exits; one record is
    appended to the report. The child's standard streams are untouched.
    """
    config = _build_config(project, description, output, pue, country,
                           sampling_period, encrypt, gamma_override, tdp_override)
    try:
        child = subprocess.Popen(list(command))
    except OSError as exc:
        raise SpawnError(f"cannot spawn {command[0]!r}: {exc}") from exc
    session = Session(config, provider=telemetry.LiveProcessProvider(child.pid))
    session.start()
    try:
        status = child.wait()
    except KeyboardInterrupt:
        child.terminate()
        status = child.wait()
    finally:
        session.stop()
    sys.exit(status)


@cli.command("replay")
@_session_options
@click.option("--json", "as_json", is_flag=True, help="Emit the record as JSON.")
@click.argument("trace_file", type=click.Path(exists=True, dir_okay=False))
def replay(project, description, output, pue, country, sampling_period, encrypt,
           gamma_override, tdp_override, as_json, trace_file):
    """Replay a telemetry trace through the full pipeline and print the record.

    Simulated time: the trace's timestamps drive the integration directly, so
    hour-long traces verify in milliseconds and the output is bit-reproducible.
    The record is appended to --output only when --output is given explicitly.
    """
    ctx = click.get_current_context()
    write = ctx.get_parameter_source("output") == click.core.ParameterSource.COMMANDLINE
    config = _build_config(project, description, output, pue, country,
                           sampling_period, encrypt, gamma_override, tdp_override)
    trace = telemetry.TraceSpec.from_csv(trace_file)
    record = replay_pipeline(config, trace, write=write)
    click.echo(_record_json(record) if as_json else _record_lines(record))


@cli.command("summary")
@click.option("--kwh-price", type=float, default=None, help="Electricity price per kWh; adds a cost column.")
@click.option("--decrypt", is_flag=True, help=f"Decrypt records (passphrase from {reporting.PASSPHRASE_ENV_VAR}).")
@click.option("--json", "as_json", is_flag=True, help="Emit the summary as JSON.")
@click.argument("path", type=click.Path(dir_okay=False))
def summary(kwh_price, decrypt, as_json, path):
    """Aggregate a report by project and print the totals."""
    passphrase = None
    if decrypt:
        passphrase = reporting.passphrase_from_env()
        if passphrase is None:
            raise ReportError(
                f"--decrypt requires the {reporting.PASSPHRASE_ENV_VAR} environment variable"
            )
    try:
        rows = reporting.summary(path, kwh_price=kwh_price, passphrase=passphrase)
    except FileNotFoundError as exc:
        raise ReportError(f"cannot read {path}: {exc}") from exc

    if as_json:
        payload = [
            {
                "project_name": row.project_name,
                "total_duration_s": row.total_duration_s,
                "total_power_kwh": row.total_power_kwh,
                "total_co2_kg": row.total_co2_kg,
                **({"cost": row.cost} if row.cost is not None else {}),
            }
            for row in rows
        ]
        click.echo(json.dumps(payload, indent=2))
        return

    header = ["project", "duration(s)", "power(kWh)", "CO2(kg)"]
    if kwh_price is not None:
        header.append("cost")
    table = [header]
    for row in rows:
        line = [
            row.project_name,
            f"{row.total_duration_s:.6f}",
            f"{row.total_power_kwh:.6f}",
            f"{row.total_co2_kg:.6f}",
        ]
        if kwh_price is not None:
            line.append(f"{row.cost:.6f}")
        table.append(line)
    widths = [max(len(line[i]) for line in table) for i in range(len(header))]
    for line in table:
        click.echo("  ".join(cell.ljust(width) for cell, width in zip(line, widths)).rstrip())


def main():
    try:
        cli(auto_envvar_prefix="CARBONMETER", standalone_mode=False)
    except click.exceptions.Abort:
        sys.exit(1)
    except click.UsageError as exc:
        exc.show()
        sys.exit(2)
    except click.ClickException as exc:
        exc.show()
        sys.exit(exc.exit_code)
    except (CarbonMeterError, OSError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(IO_EXIT_CODE)


if __name__ == "__main__":
    main()
