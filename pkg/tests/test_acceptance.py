"""End-to-end guarantees, one test and one printed verdict per guarantee.

Run with ``pytest -v tests/test_acceptance.py`` to get a checklist of the
headline behaviors: exact integration of constant loads, the three
subsystem power models, the shipped intensity coefficients, the scaling
laws of the footprint formula, report round trips, and the session state
machine.
"""

import math
import random
import time
import uuid
from contextlib import contextmanager

import pytest
from hypothesis import given
from hypothesis import strategies as st

from carbonmeter.cpudb import lookup_tdp
from carbonmeter.emissions import (
    GLOBAL_AVERAGE_GAMMA_KG_PER_MWH,
    ResolvedRegion,
    carbon_footprint,
    default_database,
)
from carbonmeter.energy import EnergyLedger, EnergyTotals, PowerSample
from carbonmeter.errors import AlreadyRunning, NotRunning
from carbonmeter.reporting import append_record, read_records, summary
from carbonmeter.session import Session, SessionConfig, replay, wrap

from helpers import StubProvider, constant_trace, make_record, quantize


@pytest.fixture()
def verdict(capsys):
    """Context manager printing one PASS or FAIL line per acceptance check."""

    @contextmanager
    def check(name):
        try:
            yield
        except BaseException:
            with capsys.disabled():
                print(f"FAIL: {name}")
            raise
        with capsys.disabled():
            print(f"PASS: {name}")

    return check


def just_kwh(kwh: float) -> EnergyTotals:
    return EnergyTotals(cpu_kwh=0.0, gpu_kwh=kwh, ram_kwh=0.0, duration_s=0.0)


def test_constant_gpu_load_integrates_exactly(tmp_path, verdict):
    name = (
        "constant 250 W GPU over 4 simulated hours -> 1.000000 kWh, "
        "0.436500 kg at gamma 436.5 / PUE 1 (tol 1e-9, runtime < 1 s)"
    )
    with verdict(name):
        started = time.perf_counter()
        record = replay(
            SessionConfig(
                project_name="acceptance",
                output_path=str(tmp_path / "emission.csv"),
                gamma_override=436.5,
            ),
            constant_trace(4 * 3600.0, gpu_watts=250.0),
        )
        elapsed = time.perf_counter() - started
        assert record.power_kwh == pytest.approx(1.0, abs=1e-9)
        assert record.co2_kg == pytest.approx(0.4365, abs=1e-9)
        assert elapsed < 1.0


def test_cpu_energy_from_fallback_tdp(tmp_path, verdict):
    name = (
        "unrecognized CPU at 50% of all cores for 2 simulated hours -> "
        "0.100000 kWh from the 100 W fallback TDP (tol 1e-9)"
    )
    with verdict(name):
        tdp, matched = lookup_tdp("my homebrew cpu")
        assert (tdp, matched) == (100.0, False)
        # 400% of 8 cores = 50% utilization; GPU and RAM stay zero so the
        # record's total is the CPU term alone
        record = replay(
            SessionConfig(output_path=str(tmp_path / "emission.csv")),
            constant_trace(
                2 * 3600.0,
                cpu_percent=400.0,
                core_count=8,
                cpu_model="my homebrew cpu",
            ),
        )
        assert record.power_kwh == pytest.approx(0.100000, abs=1e-9)


def test_ram_energy_per_gigabyte(tmp_path, verdict):
    name = "16 GB resident for 1 simulated hour -> 0.006000 kWh at 0.375 W/GB (tol 1e-9)"
    with verdict(name):
        record = replay(
            SessionConfig(output_path=str(tmp_path / "emission.csv")),
            constant_trace(3600.0, ram_gb=16.0),
        )
        assert record.power_kwh == pytest.approx(0.006000, abs=1e-9)


def test_shipped_intensity_coefficients(verdict):
    name = (
        "intensity lookups: CA 120.49, FR 67.53, IN 625.57, PY 23.92, "
        "ZM 120.78; unresolvable -> 436.5 (all exact)"
    )
    with verdict(name):
        db = default_database()
        expected = {"CA": 120.49, "FR": 67.53, "IN": 625.57, "PY": 23.92, "ZM": 120.78}
        for code, gamma in expected.items():
            assert db.lookup_gamma(ResolvedRegion(iso_a2=code)) == gamma
        assert db.lookup_gamma(ResolvedRegion(iso_a2="XQ")) == 436.5
        assert db.lookup_gamma(ResolvedRegion.fallback()) == GLOBAL_AVERAGE_GAMMA_KG_PER_MWH


def test_published_energy_footprint_pairs(tmp_path, verdict):
    name = (
        "1.370 kWh at gamma 240.9 -> 0.33 kg (tol 0.005); "
        "24.50 kWh at the same gamma -> 5.89 kg (tol 0.02)"
    )
    with verdict(name):
        # 685 W for 2 h integrates to exactly 1.37 kWh
        record = replay(
            SessionConfig(
                output_path=str(tmp_path / "emission.csv"),
                gamma_override=240.9,
            ),
            constant_trace(7200.0, gpu_watts=685.0),
        )
        assert record.power_kwh == pytest.approx(1.370, abs=1e-9)
        assert abs(record.co2_kg - 0.33) <= 0.005
        assert abs(carbon_footprint(just_kwh(24.50), 240.9) - 5.89) <= 0.02


def test_footprint_scaling_and_ledger_properties(verdict):
    name = (
        "footprint scales exactly with gamma and PUE; ledger totals are "
        "monotone; split traces add up (rel 1e-12)"
    )

    kwh_values = st.floats(min_value=1e-6, max_value=1e4, allow_nan=False)
    gamma_values = st.floats(min_value=1e-3, max_value=1e4, allow_nan=False)
    pue_values = st.floats(min_value=1.0, max_value=3.0, allow_nan=False)

    @given(
        kwh=kwh_values,
        gamma=gamma_values,
        pue=pue_values,
        shift=st.integers(min_value=-8, max_value=8),
    )
    def scaling_is_exact_for_powers_of_two(kwh, gamma, pue, shift):
        factor = 2.0**shift
        base = carbon_footprint(just_kwh(kwh), gamma, pue)
        assert carbon_footprint(just_kwh(kwh), gamma * factor, pue) == factor * base
        if pue * factor >= 1.0:
            assert carbon_footprint(just_kwh(kwh), gamma, pue * factor) == factor * base

    @given(
        kwh=kwh_values,
        gamma=gamma_values,
        pue=pue_values,
        factor=st.floats(min_value=0.25, max_value=64.0, allow_nan=False),
    )
    def scaling_holds_for_arbitrary_factors(kwh, gamma, pue, factor):
        base = carbon_footprint(just_kwh(kwh), gamma, pue)
        scaled = carbon_footprint(just_kwh(kwh), gamma * factor, pue)
        assert scaled == pytest.approx(factor * base, rel=1e-12)

    steps = st.lists(
        st.tuples(
            st.floats(min_value=1e-3, max_value=7200.0, allow_nan=False),
            st.floats(min_value=0.0, max_value=400.0, allow_nan=False),
            st.floats(min_value=0.0, max_value=1200.0, allow_nan=False),
            st.floats(min_value=0.0, max_value=64.0, allow_nan=False),
        ),
        min_size=1,
        max_size=30,
    )

    def to_samples(step_list):
        samples = []
        t = 0.0
        for dt, cpu_w, gpu_w, ram_w in step_list:
            samples.append(
                PowerSample(timestamp_s=t, cpu_watts=cpu_w, gpu_watts=gpu_w, ram_watts=ram_w)
            )
            t += dt
        samples.append(PowerSample(timestamp_s=t, cpu_watts=0.0, gpu_watts=0.0, ram_watts=0.0))
        return samples

    @given(step_list=steps)
    def ledger_totals_never_decrease(step_list):
        ledger = EnergyLedger()
        previous = 0.0
        for sample in to_samples(step_list):
            ledger.add(sample)
            current = ledger.snapshot().total_kwh
            assert current >= previous
            previous = current

    @given(step_list=steps, data=st.data())
    def split_traces_are_additive(step_list, data):
        samples = to_samples(step_list)
        cut = data.draw(st.integers(min_value=0, max_value=len(samples) - 1))
        whole = EnergyLedger()
        for sample in samples:
            whole.add(sample)
        head, tail = EnergyLedger(), EnergyLedger()
        for sample in samples[: cut + 1]:
            head.add(sample)
        for sample in samples[cut:]:
            tail.add(sample)
        combined = head.snapshot().total_kwh + tail.snapshot().total_kwh
        assert combined == pytest.approx(whole.snapshot().total_kwh, rel=1e-12, abs=1e-15)

    with verdict(name):
        scaling_is_exact_for_powers_of_two()
        scaling_holds_for_arbitrary_factors()
        ledger_totals_never_decrease()
        split_traces_are_additive()


def test_report_round_trip_and_summary_sums(tmp_path, verdict):
    name = (
        "1000 randomized records round-trip field-identical in plaintext and "
        "encrypted modes; summary equals independent column sums; 25.87 kWh "
        "at 0.117/kWh costs 3.02679"
    )
    with verdict(name):
        rng = random.Random(20260826)
        records = [
            make_record(
                project=f"project-{rng.randrange(7)}",
                description=f"run {index}",
                duration_s=quantize(rng.uniform(0.0, 90000.0)),
                power_kwh=quantize(rng.uniform(0.0, 50.0)),
                co2_kg=quantize(rng.uniform(0.0, 12.0)),
                country=rng.choice(["France", "India", "global", "US/California"]),
            )
            for index in range(1000)
        ]

        plain_path = tmp_path / "plain.csv"
        for record in records:
            append_record(plain_path, record)
        assert [r.to_row() for r in read_records(plain_path)] == [r.to_row() for r in records]

        encrypted_path = tmp_path / "encrypted.csv"
        for record in records:
            append_record(encrypted_path, record, passphrase="round-trip")
        read_back = read_records(encrypted_path, passphrase="round-trip")
        assert [r.to_row() for r in read_back] == [r.to_row() for r in records]

        by_project: dict[str, list] = {}
        for record in records:
            by_project.setdefault(record.project_name, []).append(record)
        for row in summary(plain_path):
            group = by_project[row.project_name]
            assert row.total_power_kwh == math.fsum(r.power_kwh for r in group)
            assert row.total_co2_kg == math.fsum(r.co2_kg for r in group)
            assert row.total_duration_s == math.fsum(r.duration_s for r in group)

        cost_path = tmp_path / "cost.csv"
        append_record(cost_path, make_record(project="image-gen", power_kwh=1.37))
        append_record(cost_path, make_record(project="image-gen", power_kwh=24.50))
        (row,) = summary(cost_path, kwh_price=0.117)
        assert row.total_power_kwh == pytest.approx(25.87, abs=1e-9)
        assert row.cost == pytest.approx(3.02679, abs=1e-9)


def test_session_state_machine(tmp_path, verdict):
    name = (
        "random start/stop/wrap sequences never break the "
        "configured -> running -> stopped state machine; exactly one record "
        "per completed session"
    )

    def make_session(path):
        return Session(
            SessionConfig(project_name="lifecycle", output_path=str(path)),
            provider=StubProvider(),
            geo_resolver=None,
            autosample=False,
            civil_time=lambda: "1970-01-01 00:00:00",
            os_name="test",
        )

    @given(actions=st.lists(st.sampled_from(["new", "start", "stop", "wrap"]), max_size=12))
    def state_machine_holds(actions):
        path = tmp_path / f"{uuid.uuid4().hex}.csv"
        session = make_session(path)
        completed = 0
        for action in actions:
            phase_before = session.phase
            if action == "new":
                session = make_session(path)
            elif action == "start":
                if session.phase == "configured":
                    session.start()
                    assert session.phase == "running"
                else:
                    with pytest.raises(AlreadyRunning):
                        session.start()
                    assert session.phase == phase_before
            elif action == "stop":
                if session.phase == "running":
                    record = session.stop()
                    assert session.phase == "stopped"
                    assert record.project_name == "lifecycle"
                    completed += 1
                else:
                    with pytest.raises(NotRunning):
                        session.stop()
                    assert session.phase == phase_before
            elif action == "wrap":
                config = SessionConfig(project_name="lifecycle", output_path=str(path))
                assert (
                    wrap(
                        config,
                        lambda: "done",
                        provider=StubProvider(),
                        geo_resolver=None,
                        autosample=False,
                        civil_time=lambda: "1970-01-01 00:00:00",
                        os_name="test",
                    )
                    == "done"
                )
                completed += 1
        if path.exists():
            assert len(read_records(path)) == completed
        else:
            assert completed == 0

    with verdict(name):
        state_machine_holds()
