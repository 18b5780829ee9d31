"""Acceptance criteria 1-7, one test each; results are echoed in the summary."""

import math
import time
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import DATA, record
from oracles import exact_ols, exact_piecewise_constant_integral, exact_trapezoid_final
from integrator_twin.controller import ChannelBank, Controller, ParameterStore
from integrator_twin.controller.protocol import ErrorCode, ProtocolError, parse_command
from integrator_twin.controller.service import STANDARD_RATE
from integrator_twin.controller.state import EEPROM_BYTES, ControllerState
from integrator_twin.drift import fit_drift_slope
from integrator_twin.harness import ShotConfig, fit_reference, format_transcript, replay, run_shot
from integrator_twin.integrator import Mode, compute_cmrr, get_preset, ideal_integrate, simulate
from integrator_twin.signals import PulseSpec, SignalTrace, gen_pulse_signal

pytestmark = pytest.mark.acceptance


def test_criterion_1_cmrr_arithmetic():
    value = compute_cmrr(1.5, 4e-3, 100.0, get_preset("ideal"))
    ok = abs(value - 125.0) <= 1.0
    record(1, ok, f"compute_cmrr(1.5 V, 4 mV, 100 s, RC=20 ms) = {value:.3f} dB (125 +/- 1)")
    assert ok


def test_criterion_2_cmrr_round_trip():
    rate, window = 100.0, 100.0
    n = int(window * rate) + 1
    zero = SignalTrace.zeros(n, rate)
    worst = 0.0
    for preset in ("cmrr125", "fig5"):
        for cmrr_db in (60.0, 90.0, 125.0):
            params = get_preset(preset).with_(cmrr_db=cmrr_db)
            baseline = simulate(zero, zero, params)
            for v_cm in (0.13, 1.5):
                out = simulate(zero, SignalTrace.constant(v_cm, n, rate), params)
                leak = out.samples - baseline.samples
                span = float(leak.max() - leak.min())
                worst = max(worst, abs(compute_cmrr(v_cm, span, window, params) - cmrr_db))
    ok = worst <= 0.5
    record(2, ok, f"worst recovery error {worst:.2e} dB over 12 cases (<= 0.5)")
    assert ok


def test_criterion_3_drift_correction():
    reference, fit = fit_reference(ShotConfig(preset="fig5"))
    clean = run_shot(ShotConfig(preset="fig5", correction="reference", reference_fit=fit)).report
    noisy_fit = fit_drift_slope(run_shot(ShotConfig(preset="fig5", noise_rms=5e-4, seed=1)).raw)
    noisy = run_shot(
        ShotConfig(preset="fig5", correction="reference", reference_fit=noisy_fit, noise_rms=5e-4, seed=2)
    ).report
    span, norm, norm_noisy = clean.corrected.span, clean.corrected.normalized, noisy.corrected.normalized
    ok = span <= 4e-3 and norm <= 200e-6 and norm_noisy <= 300e-6
    record(
        3,
        ok,
        f"raw slope {fit.slope:.4e} V/s; corrected span {span * 1e3:.3g} mV (<= 4), "
        f"normalized {norm * 1e6:.3g} uVs/1000s (<= 200), with 0.5 mV noise {norm_noisy * 1e6:.1f} (<= 300)",
    )
    assert ok


def test_criterion_4_standard_signal_calibration(controller):
    resp = controller.handle(parse_command("StandardSignal"))
    plateau_text, final_text = resp.payload.split(" ")
    plateaus = [float(x) for x in plateau_text.removeprefix("plateau=").split(";")]
    finals = [float(x) for x in final_text.removeprefix("final=").split(";")]
    # analytic oracle: -(2.5 V * 10 ms) / 20 ms, back to zero after the bipolar pair
    expected = -exact_piecewise_constant_integral([2.5], [0.010]) / 0.020
    worst_rel = max(abs(p - expected) / abs(expected) for p in plateaus)
    worst_final = max(abs(f) for f in finals)
    ok = resp.ok and len(plateaus) == 8 and worst_rel <= 1e-3 and worst_final <= 1e-3
    record(4, ok, f"plateau {plateaus[0]} V (rel err {worst_rel:.1e} <= 1e-3), |final| {worst_final} V (<= 1e-3)")
    assert ok
    assert STANDARD_RATE >= 1e5


VALID = [
    b"ALL3;3;3;3;3;3;3;3", b"READAll", b"RC2;5", b"INTE7", b"Initialization", b"StandardSignal",
    b"PulseSignal", b"IntHold", b"NET 10.0.0.2;255.255.255.0;10.0.0.1", b"QUIT",
]


def fuzz_lines(n, seed):
    rng = np.random.default_rng(seed)
    alphabet = np.frombuffer(b"0123456789;. ALRCINTEQUSPHDdlaeiostngu\r\t\x00\xff", dtype=np.uint8)
    for i in range(n):
        if i % 2:
            yield rng.bytes(int(rng.integers(0, 48)))
            continue
        line = bytearray(VALID[int(rng.integers(len(VALID)))])
        for _ in range(int(rng.integers(1, 4))):
            pos = int(rng.integers(0, len(line) + 1))
            op = int(rng.integers(3))
            if op == 0:
                line.insert(pos, int(rng.choice(alphabet)))
            elif line and op == 1:
                del line[min(pos, len(line) - 1)]
            elif line:
                line[min(pos, len(line) - 1)] = int(rng.choice(alphabet))
        yield bytes(line)


def test_criterion_5_protocol_conformance(server, tmp_path):
    session = (DATA / "golden_session.txt").read_text().splitlines()
    transcript = replay(server.address, session)
    identical = format_transcript(transcript) == (DATA / "golden_transcript.txt").read_text()
    covered = {parse_command(req).__class__.__name__ for req, reply in transcript if reply.startswith("OK")}
    errors = {reply.split()[1] for _, reply in transcript if reply.startswith("ERR")}

    start = time.perf_counter()
    crashes, n = [], 1_000_000
    for line in fuzz_lines(n, seed=2024):
        try:
            parse_command(line)
        except ProtocolError as exc:
            if not isinstance(exc.code, ErrorCode):
                crashes.append(line)
        except Exception:  # noqa: BLE001 - any other exception is a crash
            crashes.append(line)
    # a slice of the fuzz also goes through the full state machine
    sink = Controller(ParameterStore(tmp_path / "fuzz.eeprom"), ChannelBank("ideal"))
    for line in fuzz_lines(20_000, seed=7):
        try:
            sink.handle_line(line)
        except Exception:  # noqa: BLE001
            crashes.append(line)
    elapsed = time.perf_counter() - start

    ok = (
        identical and len(transcript) >= 20 and len(covered) == 10
        and errors == {c.value for c in ErrorCode} and not crashes and elapsed < 60
    )
    record(
        5,
        ok,
        f"golden {len(transcript)} commands identical={identical}, {len(covered)}/10 instructions, "
        f"{len(errors)}/5 error classes; fuzz {n} lines, {len(crashes)} crashes in {elapsed:.1f} s",
    )
    assert ok


def random_command(rng):
    kind = int(rng.integers(6))
    g = lambda: int(rng.integers(8))  # noqa: E731
    if kind == 0:
        return "ALL" + ";".join(str(g()) for _ in range(8))
    if kind == 1:
        return f"RC{int(rng.integers(1, 9))};{g()}"
    if kind == 2:
        return f"INTE{g()}"
    if kind == 3:
        return str(rng.choice(["IntHold", "Initialization"]))
    if kind == 4:
        quad = lambda: ".".join(str(int(x)) for x in rng.integers(0, 256, 4))  # noqa: E731
        return f"NET {quad()};{quad()};{quad()}"
    return "READAll"


def test_criterion_6_persistence(tmp_path):
    rng = np.random.default_rng(6)
    store = ParameterStore(tmp_path / "eeprom.bin")
    table = {int(k): float(v) for k, v in zip(rng.choice(65536, 99, replace=False), rng.normal(0, 1e3, 99))}
    controller = Controller(store, ChannelBank("fig5"), default_state=ControllerState(gain_table=table))
    mismatches, biggest = 0, 0
    for _ in range(100):
        for _ in range(int(rng.integers(1, 6))):
            assert controller.handle_line(random_command(rng))[0].ok
        if rng.random() < 0.2:
            controller.hardware_trigger(Mode(str(rng.choice(["hold", "integrate", "reset"]))))
        before = controller.state
        controller.power_cycle()
        mismatches += controller.state != before
        if store.path.exists():
            biggest = max(biggest, store.size())
    ok = mismatches == 0 and 0 < biggest <= EEPROM_BYTES
    record(6, ok, f"100 rounds, {mismatches} mismatches, largest image {biggest} bytes (<= {EEPROM_BYTES})")
    assert ok


finite = st.floats(-1e3, 1e3, allow_nan=False)


@settings(max_examples=200, deadline=None)
@given(st.integers(3, 200), finite, finite, st.floats(0.1, 1e4), st.floats(-10, 10))
def ols_exact_line(n, slope, intercept, rate, t0):
    trace = SignalTrace(rate, intercept + slope * (t0 + np.arange(n) / rate), t_start=t0)
    fit = fit_drift_slope(trace)
    ref_slope, _ = exact_ols(trace.times(), trace.samples)
    assert abs(fit.slope - float(ref_slope)) <= 1e-12 * max(abs(float(ref_slope)), abs(slope), 1e-300) + 1e-12 * (
        float(np.abs(trace.samples).max()) * rate / n
    )


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-1, 1), min_size=2, max_size=300), st.floats(-3, 3), st.floats(-3, 3))
def integrator_linear(values, a, b):
    params = get_preset("ideal")
    x = SignalTrace(1e3, values)
    y = SignalTrace(1e3, values[::-1])
    combo = ideal_integrate(SignalTrace(1e3, a * x.samples + b * y.samples), params).samples
    parts = a * ideal_integrate(x, params).samples + b * ideal_integrate(y, params).samples
    assert np.allclose(combo, parts, rtol=1e-9, atol=1e-9)


@settings(max_examples=100, deadline=None)
@given(st.floats(0.5, 5.0), st.floats(0.01, 0.5), st.floats(-2, 2))
def hold_freezes(t_hold, hold_len, v):
    params = get_preset("fig5")
    n = 6001
    out = simulate(SignalTrace.constant(v * 1e-3, n, 1e3), SignalTrace.constant(1.0, n, 1e3), params,
                   [(t_hold, Mode.HOLD), (t_hold + hold_len, Mode.INTEGRATE)])
    t = out.times()
    frozen = out.samples[(t >= t_hold) & (t < t_hold + hold_len)]
    assert np.all(frozen == frozen[0])


@settings(max_examples=100, deadline=None)
@given(st.floats(0.01, 5.0), st.sampled_from([0.001, 0.002, 0.005, 0.01]), st.integers(1, 4))
def bipolar_zero_area(amplitude, width, pairs):
    rate, rc = 100e3, 0.02
    pulse = gen_pulse_signal(PulseSpec(amplitude, width, (1, -1) * pairs), rate)
    assert math.fsum(pulse.samples) == 0.0
    assert exact_piecewise_constant_integral([amplitude, -amplitude] * pairs, [width] * (2 * pairs)) == 0
    out = ideal_integrate(pulse, get_preset("ideal"))
    oracle = float(-exact_trapezoid_final(pulse.samples, rate) / Fraction(rc))
    assert abs(out.samples[-1] - oracle) <= 1e-12 * amplitude
    # sampled edges leave at most one trapezoid step of residue
    assert abs(out.samples[-1]) <= amplitude / rate / rc * (1 + 1e-9)


def test_criterion_7_property_suites():
    results = {}
    for name, prop in [
        ("OLS exact line", ols_exact_line),
        ("linearity", integrator_linear),
        ("Hold freeze", hold_freezes),
        ("bipolar zero area/final", bipolar_zero_area),
    ]:
        try:
            prop()
            results[name] = True
        except Exception:  # noqa: BLE001 - report then re-raise below
            results[name] = False
    ok = all(results.values())
    record(7, ok, ", ".join(f"{k} {'ok' if v else 'FAILED'}" for k, v in results.items()))
    if not ok:
        for prop in (ols_exact_line, integrator_linear, hold_freezes, bipolar_zero_area):
            prop()
    assert ok
