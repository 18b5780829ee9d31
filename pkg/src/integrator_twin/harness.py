"""Shot workflows over the simulated signal chain, trace export and the control client.

A shot runs source -> integrator channel -> gain stage, optionally adds
digitizer noise, and (when a reference fit is supplied) removes the drift
line causally, the way the plasma control system does in real time.
"""

from __future__ import annotations

import io
import logging
import math
import os
import socket
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .controller.protocol import Response
from .drift import DriftFit, DriftMetric, correct, fit_drift_slope, normalized_drift
from .integrator import (
    BEYOND_MEASURABLE,
    BeyondMeasurable,
    IntegratorParams,
    compute_cmrr,
    get_preset,
    simulate,
)
from .signals import (
    PulseSpec,
    SignalTrace,
    add_noise,
    gen_probe_signal,
    gen_pulse_signal,
    gen_standard_signal,
)

log = logging.getLogger(__name__)

SOURCES = ("zero-input", "standard-signal", "pulse", "probe-synthetic")
MEASURABILITY_FLOOR = 1e-3  # V over the test window
CSV_HEADER = "t_s,v_V"
_CHUNK = 8192


class MissingReferenceError(RuntimeError):
    """Correction requested but no reference fit is available."""


@dataclass
class ShotConfig:
    duration: float = 400.0
    sample_rate: float = 1000.0
    source: str = "zero-input"
    common_mode: float = 0.0
    preset: str = "fig5"
    cmrr_db: float | None = None
    correction: str = "none"  # or "reference"
    reference_fit: DriftFit | None = None
    remove_intercept: bool = True
    noise_rms: float = 0.0
    seed: int = 0
    pulse_width: float = 1.0
    gain: float = 1.0
    max_span: float | None = None
    max_normalized: float | None = None

    def __post_init__(self) -> None:
        if not (math.isfinite(self.duration) and self.duration > 0):
            raise ValueError(f"duration must be positive, got {self.duration!r}")
        if not (math.isfinite(self.sample_rate) and self.sample_rate > 0):
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate!r}")
        if self.source not in SOURCES:
            raise ValueError(f"unknown source {self.source!r}; choose from {SOURCES}")
        if self.correction not in ("none", "reference"):
            raise ValueError(f"correction must be 'none' or 'reference', got {self.correction!r}")
        self.params  # resolve the preset now

    @property
    def params(self) -> IntegratorParams:
        p = get_preset(self.preset)
        return p if self.cmrr_db is None else p.with_(cmrr_db=self.cmrr_db)

    @property
    def n_samples(self) -> int:
        # t spans [0, duration] inclusive
        return int(round(self.duration * self.sample_rate)) + 1


@dataclass
class ShotReport:
    raw: DriftMetric
    corrected: DriftMetric | None = None
    fit: DriftFit | None = None
    cmrr_db: float | BeyondMeasurable | None = None
    thresholds: dict = field(default_factory=dict)
    checks: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(self.checks.values())

    def to_dict(self) -> dict:
        cmrr = self.cmrr_db
        return {
            "raw": self.raw.to_dict(),
            "corrected": self.corrected.to_dict() if self.corrected else None,
            "fit": self.fit.to_dict() if self.fit else None,
            "cmrr_db": str(cmrr) if isinstance(cmrr, BeyondMeasurable) else cmrr,
            "thresholds": dict(self.thresholds),
            "checks": dict(self.checks),
            "passed": self.passed,
        }


@dataclass
class ShotResult:
    raw: SignalTrace
    corrected: SignalTrace | None
    report: ShotReport


def make_source(config: ShotConfig) -> SignalTrace:
    """Differential input for the shot, zero-padded to the shot length."""
    n, rate = config.n_samples, config.sample_rate
    if config.source == "zero-input":
        return SignalTrace.zeros(n, rate)
    if config.source == "standard-signal":
        trace = gen_standard_signal(rate)
    elif config.source == "pulse":
        trace = gen_pulse_signal(PulseSpec(2.5, config.pulse_width, (1,)), rate)
    else:
        trace = gen_probe_signal(rate, config.duration)
    return trace.padded(n)


def build_report(
    raw: SignalTrace,
    corrected: SignalTrace | None,
    rc: float,
    max_span: float | None = None,
    max_normalized: float | None = None,
    fit: DriftFit | None = None,
) -> ShotReport:
    """Metrics and threshold checks; a pure function of the traces."""
    raw_metric = normalized_drift(raw, rc)
    corr_metric = normalized_drift(corrected, rc) if corrected is not None else None
    judged = corr_metric or raw_metric
    thresholds, checks = {}, {}
    if max_span is not None:
        thresholds["max_span"] = max_span
        checks["span"] = judged.span <= max_span
    if max_normalized is not None:
        thresholds["max_normalized"] = max_normalized
        checks["normalized"] = judged.normalized <= max_normalized
    return ShotReport(raw_metric, corr_metric, fit, None, thresholds, checks)


def run_shot(config: ShotConfig) -> ShotResult:
    """Run one shot; with ``correction='reference'`` apply the stored fit causally."""
    if config.correction == "reference" and config.reference_fit is None:
        raise MissingReferenceError("correction=reference needs a fit from a prior reference shot")
    params = config.params
    v_diff = make_source(config)
    v_cm = SignalTrace.constant(config.common_mode, len(v_diff), v_diff.sample_rate)
    out = simulate(v_diff, v_cm, params)
    if config.gain != 1.0:
        out = out.with_samples(out.samples * config.gain)
    raw = add_noise(out, config.noise_rms, config.seed)

    corrected = None
    if config.correction == "reference":
        corrected = correct(raw, config.reference_fit, causal=True, remove_intercept=config.remove_intercept)
    report = build_report(
        raw, corrected, params.rc, config.max_span, config.max_normalized, config.reference_fit
    )
    if config.common_mode > 0 and config.source == "zero-input":
        report.cmrr_db = measure_cmrr(config.common_mode, config.duration, params, config.sample_rate)
    return ShotResult(raw, corrected, report)


def fit_reference(config: ShotConfig, window: tuple[float, float] | None = None) -> tuple[SignalTrace, DriftFit]:
    """Plasma-free reference shot (zero differential input) and its drift fit."""
    ref_config = replace(config, source="zero-input", correction="none", reference_fit=None)
    raw = run_shot(ref_config).raw
    return raw, fit_drift_slope(raw, window)


def measure_cmrr(
    v_cm: float,
    window: float,
    params: IntegratorParams,
    sample_rate: float = 100.0,
    floor: float = MEASURABILITY_FLOOR,
):
    """Common-mode rejection from two zero-differential shots.

    The shot at ``v_cm`` is compared against a baseline at 0 V common mode so
    offset drift cancels and only the common-mode leak is measured. A drift
    span below ``floor`` is reported as :data:`BEYOND_MEASURABLE`.
    """
    if not (math.isfinite(v_cm) and v_cm >= 0):
        raise ValueError(f"v_cm must be >= 0, got {v_cm!r}")
    n = int(round(window * sample_rate)) + 1
    zero = SignalTrace.zeros(n, sample_rate)
    with_cm = simulate(zero, SignalTrace.constant(v_cm, n, sample_rate), params)
    baseline = simulate(zero, zero, params)
    diff = with_cm.samples - baseline.samples
    drift = float(diff.max() - diff.min())
    if drift < floor or drift == 0:
        return BEYOND_MEASURABLE
    return compute_cmrr(v_cm, drift, window, params)


def cmrr_test(v_cm: float, window: float = 100.0, preset: str | IntegratorParams = "cmrr125", **kw):
    params = get_preset(preset) if isinstance(preset, str) else preset
    return measure_cmrr(v_cm, window, params, **kw)


# -- CSV traces ---------------------------------------------------------------


def export_trace(trace: SignalTrace, path: str | os.PathLike) -> Path:
    """Write ``t_s,v_V`` rows at full float precision, a chunk at a time."""
    path = Path(path)
    try:
        with open(path, "w", newline="") as fh:
            fh.write(CSV_HEADER + "\n")
            rate, t0 = trace.sample_rate, trace.t_start
            for lo in range(0, len(trace), _CHUNK):
                hi = min(lo + _CHUNK, len(trace))
                t = (t0 + np.arange(lo, hi) / rate).tolist()
                v = trace.samples[lo:hi].tolist()
                fh.write("".join(f"{a!r},{b!r}\n" for a, b in zip(t, v)))
    except OSError as exc:
        raise OSError(exc.errno, f"cannot write trace to {path}: {exc.strerror}") from exc
    return path


def _infer_rate(t: np.ndarray, t0: float) -> float:
    """Sample rate that regenerates every timestamp exactly, if one is found."""
    span = t[-1] - t[0]
    if not span > 0:
        raise ValueError("timestamps do not increase")
    estimate = (len(t) - 1) / span
    candidates = [float(round(estimate))] + [float(f"{estimate:.{d}g}") for d in range(6, 18)] + [estimate]
    k = np.arange(len(t))
    for rate in candidates:
        if rate > 0 and np.array_equal(t0 + k / rate, t):
            return rate
    log.warning("no sample rate reproduces the timestamps exactly; using %r", estimate)
    return estimate


def import_trace(path: str | os.PathLike, sample_rate: float | None = None) -> SignalTrace:
    path = Path(path)
    try:
        with open(path, newline="") as fh:
            header = fh.readline().strip()
            if header != CSV_HEADER:
                raise ValueError(f"{path}: expected header {CSV_HEADER!r}, got {header!r}")
            rows = [line.split(",") for line in fh if line.strip()]
    except OSError as exc:
        raise OSError(exc.errno, f"cannot read trace from {path}: {exc.strerror}") from exc
    if not rows:
        return SignalTrace(sample_rate or 1.0, np.zeros(0))
    try:
        t = np.array([float(r[0]) for r in rows])
        v = np.array([float(r[1]) for r in rows])
    except (ValueError, IndexError) as exc:
        raise ValueError(f"{path}: malformed row: {exc}") from None
    if sample_rate is None:
        if len(t) < 2:
            raise ValueError(f"{path}: a single-sample trace needs an explicit sample_rate")
        sample_rate = _infer_rate(t, float(t[0]))
    return SignalTrace(sample_rate, v, float(t[0]))


# -- control client -------------------------------------------------------------


class ClientError(Exception):
    pass


class ClientTimeout(ClientError):
    pass


class ClientConnectionError(ClientError):
    pass


class ControlClient:
    """One control session; ``send`` does a single request/response exchange."""

    def __init__(self, address: tuple[str, int], timeout: float = 5.0):
        self.address = address
        try:
            self.sock = socket.create_connection(address, timeout=timeout)
        except socket.timeout as exc:
            raise ClientTimeout(f"connect to {address[0]}:{address[1]} timed out") from exc
        except OSError as exc:
            raise ClientConnectionError(f"cannot connect to {address[0]}:{address[1]}: {exc}") from exc
        self.reader = self.sock.makefile("rb")

    def send(self, line: str) -> Response:
        log.debug(">> %s", line)
        try:
            self.sock.sendall(line.rstrip("\r\n").encode("ascii") + b"\n")
            reply = self.reader.readline()
        except socket.timeout as exc:
            raise ClientTimeout(f"no reply to {line!r} from {self.address[0]}:{self.address[1]}") from exc
        except OSError as exc:
            raise ClientConnectionError(f"connection lost during {line!r}: {exc}") from exc
        if not reply:
            raise ClientConnectionError(f"server closed the connection before replying to {line!r}")
        text = reply.decode("ascii", errors="replace").rstrip("\r\n")
        log.debug("<< %s", text)
        return Response.from_line(text)

    def close(self) -> None:
        self.reader.close()
        self.sock.close()

    def __enter__(self) -> ControlClient:
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def client_send(address: tuple[str, int], line: str, timeout: float = 5.0) -> Response:
    with ControlClient(address, timeout) as client:
        return client.send(line)


def replay(address: tuple[str, int], lines: Iterable[str], timeout: float = 5.0) -> list[tuple[str, str]]:
    """Send each line over one session; returns ``(request, reply)`` pairs.

    Stops after QUIT. Blank lines and ``#`` comments are skipped.
    """
    transcript = []
    with ControlClient(address, timeout) as client:
        for line in lines:
            line = line.rstrip("\r\n")
            if not line.strip() or line.startswith("#"):
                continue
            transcript.append((line, client.send(line).to_line()))
            if line == "QUIT":
                break
    return transcript


def format_transcript(transcript: Sequence[tuple[str, str]]) -> str:
    out = io.StringIO()
    for request, reply in transcript:
        out.write(f"> {request}\n< {reply}\n")
    return out.getvalue()


def parse_address(text: str, default_port: int = 5025) -> tuple[str, int]:
    host, sep, port = text.rpartition(":")
    if not sep:
        return text, default_port
    return host or "127.0.0.1", int(port)
