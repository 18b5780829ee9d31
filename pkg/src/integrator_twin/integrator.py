"""Behavioral model of one difference-integrator channel.

The ideal response is ``V_o = -(1/RC) * integral(V_i dt)``. On top of that the
channel drifts at a constant rate set by the input offset voltage, the input
offset current and common-mode leakage through a finite CMRR, and clamps at the
supply rails. Integration uses the cumulative trapezoid rule throughout, so a
channel with every nonideality switched off reproduces :func:`ideal_integrate`
bit for bit.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace
from typing import Iterable, Sequence

import numpy as np

from .signals import SignalTrace

IDEAL_CMRR = math.inf


class BeyondMeasurable(enum.Enum):
    """Returned instead of a number when no common-mode drift was observed."""

    BEYOND_MEASURABLE = "beyond measurable"

    def __str__(self) -> str:
        return self.value


BEYOND_MEASURABLE = BeyondMeasurable.BEYOND_MEASURABLE


class Mode(enum.Enum):
    INTEGRATE = "integrate"
    HOLD = "hold"
    # schedule-only event: zero the accumulator, then integrate
    RESET = "reset"


@dataclass(frozen=True)
class IntegratorParams:
    resistance: float = 20e3
    capacitance: float = 1e-6
    offset_voltage: float = 0.0
    offset_current: float = 0.0
    cmrr_db: float = IDEAL_CMRR
    rail_voltage: float = 10.0

    def __post_init__(self) -> None:
        for name in ("resistance", "capacitance", "rail_voltage"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ValueError(f"{name} must be positive and finite, got {value!r}")
        for name in ("offset_voltage", "offset_current"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")
        if math.isnan(self.cmrr_db) or self.cmrr_db < 0 or self.cmrr_db == -math.inf:
            raise ValueError(f"cmrr_db must be >= 0 or IDEAL_CMRR, got {self.cmrr_db!r}")

    @property
    def rc(self) -> float:
        return self.resistance * self.capacitance

    @property
    def offset_drift_rate(self) -> float:
        """Output drift (V/s) from input offsets alone."""
        return self.offset_voltage / self.rc + self.offset_current / self.capacitance

    def with_(self, **changes) -> IntegratorParams:
        return replace(self, **changes)


# 20 ms channel as tested (R = 20 kOhm, C = 1 uF).
PRESETS: dict[str, IntegratorParams] = {
    "ideal": IntegratorParams(),
    # chopper op-amp typicals: 0.5 uV, 20 pA
    "datasheet": IntegratorParams(offset_voltage=0.5e-6, offset_current=20e-12, cmrr_db=125.0),
    # 2 uV / 20 ms + 25 pA / 1 uF = 125 uV/s, i.e. 50 mV over 400 s
    "fig5": IntegratorParams(offset_voltage=2.0e-6, offset_current=25e-12, cmrr_db=125.0),
    "cmrr125": IntegratorParams(cmrr_db=125.0),
}


def get_preset(name: str) -> IntegratorParams:
    try:
        return PRESETS[name]
    except KeyError:
        raise KeyError(f"unknown integrator preset {name!r}; choose from {sorted(PRESETS)}") from None


@dataclass(frozen=True)
class IntegratorState:
    accumulated_output: float = 0.0
    mode: Mode = Mode.INTEGRATE

    def reset(self) -> IntegratorState:
        return replace(self, accumulated_output=0.0)


def _trapezoid_steps(v: np.ndarray, dt: float) -> np.ndarray:
    return (v[:-1] + v[1:]) * (0.5 * dt)


def ideal_integrate(v_i: SignalTrace, params: IntegratorParams) -> SignalTrace:
    """Drift-free, unclamped output: ``-(1/RC)`` times the cumulative trapezoid integral."""
    steps = -_trapezoid_steps(v_i.samples, v_i.dt) / params.rc
    out = np.add.accumulate(np.concatenate(([0.0], steps)))
    return v_i.with_samples(out)


def common_mode_drift_rate(v_cm: float | np.ndarray, params: IntegratorParams):
    """Output drift rate (V/s) caused by a common-mode input ``v_cm``.

    Inverts the CMRR definition: the common-mode signal leaks through as an
    equivalent differential input ``v_cm / 10**(cmrr_db/20)``, which the
    integrator then integrates with gain ``1/RC``. An ideal channel leaks nothing.
    """
    if params.cmrr_db == IDEAL_CMRR:
        return v_cm * 0.0
    return v_cm / (params.rc * 10.0 ** (params.cmrr_db / 20.0))


def compute_cmrr(v_cm: float, output_drift: float, window: float, params: IntegratorParams):
    """CMRR in dB from a measured output drift over ``window`` seconds.

    ``20*log10(v_cm / (output_drift * RC / window))``. A zero drift cannot be
    turned into a number and yields :data:`BEYOND_MEASURABLE`.
    """
    for name, value in (("v_cm", v_cm), ("output_drift", output_drift), ("window", window)):
        if not math.isfinite(value) or value < 0:
            raise ValueError(f"{name} must be finite and non-negative, got {value!r}")
    if window == 0:
        raise ValueError("window must be positive")
    if output_drift == 0:
        return BEYOND_MEASURABLE
    if v_cm == 0:
        raise ValueError("v_cm must be positive when a drift was measured")
    equivalent_input_drift = output_drift * params.rc / window
    return 20.0 * math.log10(v_cm / equivalent_input_drift)


def format_cmrr(value) -> str:
    if value is BEYOND_MEASURABLE:
        return str(value)
    return f"{round(value):d} dB"


def _mode_runs(
    n: int, times: np.ndarray, schedule: Sequence[tuple[float, Mode]], initial: Mode
) -> list[tuple[int, int, Mode, bool]]:
    """Split sample indices into runs of constant mode.

    Returns ``(first, last_exclusive, mode, reset_at_first)``; an event at time T
    takes effect at the first sample with ``t >= T``.
    """
    last_t = -math.inf
    for t, m in schedule:
        if not isinstance(m, Mode):
            raise TypeError(f"schedule entries need a Mode, got {m!r}")
        if t < last_t:
            raise ValueError("mode_schedule times must be ascending")
        last_t = t

    starts: dict[int, tuple[Mode, bool]] = {}
    for t, m in schedule:
        k = int(np.searchsorted(times, t, side="left"))
        if k >= n:
            continue
        mode, reset = starts.get(k, (None, False))
        if m is Mode.RESET:
            starts[k] = (Mode.INTEGRATE, True)
        else:
            starts[k] = (m, reset)

    runs = []
    mode, reset, first = initial, False, 0
    for k in sorted(starts):
        if k > first:
            runs.append((first, k, mode, reset))
            reset = False
        first = k
        mode, r = starts[k]
        reset = reset or r
    runs.append((first, n, mode, reset))
    return runs


def _accumulate(acc: float, steps: np.ndarray, rail: float) -> np.ndarray:
    """Running sum of ``steps`` from ``acc`` with a hard clamp at +/-rail."""
    out = np.add.accumulate(np.concatenate(([acc], steps)))[1:]
    over = np.flatnonzero(np.abs(out) > rail)
    if over.size == 0:
        return out
    j = int(over[0])
    value = math.copysign(rail, out[j])
    out[j] = value
    for i in range(j + 1, len(steps)):
        value += steps[i]
        if value > rail:
            value = rail
        elif value < -rail:
            value = -rail
        out[i] = value
    return out


def run_channel(
    v_diff: SignalTrace,
    v_cm: SignalTrace,
    params: IntegratorParams,
    mode_schedule: Iterable[tuple[float, Mode]] = (),
    state: IntegratorState | None = None,
) -> tuple[SignalTrace, IntegratorState]:
    """Like :func:`simulate`, also returning the channel state after the last sample."""
    if len(v_diff) != len(v_cm) or v_diff.sample_rate != v_cm.sample_rate or v_diff.t_start != v_cm.t_start:
        raise ValueError(
            f"v_diff and v_cm must share rate, start and length "
            f"({len(v_diff)}@{v_diff.sample_rate:g} vs {len(v_cm)}@{v_cm.sample_rate:g})"
        )
    state = state or IntegratorState()
    if abs(state.accumulated_output) > params.rail_voltage:
        raise ValueError("initial accumulated_output exceeds the rails")
    n = len(v_diff)
    if n == 0:
        return v_diff, state

    dt = v_diff.dt
    steps = -_trapezoid_steps(v_diff.samples, dt) / params.rc
    drift = params.offset_drift_rate + common_mode_drift_rate(v_cm.samples, params)
    if np.any(drift != 0):
        # trapezoid of a piecewise-linear rate
        steps = steps + _trapezoid_steps(np.broadcast_to(drift, (n,)), dt)

    out = np.empty(n)
    acc = state.accumulated_output
    mode = state.mode
    for first, stop, mode, reset in _mode_runs(n, v_diff.times(), list(mode_schedule), state.mode):
        if reset:
            acc = 0.0
        out[first] = acc
        if stop - first > 1:
            if mode is Mode.HOLD:
                out[first + 1 : stop] = acc
            else:
                out[first + 1 : stop] = _accumulate(acc, steps[first : stop - 1], params.rail_voltage)
            acc = float(out[stop - 1])
        # the interval from the run's last sample to the next run's first
        if stop < n and mode is Mode.INTEGRATE:
            acc = min(max(acc + steps[stop - 1], -params.rail_voltage), params.rail_voltage)
    return v_diff.with_samples(out), IntegratorState(acc, mode)


def simulate(
    v_diff: SignalTrace,
    v_cm: SignalTrace,
    params: IntegratorParams,
    mode_schedule: Iterable[tuple[float, Mode]] = (),
    state: IntegratorState | None = None,
) -> SignalTrace:
    """Integrator output for a differential input plus a common-mode input.

    Per sample interval the accumulator gains ``-(1/RC) * v_diff * dt`` plus the
    drift ``(offset_voltage/RC + offset_current/C + common_mode_drift_rate(v_cm)) * dt``
    and is clamped to ``+/-rail_voltage``. ``mode_schedule`` lists ``(time, Mode)``
    events: HOLD freezes the output, INTEGRATE resumes, RESET zeroes the
    accumulator and resumes integrating.
    """
    return run_channel(v_diff, v_cm, params, mode_schedule, state)[0]
