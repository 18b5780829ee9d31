"""Reference-shot drift fitting and real-time linear drift removal."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Iterator

import numpy as np

from .integrator import IntegratorParams
from .signals import SignalTrace

NORMALIZATION_WINDOW = 1000.0  # s


@dataclass(frozen=True)
class DriftFit:
    slope: float  # V/s
    intercept: float  # V at t = 0
    rms_residual: float
    window: tuple[float, float]

    def __post_init__(self) -> None:
        lo, hi = self.window
        if not lo < hi:
            raise ValueError(f"fit window must be nonempty, got {self.window}")
        if not self.rms_residual >= 0:
            raise ValueError("rms_residual must be >= 0")

    def baseline(self, t):
        return self.intercept + self.slope * t

    def to_dict(self) -> dict:
        return {
            "slope": self.slope,
            "intercept": self.intercept,
            "rms_residual": self.rms_residual,
            "window": list(self.window),
        }

    @classmethod
    def from_dict(cls, d: dict) -> DriftFit:
        lo, hi = d["window"]
        return cls(float(d["slope"]), float(d["intercept"]), float(d["rms_residual"]), (float(lo), float(hi)))


@dataclass(frozen=True)
class DriftMetric:
    span: float  # V, max - min over the trace
    normalized: float  # V*s per 1000 s
    duration: float  # s

    def to_dict(self) -> dict:
        return {"span": self.span, "normalized": self.normalized, "duration": self.duration}


def fit_drift_slope(reference: SignalTrace, window: tuple[float, float] | None = None) -> DriftFit:
    """Ordinary least-squares line through the samples with ``lo <= t <= hi``.

    The default window is the whole trace. Sums are taken about the window
    means so an exact line is recovered to rounding error even with a large
    offset in t.
    """
    t = reference.times()
    if len(t) == 0:
        raise ValueError("reference trace is empty")
    if window is None:
        window = (float(t[0]), float(t[-1]))
    lo, hi = window
    if not lo <= hi:
        raise ValueError(f"fit window {window} is reversed")
    if hi < t[0] or lo > t[-1]:
        raise ValueError(f"fit window {window} lies outside the trace [{t[0]:g}, {t[-1]:g}] s")
    sel = (t >= lo) & (t <= hi)
    tw = t[sel]
    yw = reference.samples[sel]
    if tw.size < 2:
        raise ValueError(f"fit window {window} holds {tw.size} sample(s); need at least 2")

    t_mean = math.fsum(tw) / tw.size
    y_mean = math.fsum(yw) / yw.size
    dt = tw - t_mean
    dy = yw - y_mean
    slope = math.fsum(dt * dy) / math.fsum(dt * dt)
    intercept = y_mean - slope * t_mean
    resid = yw - (intercept + slope * tw)
    rms = math.sqrt(math.fsum(resid * resid) / resid.size)
    return DriftFit(slope, intercept, rms, (float(tw[0]), float(tw[-1])))


def correct(
    trace: SignalTrace, fit: DriftFit, causal: bool = True, remove_intercept: bool = True
) -> SignalTrace:
    """Subtract the fitted drift line from ``trace``.

    With ``causal`` set the correction runs sample by sample through
    :class:`CausalCorrector`, the way a real-time controller would apply it.
    Both paths evaluate the same expression and agree bit for bit.
    """
    if not (math.isfinite(fit.slope) and math.isfinite(fit.intercept)):
        raise ValueError("fit has non-finite coefficients")
    if causal:
        corrector = CausalCorrector(fit, trace.sample_rate, trace.t_start, remove_intercept)
        out = np.fromiter(corrector.feed(trace.samples.tolist()), dtype=np.float64, count=len(trace))
    else:
        intercept = fit.intercept if remove_intercept else 0.0
        out = trace.samples - (intercept + fit.slope * trace.times())
    return trace.with_samples(out)


class CausalCorrector:
    """Streaming drift removal: only the precomputed fit and the current time are used."""

    def __init__(self, fit: DriftFit, sample_rate: float, t_start: float = 0.0, remove_intercept: bool = True):
        self.slope = fit.slope
        self.intercept = fit.intercept if remove_intercept else 0.0
        self.sample_rate = float(sample_rate)
        self.t_start = float(t_start)
        self.k = 0

    def step(self, v: float) -> float:
        t = self.t_start + self.k / self.sample_rate
        self.k += 1
        return v - (self.intercept + self.slope * t)

    def feed(self, samples: Iterable[float]) -> Iterator[float]:
        for v in samples:
            yield self.step(v)


def normalized_drift(trace: SignalTrace, params: IntegratorParams | float) -> DriftMetric:
    """Span of ``trace`` times RC, scaled to a 1000 s window.

    ``params`` may be the channel parameters or a bare RC in seconds.
    """
    if len(trace) == 0:
        raise ValueError("trace is empty")
    rc = params.rc if isinstance(params, IntegratorParams) else float(params)
    span = float(trace.samples.max() - trace.samples.min())
    duration = trace.duration
    return DriftMetric(span, span * rc * (NORMALIZATION_WINDOW / duration), duration)
