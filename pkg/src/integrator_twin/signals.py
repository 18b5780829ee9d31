"""Sampled voltage traces and the waveform generators used to exercise integrators.

Every module in the package passes :class:`SignalTrace` values around. A trace
is an immutable, uniformly sampled series; sample ``k`` sits at
``t_start + k / sample_rate``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

STANDARD_AMPLITUDE = 2.5  # V, precision reference, treated as exact
STANDARD_WIDTH = 10e-3  # s
MIN_STANDARD_RATE = 10e3  # Hz, >= 100 samples per 10 ms lobe
MIN_SAMPLES_PER_LOBE = 10

# CLI presets for the single positive calibration pulse
PULSE_WIDTH_PRESETS = {f"{n}ms": n * 1e-3 for n in range(1, 11)} | {"1s": 1.0}

# Guards floor(width * rate) against products like 0.07 * 1e5 = 6999.999...
_SNAP_EPS = 1e-9


class ResolutionError(ValueError):
    """Sample rate too coarse to resolve the requested waveform."""


@dataclass(frozen=True, eq=False)
class SignalTrace:
    sample_rate: float
    samples: np.ndarray
    t_start: float = 0.0

    def __post_init__(self) -> None:
        rate = float(self.sample_rate)
        if not math.isfinite(rate) or rate <= 0:
            raise ValueError(f"sample_rate must be positive and finite, got {self.sample_rate!r}")
        if not math.isfinite(self.t_start):
            raise ValueError("t_start must be finite")
        samples = np.array(self.samples, dtype=np.float64, copy=True)
        if samples.ndim != 1:
            raise ValueError(f"samples must be one-dimensional, got shape {samples.shape}")
        if not np.all(np.isfinite(samples)):
            raise ValueError("samples contain NaN or Inf")
        samples.setflags(write=False)
        object.__setattr__(self, "sample_rate", rate)
        object.__setattr__(self, "t_start", float(self.t_start))
        object.__setattr__(self, "samples", samples)

    def __len__(self) -> int:
        return self.samples.shape[0]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, SignalTrace):
            return NotImplemented
        return (
            self.sample_rate == other.sample_rate
            and self.t_start == other.t_start
            and np.array_equal(self.samples, other.samples)
        )

    __hash__ = None  # type: ignore[assignment]

    @property
    def dt(self) -> float:
        return 1.0 / self.sample_rate

    @property
    def duration(self) -> float:
        """``len / sample_rate``: the time covered when each sample owns one period."""
        return len(self) / self.sample_rate

    def times(self) -> np.ndarray:
        return self.t_start + np.arange(len(self)) / self.sample_rate

    def time_at(self, k: int) -> float:
        return self.t_start + k / self.sample_rate

    def with_samples(self, samples: np.ndarray | Sequence[float]) -> SignalTrace:
        return SignalTrace(self.sample_rate, np.asarray(samples), self.t_start)

    def padded(self, n_total: int) -> SignalTrace:
        """Zero-extend (or truncate) to exactly ``n_total`` samples."""
        out = np.zeros(n_total)
        m = min(n_total, len(self))
        out[:m] = self.samples[:m]
        return self.with_samples(out)

    @classmethod
    def constant(cls, value: float, n: int, sample_rate: float, t_start: float = 0.0) -> SignalTrace:
        return cls(sample_rate, np.full(n, float(value)), t_start)

    @classmethod
    def zeros(cls, n: int, sample_rate: float, t_start: float = 0.0) -> SignalTrace:
        return cls(sample_rate, np.zeros(n), t_start)


@dataclass(frozen=True)
class PulseSpec:
    amplitude: float
    width: float
    polarity_sequence: tuple[int, ...] = field(default=(1,))

    def __post_init__(self) -> None:
        object.__setattr__(self, "polarity_sequence", tuple(self.polarity_sequence))
        if not math.isfinite(self.amplitude):
            raise ValueError(f"pulse amplitude must be finite, got {self.amplitude!r}")
        if not (math.isfinite(self.width) and self.width > 0):
            raise ValueError(f"pulse width must be positive, got {self.width!r}")
        if not self.polarity_sequence:
            raise ValueError("polarity_sequence is empty")
        if any(p not in (1, -1) for p in self.polarity_sequence):
            raise ValueError(f"polarity entries must be +1 or -1, got {self.polarity_sequence}")


STANDARD_PULSE = PulseSpec(STANDARD_AMPLITUDE, STANDARD_WIDTH, (1, -1))


def lobe_samples(width: float, sample_rate: float) -> int:
    """Whole samples in one lobe; edges snap down to the sample grid."""
    return int(math.floor(width * sample_rate + _SNAP_EPS))


def gen_pulse_signal(spec: PulseSpec, sample_rate: float) -> SignalTrace:
    """Piecewise-constant pulse train followed by a zero tail one lobe long.

    Args:
        spec: amplitude, lobe width and the sign of each successive lobe.
        sample_rate: Hz; must give at least 10 samples per lobe.

    Returns:
        Trace of ``(len(polarity_sequence) + 1) * lobe`` samples starting at t = 0.
    """
    if not (math.isfinite(sample_rate) and sample_rate > 0):
        raise ValueError(f"sample_rate must be positive, got {sample_rate!r}")
    n = lobe_samples(spec.width, sample_rate)
    if n < MIN_SAMPLES_PER_LOBE:
        raise ResolutionError(
            f"{sample_rate:g} Hz gives {n} samples per {spec.width:g} s lobe "
            f"(need >= {MIN_SAMPLES_PER_LOBE})"
        )
    levels = [p * float(spec.amplitude) for p in spec.polarity_sequence] + [0.0]
    return SignalTrace(sample_rate, np.repeat(levels, n))


def gen_standard_signal(sample_rate: float) -> SignalTrace:
    """+2.5 V for 10 ms, then -2.5 V for 10 ms, then 10 ms of zeros."""
    if not sample_rate >= MIN_STANDARD_RATE:
        raise ResolutionError(
            f"standard signal needs >= {MIN_STANDARD_RATE:g} Hz, got {sample_rate!r}"
        )
    return gen_pulse_signal(STANDARD_PULSE, sample_rate)


def add_noise(trace: SignalTrace, rms: float, seed: int) -> SignalTrace:
    """Add white Gaussian noise drawn from a seeded PCG64 generator."""
    if not (math.isfinite(rms) and rms >= 0):
        raise ValueError(f"rms must be finite and >= 0, got {rms!r}")
    if rms == 0:
        return trace
    rng = np.random.default_rng(seed)
    return trace.with_samples(trace.samples + rms * rng.standard_normal(len(trace)))


def gen_probe_signal(
    sample_rate: float,
    duration: float,
    flux_peak: float = 0.05,
    ramp_up: float = 2.0,
    flat_top: float = 5.0,
    ramp_down: float = 2.0,
    t_on: float = 1.0,
) -> SignalTrace:
    """Synthetic pickup-coil voltage for demos.

    The voltage is the time derivative of a flux waveform that rises along a
    half-cosine ramp, holds a flat top, then falls back to zero, roughly the
    shape of a plasma current. ``flux_peak`` is in V*s, so an ideal integrator
    with time constant RC plateaus at ``-flux_peak / RC``.
    """
    n = int(round(duration * sample_rate)) + 1
    t = np.arange(n) / sample_rate
    v = np.zeros(n)
    up = (t >= t_on) & (t < t_on + ramp_up)
    v[up] = flux_peak * np.pi / (2 * ramp_up) * np.sin(np.pi * (t[up] - t_on) / ramp_up)
    t_down = t_on + ramp_up + flat_top
    down = (t >= t_down) & (t < t_down + ramp_down)
    v[down] = -flux_peak * np.pi / (2 * ramp_down) * np.sin(np.pi * (t[down] - t_down) / ramp_down)
    return SignalTrace(sample_rate, v)
