"""Independent reference computations used to freeze expected values.

Nothing here imports the package's numerics: integrals are done in exact
rational arithmetic, least squares via the normal equations in Fractions.
"""

from fractions import Fraction


def exact_piecewise_constant_integral(levels, durations):
    """Integral of a step function given as (level, duration) pieces."""
    return sum(Fraction(level) * Fraction(d) for level, d in zip(levels, durations))


def exact_trapezoid_final(samples, sample_rate):
    """Trapezoid rule evaluated in rationals; exact for the interpolating polyline."""
    dt = 1 / Fraction(sample_rate)
    fs = [Fraction(v) for v in samples]
    return sum((a + b) / 2 * dt for a, b in zip(fs, fs[1:]))


def exact_ols(ts, ys):
    """Slope and intercept of the least-squares line, solved in rationals."""
    ts = [Fraction(t) for t in ts]
    ys = [Fraction(y) for y in ys]
    n = len(ts)
    st, sy = sum(ts), sum(ys)
    stt = sum(t * t for t in ts)
    sty = sum(t * y for t, y in zip(ts, ys))
    slope = (n * sty - st * sy) / (n * stt - st * st)
    intercept = (sy - slope * st) / n
    return slope, intercept


def ols_slope_std(ts, sigma):
    """Standard deviation of the OLS slope under white noise of rms ``sigma``."""
    n = len(ts)
    mean = sum(ts) / n
    sxx = sum((t - mean) ** 2 for t in ts)
    return sigma / sxx**0.5
