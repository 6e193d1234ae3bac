"""
Moving-window demodulation of injected-signal currents.

The measured current is modeled as ``i_bar + i_tilde F(Omega t)``; over a trailing
window of one injection period the mean gives ``i_bar`` and the correlation with
``F`` (normalized by the correlation of ``F`` with itself on the same samples)
gives ``i_tilde``.  Both integrals use the trapezoidal rule on the sample grid.

When ``i_bar`` drifts, the part of the drift that correlates with ``F`` over the
window leaks into ``i_tilde``.  The optional trend correction removes the leak of a
linear drift, with the slope taken from successive ``i_bar`` values.
"""

from __future__ import annotations

import collections
import dataclasses
from typing import Any

import numpy as np

from . import injection
from .injection import InjectionConfig
from .magnetics import CurrentDQ


class DemodulationConfigError(ValueError):
    pass


@dataclasses.dataclass(frozen=True)
class DemodulatedCurrents:
    """Slow current and ripple amplitude (controller frame); scalars or aligned arrays."""

    t: Any
    i_bar: CurrentDQ
    i_tilde: CurrentDQ

    def __len__(self) -> int:
        return int(np.size(self.t))

    def __getitem__(self, k) -> DemodulatedCurrents:
        return DemodulatedCurrents(
            self.t[k],
            CurrentDQ(self.i_bar[0][k], self.i_bar[1][k]),
            CurrentDQ(self.i_tilde[0][k], self.i_tilde[1][k]),
        )


def samples_per_period(sample_rate: float, cfg: InjectionConfig) -> int:
    """Number of samples in one injection period; must be an integer >= 8."""
    exact = sample_rate * cfg.period
    n = int(round(exact))
    if abs(exact - n) > 1e-9 * max(1.0, exact):
        raise DemodulationConfigError(
            f"sample rate {sample_rate:g} Hz gives {exact:.6g} samples per injection period; "
            "an integer is required"
        )
    if n < 8:
        raise DemodulationConfigError(f"need at least 8 samples per injection period, got {n}")
    return n


def _weights(n_window: int) -> np.ndarray:
    w = np.ones(n_window + 1)
    w[0] = w[-1] = 0.5
    return w


def _trend_leak(F, w, n_win):
    """Per-window correlation of a unit-slope ramp (centred on the window) with ``F``."""
    s = np.arange(n_win + 1) - n_win / 2
    return np.convolve(F, (w * s)[::-1], mode="valid")


def _slope(x_bar, n_win):
    # per-sample slope of the window mean, over one window where available
    out = np.zeros_like(x_bar)
    k = np.arange(x_bar.size)
    lag = np.minimum(k, n_win)
    ok = lag > 0
    out[ok] = (x_bar[ok] - x_bar[k[ok] - lag[ok]]) / lag[ok]
    return out


def demodulate(t, i_gamma, i_delta, cfg: InjectionConfig, periods: int = 1,
               trend: bool = False) -> DemodulatedCurrents:
    """
    Demodulate sampled controller-frame currents.

    ``t`` must be uniformly spaced with an integer number of samples per
    injection period.  Output sample ``k`` covers the window ending at the
    ``k + N``-th input sample (``N`` samples per window); inputs shorter than one
    window give an empty result.  ``trend=True`` subtracts the leakage of a linear
    drift of ``i_bar`` from ``i_tilde``.
    """
    t = np.asarray(t, dtype=float)
    i_gamma = np.asarray(i_gamma, dtype=float)
    i_delta = np.asarray(i_delta, dtype=float)
    if periods < 1:
        raise DemodulationConfigError("window must span at least one period")
    if t.size < 2:
        empty = np.empty(0)
        return DemodulatedCurrents(empty, CurrentDQ(empty, empty), CurrentDQ(empty, empty))
    rate = 1.0 / (t[1] - t[0])
    n_win = samples_per_period(rate, cfg) * periods
    if t.size <= n_win:
        empty = np.empty(0)
        return DemodulatedCurrents(empty, CurrentDQ(empty, empty), CurrentDQ(empty, empty))
    w = _weights(n_win)
    F = injection.F(cfg.omega_inj * t, cfg)

    def window_sum(x):
        return np.convolve(x, w[::-1], mode="valid")

    norm = window_sum(F * F)
    i_bar = CurrentDQ(window_sum(i_gamma) / n_win, window_sum(i_delta) / n_win)
    i_tilde = CurrentDQ(window_sum(i_gamma * F) / norm, window_sum(i_delta * F) / norm)
    if trend:
        leak = _trend_leak(F, w, n_win) / norm
        i_tilde = CurrentDQ(*(it - leak * _slope(ib, n_win) for it, ib in zip(i_tilde, i_bar)))
    return DemodulatedCurrents(t[n_win:], i_bar, i_tilde)


def demodulate_trace(trace, cfg: InjectionConfig, periods: int = 1,
                     trend: bool = False) -> DemodulatedCurrents:
    return demodulate(trace.t, trace.i_gamma, trace.i_delta, cfg, periods, trend)


class StreamingDemodulator:
    """
    Sample-by-sample version of :func:`demodulate` keeping one window in a ring buffer.

    Not thread-safe; use one instance per stream.
    """

    def __init__(self, cfg: InjectionConfig, sample_rate: float, periods: int = 1,
                 trend: bool = False):
        self.cfg = cfg
        self.trend = trend
        self.n_win = samples_per_period(sample_rate, cfg) * periods
        self._w = _weights(self.n_win)
        self._s = np.arange(self.n_win + 1) - self.n_win / 2
        self._buf: collections.deque = collections.deque(maxlen=self.n_win + 1)
        self._bars: collections.deque = collections.deque(maxlen=self.n_win + 1)

    def push(self, t: float, i_gamma: float, i_delta: float) -> DemodulatedCurrents | None:
        F = float(injection.F(self.cfg.omega_inj * t, self.cfg))
        self._buf.append((t, i_gamma, i_delta, F))
        if len(self._buf) <= self.n_win:
            return None
        data = np.array(self._buf)
        w = self._w
        ig, idl, f = data[:, 1], data[:, 2], data[:, 3]
        norm = float(np.dot(w, f * f))
        bar = (float(np.dot(w, ig)) / self.n_win, float(np.dot(w, idl)) / self.n_win)
        tilde = [float(np.dot(w, ig * f)) / norm, float(np.dot(w, idl * f)) / norm]
        self._bars.append(bar)
        if self.trend and len(self._bars) > 1:
            leak = float(np.dot(w * self._s, f)) / norm
            lag = len(self._bars) - 1
            for j in (0, 1):
                tilde[j] -= leak * (self._bars[-1][j] - self._bars[0][j]) / lag
        return DemodulatedCurrents(t, CurrentDQ(*bar), CurrentDQ(*tilde))


def window_mean(x, n_win: int):
    """Trapezoidal trailing-window mean, aligned with :func:`demodulate` output."""
    return np.convolve(np.asarray(x, dtype=float), _weights(n_win), mode="valid") / n_win


def circular_window_mean(angle, n_win: int):
    """Trailing-window mean of an angle signal, computed on its unwrapped form."""
    return window_mean(np.unwrap(np.asarray(angle, dtype=float)), n_win)

