"""
High-frequency injection waveforms and the injected voltage.

A waveform ``f`` is 2*pi periodic with zero mean; ``F`` is its zero-mean
primitive.  Built-ins are the square wave and the sine; arbitrary shapes are
given as a uniformly sampled single-period table and interpolated linearly.
"""

from __future__ import annotations

import csv
import dataclasses
import math
from pathlib import Path
from typing import Union

import numpy as np

TWO_PI = 2.0 * math.pi


@dataclasses.dataclass(frozen=True, eq=False)
class WaveformTable:
    """
    One period of ``f`` sampled at ``sigma_k = 2*pi*k/N``.

    The mean is removed on construction.  ``F`` is integrated exactly from the
    piecewise-linear ``f`` (so it is piecewise quadratic) and shifted to zero mean.
    """

    values: np.ndarray

    def __post_init__(self) -> None:
        v = np.asarray(self.values, dtype=float).ravel()
        if v.size < 2 or not np.all(np.isfinite(v)):
            raise ValueError("waveform table needs at least two finite samples")
        v = v - v.mean()
        if abs(v.mean()) > 1e-12:
            raise ValueError("waveform table mean could not be removed")
        h = TWO_PI / v.size
        nxt = np.roll(v, -1)
        # primitive at the nodes, then per-interval mean of the quadratic pieces
        nodes = np.concatenate([[0.0], np.cumsum(h * (v + nxt) / 2)])[:-1]
        seg_mean = nodes + h * v / 2 + h * (nxt - v) / 6
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "_next", nxt)
        object.__setattr__(self, "_nodes", nodes - seg_mean.mean())
        object.__setattr__(self, "_h", h)

    def _locate(self, sigma):
        s = np.mod(np.asarray(sigma, dtype=float), TWO_PI)
        k = np.minimum((s // self._h).astype(int), self.values.size - 1)
        return k, s - k * self._h

    def f(self, sigma):
        k, r = self._locate(sigma)
        v0, v1 = self.values[k], self._next[k]
        return v0 + (v1 - v0) * r / self._h

    def F(self, sigma):
        k, r = self._locate(sigma)
        v0, v1 = self.values[k], self._next[k]
        return self._nodes[k] + v0 * r + (v1 - v0) * r * r / (2 * self._h)

    @classmethod
    def from_csv(cls, path: str | Path) -> WaveformTable:
        """Read a two-column ``sigma,f`` CSV covering exactly one period."""
        rows = []
        with open(path, newline="") as fh:
            for row in csv.reader(fh):
                if not row or row[0].strip().startswith("#"):
                    continue
                try:
                    rows.append((float(row[0]), float(row[1])))
                except ValueError:
                    if rows:
                        raise
                    continue  # header line
        data = np.array(rows)
        if data.shape[0] < 2:
            raise ValueError(f"{path}: waveform table needs at least two rows")
        sigma, values = data[:, 0], data[:, 1]
        if np.isclose(sigma[-1] - sigma[0], TWO_PI):
            # closed table: last row repeats the first period point
            sigma, values = sigma[:-1], values[:-1]
        n = sigma.size
        expected = TWO_PI * np.arange(n) / n
        if not np.allclose(sigma, expected, atol=1e-9 * TWO_PI):
            raise ValueError(f"{path}: sigma column must be uniform over exactly one period")
        if abs(sigma[0]) > 1e-12:
            raise ValueError(f"{path}: table must start at sigma=0")
        return cls(values)


Waveform = Union[str, WaveformTable]


@dataclasses.dataclass(frozen=True)
class InjectionConfig:
    """Injection pulsation (rad/s), constant amplitude vector (V) and waveform shape."""

    omega_inj: float = TWO_PI * 500.0
    u_tilde: tuple[float, float] = (15.0, 0.0)
    waveform: Waveform = "square"

    def __post_init__(self) -> None:
        if not self.omega_inj > 0:
            raise ValueError(f"omega_inj must be positive, got {self.omega_inj}")
        if isinstance(self.waveform, str) and self.waveform not in ("square", "sine"):
            raise ValueError(f"unknown waveform {self.waveform!r}")
        object.__setattr__(self, "u_tilde", (float(self.u_tilde[0]), float(self.u_tilde[1])))

    @property
    def period(self) -> float:
        return TWO_PI / self.omega_inj

    def with_amplitude(self, u_tilde) -> InjectionConfig:
        return dataclasses.replace(self, u_tilde=tuple(u_tilde))


def f(sigma, cfg: InjectionConfig):
    """Injection waveform at phase ``sigma`` (rad)."""
    if cfg.waveform == "square":
        s = np.mod(sigma, TWO_PI)
        return np.where(s < math.pi, 1.0, -1.0) if np.ndim(s) else (1.0 if s < math.pi else -1.0)
    if cfg.waveform == "sine":
        return np.sin(sigma)
    return cfg.waveform.f(sigma)


def F(sigma, cfg: InjectionConfig):
    """Zero-mean primitive of :func:`f`."""
    if cfg.waveform == "square":
        s = np.mod(sigma, TWO_PI)
        return np.where(s < math.pi, s - math.pi / 2, 1.5 * math.pi - s) if np.ndim(s) else (
            s - math.pi / 2 if s < math.pi else 1.5 * math.pi - s)
    if cfg.waveform == "sine":
        return -np.cos(sigma)
    return cfg.waveform.F(sigma)


def F_max(cfg: InjectionConfig) -> float:
    if cfg.waveform == "square":
        return math.pi / 2
    if cfg.waveform == "sine":
        return 1.0
    grid = np.linspace(0.0, TWO_PI, 20001)
    return float(np.max(F(grid, cfg)))


def injected_voltage(t, base_u, cfg: InjectionConfig):
    """``base_u + u_tilde * f(Omega t)`` in the controller frame."""
    w = f(cfg.omega_inj * np.asarray(t, dtype=float) if np.ndim(t) else cfg.omega_inj * t, cfg)
    return base_u[0] + cfg.u_tilde[0] * w, base_u[1] + cfg.u_tilde[1] * w
