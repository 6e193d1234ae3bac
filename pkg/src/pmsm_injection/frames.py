"""Rotation utilities for the dq (rotor), gamma-delta (controller) and alpha-beta (stator) frames."""

from __future__ import annotations

import numpy as np

# d/dmu M_mu = K M_mu
K = np.array([[0.0, -1.0], [1.0, 0.0]])


def rotation(mu) -> np.ndarray:
    """Rotation matrix ``M_mu``; shape ``(..., 2, 2)`` for array input."""
    c, s = np.cos(mu), np.sin(mu)
    return np.stack([np.stack([c, -s], -1), np.stack([s, c], -1)], -2)


def rotate(v, mu):
    """Return ``M_mu v`` for a 2-vector ``v`` (components may be arrays)."""
    x, y = v
    c, s = np.cos(mu), np.sin(mu)
    return (c * x - s * y, s * x + c * y)


def wrap_angle(a):
    """Wrap to ]-pi, pi]."""
    w = np.pi - np.mod(np.pi - np.asarray(a, dtype=float), 2 * np.pi)
    if w.ndim == 0:
        return float(w)
    return w


def angle_diff(a, b):
    """Wrapped difference ``a - b``."""
    return wrap_angle(np.asarray(a) - np.asarray(b))

