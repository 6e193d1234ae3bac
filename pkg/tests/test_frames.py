import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from pmsm_injection.frames import K, angle_diff, rotate, rotation, wrap_angle

angles = st.floats(-20.0, 20.0, allow_nan=False)


def test_rotation_quarter_turn():
    assert rotate((1.0, 0.0), math.pi / 2) == pytest.approx((0.0, 1.0), abs=1e-15)
    assert np.allclose(rotation(math.pi / 2), K)


@given(angles)
def test_rotation_derivative_is_K_M(mu):
    h = 1e-6
    fd = (rotation(mu + h) - rotation(mu - h)) / (2 * h)
    assert np.allclose(fd, K @ rotation(mu), atol=1e-9)


@given(angles, angles)
def test_rotation_composes_and_is_orthogonal(a, b):
    assert np.allclose(rotation(a) @ rotation(b), rotation(a + b))
    assert np.allclose(rotation(a).T @ rotation(a), np.eye(2))
    v = rotate(rotate((0.3, -1.2), a), -a)
    assert v == pytest.approx((0.3, -1.2))


def test_rotation_vectorized_shape():
    mu = np.linspace(0, 1, 5)
    assert rotation(mu).shape == (5, 2, 2)
    x, y = rotate((np.ones(5), np.zeros(5)), mu)
    assert np.allclose(x, np.cos(mu)) and np.allclose(y, np.sin(mu))


@given(angles)
def test_wrap_angle_range_and_congruence(a):
    w = wrap_angle(a)
    assert -math.pi < w <= math.pi
    assert math.isclose(math.remainder(w - a, 2 * math.pi), 0.0, abs_tol=1e-9)


def test_wrap_angle_edges():
    assert wrap_angle(math.pi) == pytest.approx(math.pi)
    assert wrap_angle(-math.pi) == pytest.approx(math.pi)
    assert isinstance(wrap_angle(0.5), float)
    assert angle_diff(math.pi - 0.1, -math.pi + 0.1) == pytest.approx(-0.2)
