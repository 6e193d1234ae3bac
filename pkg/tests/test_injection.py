import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from pmsm_injection.injection import (TWO_PI, InjectionConfig, F, F_max, WaveformTable, f,
                                      injected_voltage)

SQUARE = InjectionConfig()
SINE = InjectionConfig(waveform="sine")
TRIANGLE_TABLE = WaveformTable(np.concatenate([np.linspace(-1, 1, 50, endpoint=False),
                                               np.linspace(1, -1, 50, endpoint=False)]))
TABLE = InjectionConfig(waveform=TRIANGLE_TABLE)
ALL = {"square": SQUARE, "sine": SINE, "table": TABLE}
phases = st.floats(-50.0, 50.0, allow_nan=False)


def test_defaults():
    assert SQUARE.omega_inj == pytest.approx(2 * math.pi * 500)
    assert SQUARE.u_tilde == (15.0, 0.0)
    assert SQUARE.period == pytest.approx(2e-3)


@pytest.mark.parametrize("kw", [{"omega_inj": 0.0}, {"omega_inj": -1.0}, {"waveform": "saw"}])
def test_invalid_config(kw):
    with pytest.raises(ValueError):
        InjectionConfig(**kw)


def test_square_values():
    assert f(0.1, SQUARE) == 1.0
    assert f(math.pi + 0.1, SQUARE) == -1.0
    assert f(TWO_PI + 0.1, SQUARE) == 1.0
    assert np.array_equal(f(np.array([0.0, 4.0]), SQUARE), [1.0, -1.0])


def test_square_primitive_is_triangle():
    assert F(0.0, SQUARE) == pytest.approx(-math.pi / 2)
    assert F(math.pi, SQUARE) == pytest.approx(math.pi / 2)
    assert F_max(SQUARE) == pytest.approx(math.pi / 2)
    assert np.max(F(np.linspace(0, TWO_PI, 10001), SQUARE)) == pytest.approx(math.pi / 2)


def test_sine_primitive():
    s = np.linspace(-7, 7, 101)
    assert np.allclose(F(s, SINE), -np.cos(s))
    assert F_max(SINE) == 1.0


@pytest.mark.parametrize("name", sorted(ALL))
def test_zero_mean_over_period(name):
    cfg = ALL[name]
    s = (np.arange(200000) + 0.5) * TWO_PI / 200000
    assert abs(np.mean(f(s, cfg))) < 1e-12
    assert abs(np.mean(F(s, cfg))) < 1e-9


@pytest.mark.parametrize("name", sorted(ALL))
def test_primitive_derivative_matches_waveform(name):
    cfg = ALL[name]
    s = np.random.default_rng(1).uniform(0, TWO_PI, 500)
    h = 1e-6
    fd = (F(s + h, cfg) - F(s - h, cfg)) / (2 * h)
    # stay clear of the discontinuities of the square wave
    smooth = np.minimum(np.abs(np.mod(s, math.pi)), math.pi - np.mod(s, math.pi)) > 1e-4
    assert np.allclose(fd[smooth], f(s, cfg)[smooth], atol=1e-6)


@given(phases)
def test_periodicity(s):
    for cfg in ALL.values():
        assert F(s + TWO_PI, cfg) == pytest.approx(F(s, cfg), abs=1e-9)


def test_square_F_squared_integral():
    n = 400000
    s = (np.arange(n) + 0.5) * TWO_PI / n
    assert np.sum(F(s, SQUARE) ** 2) * TWO_PI / n == pytest.approx(math.pi**3 / 6, rel=1e-9)


def test_table_of_sine_matches_analytic():
    n = 2048
    table = InjectionConfig(waveform=WaveformTable(np.sin(TWO_PI * np.arange(n) / n)))
    s = np.linspace(0, 10, 333)
    assert np.allclose(f(s, table), np.sin(s), atol=1e-5)
    assert np.allclose(F(s, table), -np.cos(s), atol=1e-5)
    assert F_max(table) == pytest.approx(1.0, abs=1e-5)


def test_table_mean_removed():
    t = WaveformTable(np.array([3.0, 1.0, 2.0]))
    assert abs(t.values.mean()) < 1e-12
    assert np.allclose(t.values, [1.0, -1.0, 0.0])
    with pytest.raises(ValueError):
        WaveformTable(np.array([1.0]))
    with pytest.raises(ValueError):
        WaveformTable(np.array([1.0, math.nan]))


def test_table_from_csv(tmp_path):
    n = 64
    sigma = TWO_PI * np.arange(n + 1) / n
    path = tmp_path / "wave.csv"
    rows = "\n".join(f"{s:.17g},{v:.17g}" for s, v in zip(sigma, np.sign(np.sin(sigma + 1e-9))))
    path.write_text("sigma,f\n" + rows + "\n")
    table = WaveformTable.from_csv(path)
    assert table.values.size == n
    assert abs(table.values.mean()) < 1e-12
    bad = tmp_path / "bad.csv"
    bad.write_text("0,1\n0.5,-1\n3,0\n")
    with pytest.raises(ValueError, match="uniform"):
        WaveformTable.from_csv(bad)


def test_injected_voltage_alternates():
    t = np.array([0.25e-3, 1.25e-3, 2.25e-3])
    ug, ud = injected_voltage(t, (0.0, 0.0), SQUARE)
    assert np.allclose(ug, [15.0, -15.0, 15.0]) and np.allclose(ud, 0.0)
    ug, ud = injected_voltage(0.25e-3, (1.0, 2.0), SQUARE.with_amplitude((3.0, 4.0)))
    assert (ug, ud) == pytest.approx((4.0, 6.0))
