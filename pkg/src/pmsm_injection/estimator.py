"""
Rotor angle from demodulated currents.

For a candidate angle ``mu`` between the controller frame and the rotor frame the
ripple amplitude predicted by the saturation model is ``S(mu, i_bar) u_tilde / Omega``.
The estimate is ``theta_c`` plus the ``mu`` minimizing the squared mismatch with the
measured ripple: a coarse grid over ]-pi, pi] locates the basins, golden-section
search refines them.
"""

from __future__ import annotations

import dataclasses
import math
from typing import Callable

import numpy as np

from .demodulation import DemodulatedCurrents
from .frames import wrap_angle
from .magnetics import CurrentDQ, MotorParams, admittance, flux_jacobian

INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0


class EstimationError(ValueError):
    pass


@dataclasses.dataclass(frozen=True)
class PositionEstimate:
    theta_hat: float
    residual: float
    ambiguity_flag: bool


@dataclasses.dataclass(frozen=True)
class EstimatorConfig:
    """
    Tuning of the angle search.

    ``exact`` evaluates the saliency matrix with the exactly inverted flux rather
    than the closed-form first-order admittance.
    """

    grid_points: int = 360
    xtol: float = 1e-4
    ambiguity_ratio: float = 1.2
    exact: bool = False


def _saliency_entries(mu, i_g, i_d, p: MotorParams, exact: bool):
    c, s = np.cos(mu), np.sin(mu)
    rot = CurrentDQ(c * i_g + s * i_d, c * i_d - s * i_g)
    if exact:
        g = _exact_admittance(rot, p)
    else:
        g = admittance(rot, p)
    c2, s2, cs = c * c, s * s, c * s
    s_gg = c2 * g.a_dd - 2 * cs * g.a_dq + s2 * g.a_qq
    s_gd = cs * (g.a_dd - g.a_qq) + (c2 - s2) * g.a_dq
    s_dd = s2 * g.a_dd + 2 * cs * g.a_dq + c2 * g.a_qq
    valid = (g.a_dd > 0) & (g.det > 0)
    return s_gg, s_gd, s_dd, valid


def _exact_admittance(i: CurrentDQ, p: MotorParams):
    # vectorized Newton without raising: invalid points come back as NaN
    from .magnetics import current_from_flux, flux_from_current_approx

    i_d, i_q = np.broadcast_arrays(np.asarray(i[0], float), np.asarray(i[1], float))
    d, q = (np.array(x, dtype=float) for x in flux_from_current_approx((i_d, i_q), p))
    for _ in range(30):
        c_d, c_q = current_from_flux((d, q), p)
        r_d, r_q = c_d - i_d, c_q - i_q
        if np.nanmax(np.abs(r_d) + np.abs(r_q), initial=0.0) < 1e-11:
            break
        g = flux_jacobian((d, q), p)
        det = g.det
        d = d - (g.a_qq * r_d - g.a_dq * r_q) / det
        q = q - (g.a_dd * r_q - g.a_dq * r_d) / det
    c_d, c_q = current_from_flux((d, q), p)
    bad = ~(np.abs(c_d - i_d) + np.abs(c_q - i_q) < 1e-8)
    d = np.where(bad, np.nan, d)
    q = np.where(bad, np.nan, q)
    return flux_jacobian((d, q), p)


def _residual(mu, i_bar_g, i_bar_d, it_g, it_d, v_g, v_d, p, exact):
    s_gg, s_gd, s_dd, valid = _saliency_entries(mu, i_bar_g, i_bar_d, p, exact)
    e_g = it_g - (s_gg * v_g + s_gd * v_d)
    e_d = it_d - (s_gd * v_g + s_dd * v_d)
    r = e_g * e_g + e_d * e_d
    return np.where(valid, r, np.inf)


def residual(mu, d: DemodulatedCurrents, u_tilde, omega_inj: float, p: MotorParams,
             exact: bool = False):
    """Squared mismatch ``|i_tilde - S(mu, i_bar) u_tilde / Omega|^2`` (A^2); inf where invalid."""
    v_g, v_d = u_tilde[0] / omega_inj, u_tilde[1] / omega_inj
    r = _residual(np.asarray(mu, dtype=float), d.i_bar[0], d.i_bar[1], d.i_tilde[0], d.i_tilde[1],
                  v_g, v_d, p, exact)
    return float(r) if np.ndim(r) == 0 else r


def golden_section(fn: Callable, a, b, tol: float):
    """
    Vectorized golden-section minimization on brackets ``[a, b]``.

    All brackets shrink in lockstep until their width is below ``tol``.
    Returns the midpoint of the final bracket and its objective value.
    """
    a = np.array(a, dtype=float)
    b = np.array(b, dtype=float)
    width = float(np.max(b - a)) if a.size else 0.0
    n = max(0, int(math.ceil(math.log(tol / width) / math.log(INV_PHI)))) if width > tol else 0
    c = b - INV_PHI * (b - a)
    d = a + INV_PHI * (b - a)
    fc, fd = fn(c), fn(d)
    for _ in range(n):
        left = fc < fd
        b = np.where(left, d, b)
        a = np.where(left, a, c)
        new_c = b - INV_PHI * (b - a)
        new_d = a + INV_PHI * (b - a)
        # reuse the surviving interior point
        c, d, fc, fd = (np.where(left, new_c, d), np.where(left, c, new_d),
                        np.where(left, np.nan, fd), np.where(left, fc, np.nan))
        need_c, need_d = np.isnan(fc), np.isnan(fd)
        if np.any(need_c):
            fc = np.where(need_c, fn(c), fc)
        if np.any(need_d):
            fd = np.where(need_d, fn(d), fd)
    x = (a + b) / 2
    return x, fn(x)


def _candidates(d: DemodulatedCurrents, u_tilde, omega_inj: float, p: MotorParams,
                cfg: EstimatorConfig):
    """Best two refined local minima per sample: arrays ``mu (m, 2)`` and ``res (m, 2)``."""
    i_bar_g = np.atleast_1d(np.asarray(d.i_bar[0], dtype=float))
    i_bar_d = np.atleast_1d(np.asarray(d.i_bar[1], dtype=float))
    it_g = np.atleast_1d(np.asarray(d.i_tilde[0], dtype=float))
    it_d = np.atleast_1d(np.asarray(d.i_tilde[1], dtype=float))
    v_g, v_d = u_tilde[0] / omega_inj, u_tilde[1] / omega_inj
    m = i_bar_g.size
    n = cfg.grid_points
    step = 2 * math.pi / n
    grid = -math.pi + step * np.arange(1, n + 1)

    col = (slice(None), None)
    r = _residual(grid[None, :], i_bar_g[col], i_bar_d[col], it_g[col], it_d[col], v_g, v_d, p,
                  cfg.exact)
    all_bad = ~np.isfinite(r).any(axis=1)
    if np.any(all_bad):
        k = int(np.flatnonzero(all_bad)[0])
        raise EstimationError(
            f"saliency matrix invalid on the whole angle grid for i_bar=({i_bar_g[k]:.4g}, {i_bar_d[k]:.4g}) A"
        )
    left, right = np.roll(r, 1, axis=1), np.roll(r, -1, axis=1)
    is_min = (r <= left) & (r < right) & np.isfinite(r)
    masked = np.where(is_min, r, np.inf)
    order = np.argsort(masked, axis=1)[:, :2]
    mu0 = grid[order]
    has = np.isfinite(np.take_along_axis(masked, order, axis=1))

    rows = np.repeat(np.arange(m), 2)

    def objective(x):
        flat = x.ravel()
        out = _residual(flat, i_bar_g[rows], i_bar_d[rows], it_g[rows], it_d[rows], v_g, v_d, p,
                        cfg.exact)
        return out.reshape(x.shape)

    mu, res = golden_section(objective, mu0 - step, mu0 + step, cfg.xtol)
    # keep the grid point if refinement wandered to a worse value (flat or invalid region)
    grid_res = np.take_along_axis(r, order, axis=1)
    worse = ~(res <= grid_res)
    mu = np.where(worse, mu0, mu)
    res = np.where(worse, grid_res, res)
    res = np.where(has, res, np.inf)
    return wrap_angle(mu), res


def _select(mu, res, theta_c, hint, ratio, scale):
    best = 0 if res[0] <= res[1] else 1
    other = 1 - best
    ambiguous = bool(np.isfinite(res[other]) and res[other] <= ratio * res[best] + 1e-6 * scale)
    pick = best
    if ambiguous and hint is not None:
        dist = [abs(wrap_angle(theta_c + mu[k] - hint)) for k in (0, 1)]
        pick = 0 if dist[0] <= dist[1] else 1
    return PositionEstimate(wrap_angle(theta_c + mu[pick]), float(max(res[pick], 0.0)), ambiguous)


def estimate(d: DemodulatedCurrents, theta_c: float, u_tilde, omega_inj: float, p: MotorParams,
             hint: float | None = None, cfg: EstimatorConfig = EstimatorConfig()) -> PositionEstimate:
    """Estimate the rotor electrical angle for one demodulated sample."""
    if math.hypot(*u_tilde) <= 0:
        raise EstimationError("injection amplitude must be non-zero")
    mu, res = _candidates(d, u_tilde, omega_inj, p, cfg)
    scale = float(d.i_tilde[0]) ** 2 + float(d.i_tilde[1]) ** 2
    return _select(mu[0], res[0], theta_c, hint, cfg.ambiguity_ratio, scale)


@dataclasses.dataclass(frozen=True)
class EstimateSeries:
    t: np.ndarray
    theta_hat: np.ndarray
    residual: np.ndarray
    ambiguity: np.ndarray


def estimate_series(d: DemodulatedCurrents, theta_c, u_tilde, omega_inj: float, p: MotorParams,
                    cfg: EstimatorConfig = EstimatorConfig(), use_hint: bool = True,
                    initial_hint: float | None = None) -> EstimateSeries:
    """
    Per-sample estimates for a demodulated series.

    With ``use_hint`` each ambiguous sample picks the candidate closest to the
    previous estimate (``initial_hint`` for the first one).
    """
    if math.hypot(*u_tilde) <= 0:
        raise EstimationError("injection amplitude must be non-zero")
    m = len(d)
    theta_c = np.broadcast_to(np.asarray(theta_c, dtype=float), (m,))
    if m == 0:
        empty = np.empty(0)
        return EstimateSeries(empty, empty, empty, np.empty(0, dtype=bool))
    mu, res = _candidates(d, u_tilde, omega_inj, p, cfg)
    scale = np.asarray(d.i_tilde[0]) ** 2 + np.asarray(d.i_tilde[1]) ** 2
    out = np.empty(m)
    rr = np.empty(m)
    amb = np.empty(m, dtype=bool)
    hint = initial_hint
    for k in range(m):
        est = _select(mu[k], res[k], theta_c[k], hint, cfg.ambiguity_ratio, scale[k])
        out[k], rr[k], amb[k] = est.theta_hat, est.residual, est.ambiguity_flag
        if use_hint:
            hint = est.theta_hat
    return EstimateSeries(np.asarray(d.t), out, rr, amb)


def smooth_angles(theta, dt: float, tau: float):
    """First-order low-pass on an angle sequence (unwrapped internally)."""
    x = np.unwrap(np.asarray(theta, dtype=float))
    if tau <= 0 or x.size == 0:
        return wrap_angle(x)
    a = dt / (tau + dt)
    y = np.empty_like(x)
    y[0] = x[0]
    for k in range(1, x.size):
        y[k] = y[k - 1] + a * (x[k] - y[k - 1])
    return wrap_angle(y)
