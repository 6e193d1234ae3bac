"""
Electromechanical PMSM simulation with the flux linkage as electrical state.

State equations (rotor frame, electrical angle and speed)::

    dphi/dt = u - R i - omega K (phi + phi_m)
    (J/n^2) domega/dt = 3/2 i^T K (phi + phi_m) - tau_L/n
    dtheta/dt = omega

with ``i = current_from_flux(phi)``.  Integration is classical fixed-step RK4.
Time-varying inputs are evaluated at each RK stage with one-sided limits at the
step boundaries, so discontinuities that fall on the step grid (square-wave
edges, load steps) do not degrade the order.
"""

from __future__ import annotations

import dataclasses
import math
from typing import Callable, Sequence, Union

import numpy as np

from . import injection
from .frames import rotate, wrap_angle
from .injection import InjectionConfig
from .magnetics import (FluxDQ, ModelValidityError, MotorParams, current_from_flux,
                        flux_jacobian)

DEFAULT_SAMPLE_RATE = 4000.0
STEPS_PER_PERIOD = 40

# nudges that turn stage times at step boundaries into one-sided limits
_EDGE = 1e-9


@dataclasses.dataclass(frozen=True)
class MotorState:
    phi: FluxDQ
    omega: float = 0.0
    theta: float = 0.0

    @classmethod
    def zero(cls) -> MotorState:
        return cls(FluxDQ(0.0, 0.0), 0.0, 0.0)


@dataclasses.dataclass(frozen=True)
class SimInput:
    """
    Voltage, load and (for the gamma-delta frame) the controller angle/speed.

    ``frame`` is one of ``"dq"``, ``"gd"`` (controller frame, needs ``theta_c``)
    or ``"ab"`` (stator frame).
    """

    u: tuple[float, float] = (0.0, 0.0)
    frame: str = "dq"
    tau_L: float = 0.0
    theta_c: float | None = None
    omega_c: float = 0.0

    def __post_init__(self) -> None:
        if self.frame not in ("dq", "gd", "ab"):
            raise ValueError(f"unknown frame tag {self.frame!r}")
        if self.frame == "gd" and self.theta_c is None:
            raise ValueError("gamma-delta input requires theta_c")

    def u_dq(self, theta: float) -> tuple[float, float]:
        if self.frame == "dq":
            return self.u
        if self.frame == "gd":
            return rotate(self.u, self.theta_c - theta)
        return rotate(self.u, -theta)


@dataclasses.dataclass(frozen=True)
class StateDerivative:
    dphi: FluxDQ
    domega: float
    dtheta: float


def _rhs(phi_d, phi_q, omega, u_d, u_q, tau_L, p: MotorParams):
    d2, q2 = phi_d * phi_d, phi_q * phi_q
    i_d = phi_d / p.Ld + 3 * p.a30 * d2 + p.a12 * q2 + 4 * p.a40 * d2 * phi_d + 2 * p.a22 * phi_d * q2
    i_q = phi_q / p.Lq + 2 * p.a12 * phi_d * phi_q + 2 * p.a22 * d2 * phi_q + 4 * p.a04 * q2 * phi_q
    flux_d = phi_d + p.lam
    dphi_d = u_d - p.R * i_d + omega * phi_q
    dphi_q = u_q - p.R * i_q - omega * flux_d
    torque = 1.5 * p.n * (i_q * flux_d - i_d * phi_q)
    domega = p.n * (torque - tau_L) / p.J
    return dphi_d, dphi_q, domega


def electromagnetic_torque(phi: FluxDQ, p: MotorParams) -> float:
    """Shaft torque (N m) produced at flux ``phi``."""
    i_d, i_q = current_from_flux(phi, p)
    return 1.5 * p.n * (i_q * (phi[0] + p.lam) - i_d * phi[1])


def derivatives(s: MotorState, inp: SimInput, p: MotorParams) -> StateDerivative:
    u_d, u_q = inp.u_dq(s.theta)
    dphi_d, dphi_q, domega = _rhs(s.phi[0], s.phi[1], s.omega, u_d, u_q, inp.tau_L, p)
    return StateDerivative(FluxDQ(dphi_d, dphi_q), domega, s.omega)


InputLike = Union[SimInput, Callable[[float], SimInput]]


def _check_valid(phi_d, phi_q, p: MotorParams, t: float) -> None:
    g = flux_jacobian((phi_d, phi_q), p)
    if not (g.a_dd > 0 and g.det > 0 and math.isfinite(phi_d) and math.isfinite(phi_q)):
        raise ModelValidityError(
            f"state left the magnetic model validity region at t={t:.6g} s "
            f"(phi_dq=({phi_d:.6g}, {phi_q:.6g}) Wb)"
        )


def step(s: MotorState, inp: InputLike, p: MotorParams, dt: float, t: float = 0.0) -> MotorState:
    """
    One RK4 step of length ``dt``.

    ``inp`` is either a constant :class:`SimInput` or a callable of time.

    Raises
    ------
    ModelValidityError
        If the new flux is outside the region where the energy Hessian is positive-definite.
    """
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    at = inp if callable(inp) else (lambda _t: inp)
    eps = _EDGE * dt

    def f(phi_d, phi_q, omega, theta, tt):
        i = at(tt)
        u_d, u_q = i.u_dq(theta)
        dd, dq, dw = _rhs(phi_d, phi_q, omega, u_d, u_q, i.tau_L, p)
        return dd, dq, dw, omega

    x = (s.phi[0], s.phi[1], s.omega, s.theta)
    k1 = f(*x, t + eps)
    k2 = f(*(a + 0.5 * dt * b for a, b in zip(x, k1)), t + 0.5 * dt)
    k3 = f(*(a + 0.5 * dt * b for a, b in zip(x, k2)), t + 0.5 * dt)
    k4 = f(*(a + dt * b for a, b in zip(x, k3)), t + dt - eps)
    new = [a + dt / 6 * (b1 + 2 * b2 + 2 * b3 + b4) for a, b1, b2, b3, b4 in zip(x, k1, k2, k3, k4)]
    _check_valid(new[0], new[1], p, t + dt)
    return MotorState(FluxDQ(new[0], new[1]), new[2], new[3])


def locked_rotor_step(phi: FluxDQ, u_dq, p: MotorParams, dt: float, t: float = 0.0) -> FluxDQ:
    """
    RK4 step of ``dphi/dt = u - R i`` (rotor blocked at theta = 0).

    ``u_dq`` may be a constant pair or a callable of time.
    """
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    at = u_dq if callable(u_dq) else (lambda _t: u_dq)
    eps = _EDGE * dt

    def f(d, q, tt):
        u_d, u_q = at(tt)
        i_d, i_q = current_from_flux((d, q), p)
        return u_d - p.R * i_d, u_q - p.R * i_q

    d, q = phi
    k1 = f(d, q, t + eps)
    k2 = f(d + 0.5 * dt * k1[0], q + 0.5 * dt * k1[1], t + 0.5 * dt)
    k3 = f(d + 0.5 * dt * k2[0], q + 0.5 * dt * k2[1], t + 0.5 * dt)
    k4 = f(d + dt * k3[0], q + dt * k3[1], t + dt - eps)
    nd = d + dt / 6 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
    nq = q + dt / 6 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
    _check_valid(nd, nq, p, t + dt)
    return FluxDQ(nd, nq)


def simulate_locked_rotor(u_bar, cfg: InjectionConfig, p: MotorParams, duration: float, *,
                          phi0: FluxDQ | None = None, dt: float | None = None,
                          sample_rate: float = DEFAULT_SAMPLE_RATE):
    """
    Locked-rotor response to ``u_bar + u_tilde f(Omega t)`` (dq frame).

    Returns ``(t, i_d, i_q)`` sampled at ``sample_rate``.
    """
    dt, decim = _step_grid(cfg, dt, sample_rate)
    n_steps = int(round(duration / dt))
    if n_steps % decim:
        n_steps += decim - n_steps % decim
    tt = np.arange(2 * n_steps + 1) * (dt / 2)
    wR = injection.f(cfg.omega_inj * (tt + _EDGE * dt), cfg)
    wL = injection.f(cfg.omega_inj * (tt - _EDGE * dt), cfg)
    ub_d, ub_q = float(u_bar[0]), float(u_bar[1])
    ut_d, ut_q = cfg.u_tilde
    R = p.R
    d, q = (0.0, 0.0) if phi0 is None else (float(phi0[0]), float(phi0[1]))
    n_samples = n_steps // decim + 1
    out_d = np.empty(n_samples)
    out_q = np.empty(n_samples)
    i_d, i_q = current_from_flux((d, q), p)
    out_d[0], out_q[0] = i_d, i_q
    cur = _current_fn(p)
    wR_l, wL_l = wR.tolist(), wL.tolist()
    for k in range(n_steps):
        w1, w2, w4 = wR_l[2 * k], wR_l[2 * k + 1], wL_l[2 * k + 2]
        a_d, a_q = cur(d, q)
        k1d, k1q = ub_d + ut_d * w1 - R * a_d, ub_q + ut_q * w1 - R * a_q
        a_d, a_q = cur(d + 0.5 * dt * k1d, q + 0.5 * dt * k1q)
        k2d, k2q = ub_d + ut_d * w2 - R * a_d, ub_q + ut_q * w2 - R * a_q
        a_d, a_q = cur(d + 0.5 * dt * k2d, q + 0.5 * dt * k2q)
        k3d, k3q = ub_d + ut_d * w2 - R * a_d, ub_q + ut_q * w2 - R * a_q
        a_d, a_q = cur(d + dt * k3d, q + dt * k3q)
        k4d, k4q = ub_d + ut_d * w4 - R * a_d, ub_q + ut_q * w4 - R * a_q
        d += dt / 6 * (k1d + 2 * k2d + 2 * k3d + k4d)
        q += dt / 6 * (k1q + 2 * k2q + 2 * k3q + k4q)
        if (k + 1) % decim == 0:
            _check_valid(d, q, p, (k + 1) * dt)
            j = (k + 1) // decim
            out_d[j], out_q[j] = cur(d, q)
    t = np.arange(n_samples) * (dt * decim)
    return t, out_d, out_q


def _current_fn(p: MotorParams):
    iLd, iLq = 1 / p.Ld, 1 / p.Lq
    a30, a12, a40, a22, a04 = 3 * p.a30, p.a12, 4 * p.a40, 2 * p.a22, 4 * p.a04
    b12, b22 = 2 * p.a12, 2 * p.a22

    def cur(d, q):
        d2, q2 = d * d, q * q
        return (d * iLd + a30 * d2 + a12 * q2 + a40 * d2 * d + a22 * d * q2,
                q * iLq + b12 * d * q + b22 * d2 * q + a04 * q2 * q)

    return cur


def _step_grid(cfg: InjectionConfig, dt: float | None, sample_rate: float) -> tuple[float, int]:
    """Integration step and the number of steps per output sample."""
    sample_dt = 1.0 / sample_rate
    if dt is None:
        dt = cfg.period / STEPS_PER_PERIOD
    decim = int(round(sample_dt / dt))
    if decim < 1 or abs(decim * dt - sample_dt) > 1e-9 * sample_dt:
        raise ValueError(f"sample period {sample_dt:g} s is not an integer multiple of dt={dt:g} s")
    return dt, decim


# --- scenarios --------------------------------------------------------------------------------

Knots = Sequence[tuple[float, float]]


def piecewise_linear(knots: Knots, t):
    """
    Right-continuous piecewise-linear interpolation; repeating a knot time makes a step.

    Constant extrapolation outside the knot range.
    """
    ts = np.array([k[0] for k in knots], dtype=float)
    vs = np.array([k[1] for k in knots], dtype=float)
    t = np.asarray(t, dtype=float)
    j = np.searchsorted(ts, t, side="right")
    out = np.empty_like(t)
    before = j == 0
    after = j == len(ts)
    mid = ~(before | after)
    out[before] = vs[0]
    out[after] = vs[-1]
    jm = j[mid]
    t0, t1 = ts[jm - 1], ts[jm]
    v0, v1 = vs[jm - 1], vs[jm]
    span = t1 - t0
    frac = np.divide(t[mid] - t0, span, out=np.zeros_like(span), where=span > 0)
    out[mid] = v0 + (v1 - v0) * frac
    return out


def filtered_steps(targets: Sequence[tuple[float, tuple[float, float]]], tau: float, t):
    """First-order low-pass (time constant ``tau``, zero initial state) of piecewise-constant targets."""
    t = np.asarray(t, dtype=float)
    out_g = np.zeros_like(t)
    out_d = np.zeros_like(t)
    prev = (0.0, 0.0)
    for t_k, value in targets:
        jump_g, jump_d = value[0] - prev[0], value[1] - prev[1]
        prev = (value[0], value[1])
        active = t >= t_k
        if tau > 0:
            resp = np.where(active, -np.expm1(-np.maximum(t - t_k, 0.0) / tau), 0.0)
        else:
            resp = active.astype(float)
        out_g += jump_g * resp
        out_d += jump_d * resp
    return out_g, out_d


@dataclasses.dataclass(frozen=True)
class Profile:
    """
    Open-loop V/f scenario: controller speed, load torque and the low-frequency voltage.

    ``omega_c`` (electrical rad/s) and ``tau_L`` (N m) are piecewise-linear knots;
    ``u_rd`` are piecewise-constant gamma-delta voltage targets (V) smoothed by a
    first-order filter of time constant ``u_rd_tau``.  ``u_tilde`` optionally
    overrides the injection amplitude for this scenario.
    """

    duration: float
    omega_c: tuple[tuple[float, float], ...] = ((0.0, 0.0),)
    tau_L: tuple[tuple[float, float], ...] = ((0.0, 0.0),)
    u_rd: tuple[tuple[float, tuple[float, float]], ...] = ()
    u_rd_tau: float = 0.05
    u_tilde: tuple[float, float] | None = None
    name: str = "custom"

    def __post_init__(self) -> None:
        if not self.duration > 0:
            raise ValueError(f"duration must be positive, got {self.duration}")
        for label, knots in (("omega_c", self.omega_c), ("tau_L", self.tau_L)):
            times = [k[0] for k in knots]
            if not knots or any(b < a for a, b in zip(times, times[1:])):
                raise ValueError(f"{label} knots must be non-empty with non-decreasing times")

    def speed(self, t):
        return piecewise_linear(self.omega_c, t)

    def load(self, t):
        return piecewise_linear(self.tau_L, t)

    def base_voltage(self, t):
        return filtered_steps(self.u_rd, self.u_rd_tau, t)


@dataclasses.dataclass(frozen=True, eq=False)
class ScenarioTrace:
    """
    Uniformly sampled simulation record.

    Angles are wrapped to ]-pi, pi].  ``phi_d``/``phi_q`` (true rotor-frame flux) are
    kept for analysis but are not part of the CSV schema.
    """

    t: np.ndarray
    u_gamma: np.ndarray
    u_delta: np.ndarray
    i_gamma: np.ndarray
    i_delta: np.ndarray
    i_alpha: np.ndarray
    i_beta: np.ndarray
    theta: np.ndarray
    omega: np.ndarray
    theta_c: np.ndarray
    tau_L: np.ndarray
    phi_d: np.ndarray | None = None
    phi_q: np.ndarray | None = None

    COLUMNS = ("t", "u_gamma", "u_delta", "i_gamma", "i_delta", "i_alpha", "i_beta",
               "theta", "omega", "theta_c", "tau_L")

    def __post_init__(self) -> None:
        dt = np.diff(self.t)
        if dt.size and (np.any(dt <= 0) or np.ptp(dt) > 1e-6 * dt.mean()):
            raise ValueError("trace timestamps must be strictly increasing with constant step")
        for name in self.COLUMNS + ("phi_d", "phi_q"):
            arr = getattr(self, name)
            if arr is not None:
                arr.setflags(write=False)

    def __len__(self) -> int:
        return self.t.size

    @property
    def sample_rate(self) -> float:
        return 1.0 / (self.t[1] - self.t[0]) if len(self) > 1 else DEFAULT_SAMPLE_RATE

    def columns(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in self.COLUMNS}


def _inputs_on_grid(profile: Profile, cfg: InjectionConfig, p: MotorParams, tt: np.ndarray, h: float,
                    side: int):
    """Controller voltage, speed and load on stage times; ``side`` picks the one-sided limit."""
    ts = tt + side * _EDGE * h
    ts = np.clip(ts, 0.0, None)
    w = injection.f(cfg.omega_inj * ts, cfg)
    omega_c = profile.speed(ts)
    u_g, u_d = profile.base_voltage(ts)
    # back-EMF compensation omega_c K phi_m lies on the delta axis
    u_g = u_g + cfg.u_tilde[0] * w
    u_d = u_d + omega_c * p.lam + cfg.u_tilde[1] * w
    return u_g, u_d, omega_c, profile.load(ts)


def run_scenario(profile: Profile, cfg: InjectionConfig, p: MotorParams, *, dt: float | None = None,
                 sample_rate: float = DEFAULT_SAMPLE_RATE, noise_std: float = 0.0,
                 seed: int | None = None, state_frame: str = "dq",
                 initial: MotorState | None = None) -> ScenarioTrace:
    """
    Simulate the machine under the open-loop V/f law plus injection.

    ``u_gd = u_rd(t) + omega_c(t) K phi_m + u_tilde f(Omega t)`` and
    ``dtheta_c/dt = omega_c(t)``.  Integration runs on a fine grid (default
    40 steps per injection period) and is decimated to ``sample_rate``.
    ``state_frame="gd"`` integrates the flux in the controller frame instead
    (same physics, used for cross-checking).  Optional white noise of standard
    deviation ``noise_std`` is added to the sampled stator-frame currents.
    """
    if state_frame not in ("dq", "gd"):
        raise ValueError(f"state_frame must be 'dq' or 'gd', got {state_frame!r}")
    if profile.u_tilde is not None:
        cfg = cfg.with_amplitude(profile.u_tilde)
    h, decim = _step_grid(cfg, dt, sample_rate)
    n_steps = int(round(profile.duration / h))
    n_steps -= n_steps % decim
    tt = np.arange(2 * n_steps + 1) * (h / 2)
    gR = [a.tolist() for a in _inputs_on_grid(profile, cfg, p, tt, h, +1)]
    gL = [a.tolist() for a in _inputs_on_grid(profile, cfg, p, tt, h, -1)]

    s0 = initial or MotorState.zero()
    pd, pq, om, th, thc = float(s0.phi[0]), float(s0.phi[1]), float(s0.omega), float(s0.theta), 0.0
    if state_frame == "gd":
        pd, pq = rotate((pd, pq), th - thc)
    n_samples = n_steps // decim + 1
    rec = np.empty((n_samples, 7))  # phi_d, phi_q, omega, theta, theta_c, u_g, u_d
    cur = _current_fn(p)
    R, n, J, lam = p.R, p.n, p.J, p.lam
    n_over_J = n / J

    if state_frame == "dq":
        def rhs(a, b, w, th_, thc_, ug, ud, wc, tl):
            e = th_ - thc_
            c, s = math.cos(e), math.sin(e)
            u_d = c * ug + s * ud
            u_q = c * ud - s * ug
            i_d, i_q = cur(a, b)
            fd = a + lam
            torque = 1.5 * n * (i_q * fd - i_d * b)
            return (u_d - R * i_d + w * b, u_q - R * i_q - w * fd,
                    n_over_J * (torque - tl), w, wc)
    else:
        def rhs(a, b, w, th_, thc_, ug, ud, wc, tl):
            # a, b: flux in the controller frame
            e = th_ - thc_
            c, s = math.cos(e), math.sin(e)
            d_ = c * a + s * b
            q_ = c * b - s * a
            i_d, i_q = cur(d_, q_)
            i_g, i_dl = c * i_d - s * i_q, s * i_d + c * i_q
            m_g, m_d = c * lam, s * lam
            torque = 1.5 * n * (i_dl * (a + m_g) - i_g * (b + m_d))
            return (ug - R * i_g + wc * b + w * m_d,
                    ud - R * i_dl - wc * a - w * m_g,
                    n_over_J * (torque - tl), w, wc)

    def record(j, x, inputs):
        rec[j, :5] = x
        rec[j, 5], rec[j, 6] = inputs[0], inputs[1]

    x = (pd, pq, om, th, thc)
    record(0, x, (gR[0][0], gR[1][0]))
    for k in range(n_steps):
        j0, j1, j2 = 2 * k, 2 * k + 1, 2 * k + 2
        k1 = rhs(*x, gR[0][j0], gR[1][j0], gR[2][j0], gR[3][j0])
        xa = tuple(a + 0.5 * h * b for a, b in zip(x, k1))
        k2 = rhs(*xa, gR[0][j1], gR[1][j1], gR[2][j1], gR[3][j1])
        xa = tuple(a + 0.5 * h * b for a, b in zip(x, k2))
        k3 = rhs(*xa, gR[0][j1], gR[1][j1], gR[2][j1], gR[3][j1])
        xa = tuple(a + h * b for a, b in zip(x, k3))
        k4 = rhs(*xa, gL[0][j2], gL[1][j2], gL[2][j2], gL[3][j2])
        x = tuple(a + h / 6 * (b1 + 2 * b2 + 2 * b3 + b4) for a, b1, b2, b3, b4 in zip(x, k1, k2, k3, k4))
        if (k + 1) % decim == 0:
            j = (k + 1) // decim
            fd, fq = x[0], x[1]
            if state_frame == "gd":
                fd, fq = rotate((fd, fq), x[4] - x[3])
            _check_valid(fd, fq, p, (k + 1) * h)
            record(j, (fd, fq) + x[2:], (gR[0][j2], gR[1][j2]))
    if state_frame == "gd":
        rec[0, 0], rec[0, 1] = rotate((rec[0, 0], rec[0, 1]), rec[0, 4] - rec[0, 3])

    t = np.arange(n_samples) * (h * decim)
    phi_d, phi_q, omega, theta, theta_c = rec[:, 0], rec[:, 1], rec[:, 2], rec[:, 3], rec[:, 4]
    i_d, i_q = current_from_flux(FluxDQ(phi_d, phi_q), p)
    i_a, i_b = rotate((i_d, i_q), theta)
    if noise_std > 0:
        rng = np.random.default_rng(seed)
        i_a = i_a + rng.normal(0.0, noise_std, i_a.shape)
        i_b = i_b + rng.normal(0.0, noise_std, i_b.shape)
    i_g, i_dl = rotate((i_a, i_b), -theta_c)
    return ScenarioTrace(
        t=t, u_gamma=rec[:, 5].copy(), u_delta=rec[:, 6].copy(), i_gamma=np.asarray(i_g),
        i_delta=np.asarray(i_dl), i_alpha=np.asarray(i_a), i_beta=np.asarray(i_b),
        theta=wrap_angle(theta), omega=omega.copy(), theta_c=wrap_angle(theta_c),
        tau_L=profile.load(t), phi_d=phi_d.copy(), phi_q=phi_q.copy(),
    )
