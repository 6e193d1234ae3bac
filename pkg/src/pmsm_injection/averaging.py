"""
Numerical check of the averaged closed-loop behaviour under injection.

The same V/f scenario is simulated three times on one integration grid: without
injection (the slow system), at ``Omega`` and at ``2 Omega``.  With injection the
controller-frame flux should be the slow flux plus ``u_tilde F(Omega t) / Omega``
up to a remainder of order ``1/Omega^2``, and the mechanical angle should stay
within ``O(1/Omega^2)`` of the slow one.  Doubling ``Omega`` should therefore
divide both deviations by about four.
"""

from __future__ import annotations

import dataclasses
import math

import numpy as np

from . import injection
from .frames import angle_diff, rotate
from .injection import InjectionConfig
from .magnetics import MotorParams
from .simulation import STEPS_PER_PERIOD, Profile, ScenarioTrace, run_scenario


@dataclasses.dataclass(frozen=True)
class AveragingReport:
    omega_inj: float
    theta_dev: tuple[float, float]  # max |theta - theta_slow| at Omega and 2 Omega (rad)
    flux_residual: tuple[float, float]  # max |phi - phi_slow - u_tilde F / Omega| (Wb)
    ripple_amplitude: float  # half peak-to-peak of phi - phi_slow along u_tilde at Omega (Wb)
    ripple_expected: float  # |u_tilde| / Omega * max F

    @property
    def theta_ratio(self) -> float:
        return _ratio(*self.theta_dev)

    @property
    def residual_ratio(self) -> float:
        return _ratio(*self.flux_residual)

    @property
    def ripple_error(self) -> float:
        """Relative error of the ripple amplitude against the first-order prediction."""
        if self.ripple_expected == 0:
            return 0.0 if self.ripple_amplitude == 0 else math.inf
        return abs(self.ripple_amplitude / self.ripple_expected - 1.0)

    def to_mapping(self) -> dict[str, float]:
        return {
            "omega_inj": self.omega_inj,
            "theta_dev_omega": self.theta_dev[0],
            "theta_dev_2omega": self.theta_dev[1],
            "theta_ratio": self.theta_ratio,
            "flux_residual_omega": self.flux_residual[0],
            "flux_residual_2omega": self.flux_residual[1],
            "residual_ratio": self.residual_ratio,
            "ripple_amplitude": self.ripple_amplitude,
            "ripple_expected": self.ripple_expected,
            "ripple_error": self.ripple_error,
        }


def _ratio(a: float, b: float) -> float:
    if b == 0:
        return math.nan if a == 0 else math.inf
    return a / b


def _flux_gd(trace: ScenarioTrace):
    return rotate((trace.phi_d, trace.phi_q), np.asarray(trace.theta) - np.asarray(trace.theta_c))


def averaging_check(p: MotorParams, profile: Profile, cfg: InjectionConfig = InjectionConfig(), *,
                    sample_rate: float = 40000.0, t_from: float = 0.0) -> AveragingReport:
    """
    Compare runs at ``cfg.omega_inj`` and twice that against the uninjected run.

    Deviations are measured on samples with ``t >= t_from``; the ripple amplitude
    over the last ten injection periods.  ``profile.u_tilde`` is ignored: the
    injection amplitude comes from ``cfg``.
    """
    profile = dataclasses.replace(profile, u_tilde=None)
    fast = dataclasses.replace(cfg, omega_inj=2 * cfg.omega_inj)
    dt = fast.period / STEPS_PER_PERIOD
    slow = run_scenario(profile, cfg.with_amplitude((0.0, 0.0)), p, dt=dt, sample_rate=sample_rate)
    sg, sd = _flux_gd(slow)
    keep = slow.t >= t_from
    dev, resid, amp = [], [], 0.0
    u_norm = math.hypot(*cfg.u_tilde)
    for k, c in enumerate((cfg, fast)):
        tr = run_scenario(profile, c, p, dt=dt, sample_rate=sample_rate)
        dev.append(float(np.max(np.abs(angle_diff(tr.theta, slow.theta)[keep]), initial=0.0)))
        g, d = _flux_gd(tr)
        Fv = injection.F(c.omega_inj * tr.t, c)
        rg = g - sg - c.u_tilde[0] / c.omega_inj * Fv
        rd = d - sd - c.u_tilde[1] / c.omega_inj * Fv
        resid.append(float(np.max(np.hypot(rg, rd)[keep], initial=0.0)))
        if k == 0 and u_norm > 0:
            tail = tr.t >= tr.t[-1] - 10 * c.period
            along = ((g - sg) * c.u_tilde[0] + (d - sd) * c.u_tilde[1])[tail] / u_norm
            amp = float(np.max(along) - np.min(along)) / 2
    expected = u_norm / cfg.omega_inj * injection.F_max(cfg)
    return AveragingReport(cfg.omega_inj, (dev[0], dev[1]), (resid[0], resid[1]), amp, expected)
