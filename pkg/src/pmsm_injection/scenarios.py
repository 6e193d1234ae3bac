"""
Built-in V/f scenarios at standstill and very low speed.

Every loaded scenario starts with the same pre-roll: the resistive-drop voltage
``u_rd = (R I0, 0)`` is applied (through the profile's low-pass) with the rotor
at rest and no load, so the rotor aligns with the controller frame before
anything else happens.  Load changes are ramps of fixed length standing in for
the torque rise of a load machine; the remaining phases stretch with
``time_scale``.
"""

from __future__ import annotations

import dataclasses
from typing import Callable

from .magnetics import MotorParams
from .simulation import Profile

PRE_ROLL = 0.4
LOAD_RAMP = 0.2


@dataclasses.dataclass(frozen=True)
class ScenarioInfo:
    build: Callable[[MotorParams, float], Profile]
    default_time_scale: float
    description: str
    # start of the scored interval (s); earlier samples belong to the pre-roll
    evaluate_from: float


def _u_rd(p: MotorParams, current: float) -> tuple[float, float]:
    return (p.R * current * p.In, 0.0)


def rest(p: MotorParams, time_scale: float = 1.0) -> Profile:
    """No voltage, no load, no injection."""
    return Profile(duration=0.5 * time_scale, u_tilde=(0.0, 0.0), name="rest")


def load_step(p: MotorParams, time_scale: float = 1.0) -> Profile:
    """Zero speed, load rising from 0 to 100 % rated torque."""
    t1 = PRE_ROLL + LOAD_RAMP
    hold = 0.6 * time_scale
    return Profile(
        duration=t1 + hold,
        tau_L=((0.0, 0.0), (PRE_ROLL, 0.0), (t1, p.nominal_torque)),
        u_rd=((0.0, _u_rd(p, 1.4)),),
        name="load-step",
    )


def speed_reversal(p: MotorParams, time_scale: float = 0.1) -> Profile:
    """150 % rated torque while the speed reference sweeps from -0.2 % to +0.2 % of rated."""
    w = 0.002 * p.nominal_speed
    t_load = PRE_ROLL + 2 * LOAD_RAMP
    t_start = t_load + 0.1
    t_sweep = t_start + 20.0 * time_scale
    return Profile(
        duration=t_sweep + 5.0 * time_scale,
        omega_c=((0.0, 0.0), (t_load, 0.0), (t_start, -w), (t_sweep, w)),
        tau_L=((0.0, 0.0), (PRE_ROLL, 0.0), (t_load, 1.5 * p.nominal_torque)),
        u_rd=((0.0, _u_rd(p, 2.0)),),
        name="speed-reversal",
    )


# (time, speed in % of rated, torque in % of rated, current magnitude in units of In)
_LONG_TEST = (
    (0.0, 0.0, 0.0, 1.4),
    (10.0, 0.0, 0.0, 1.4),
    (25.0, 5.0, 0.0, 1.4),
    (40.0, 5.0, 30.0, 1.4),
    (55.0, 0.0, 30.0, 1.4),
    (70.0, 0.0, 100.0, 1.4),
    (85.0, 0.0, 100.0, 2.2),
    (100.0, 0.0, 180.0, 2.2),
    (120.0, 0.0, 180.0, 2.2),
    (135.0, 0.0, 60.0, 2.2),
    (150.0, 0.0, 60.0, 1.4),
    (165.0, -5.0, 30.0, 1.4),
    (185.0, -5.0, 0.0, 1.4),
    (200.0, 0.0, 0.0, 1.4),
    (210.0, 0.0, 0.0, 1.4),
)


def long_test(p: MotorParams, time_scale: float = 0.1) -> Profile:
    """
    Slow wandering of speed within +-5 % of rated and torque between 0 and 180 %.

    The resistive-drop current is raised before the high-torque phase and lowered
    after it.
    """
    speed, load, u_rd = [(0.0, 0.0)], [(0.0, 0.0)], [(0.0, _u_rd(p, _LONG_TEST[0][3]))]
    current = _LONG_TEST[0][3]
    for t, spd, trq, cur in _LONG_TEST:
        ts = PRE_ROLL + t * time_scale
        speed.append((ts, spd / 100 * p.nominal_speed))
        load.append((ts, trq / 100 * p.nominal_torque))
        if cur != current:
            u_rd.append((ts, _u_rd(p, cur)))
            current = cur
    return Profile(
        duration=PRE_ROLL + _LONG_TEST[-1][0] * time_scale,
        omega_c=tuple(speed),
        tau_L=tuple(load),
        u_rd=tuple(u_rd),
        u_rd_tau=0.05,
        name="long-test",
    )


SCENARIOS: dict[str, ScenarioInfo] = {
    "rest": ScenarioInfo(rest, 1.0, "motor at rest, no excitation", 0.0),
    "long-test": ScenarioInfo(long_test, 0.1, "210 s speed/torque envelope", PRE_ROLL),
    "speed-reversal": ScenarioInfo(speed_reversal, 0.1, "slow reversal at 150 % torque",
                                   PRE_ROLL + 2 * LOAD_RAMP),
    "load-step": ScenarioInfo(load_step, 1.0, "0 to 100 % torque at standstill", PRE_ROLL),
}


def build_scenario(name: str, p: MotorParams, time_scale: float | None = None) -> Profile:
    try:
        info = SCENARIOS[name]
    except KeyError:
        raise KeyError(f"unknown scenario {name!r}; choose from {', '.join(SCENARIOS)}") from None
    scale = info.default_time_scale if time_scale is None else time_scale
    if not scale > 0:
        raise ValueError(f"time scale must be positive, got {scale}")
    return info.build(p, scale)
