"""Demodulate a recorded trace, estimate the angle along it, and score the result."""

from __future__ import annotations

import dataclasses

import numpy as np

from .demodulation import DemodulatedCurrents, demodulate_trace
from .estimator import EstimateSeries, EstimatorConfig, estimate_series
from .frames import angle_diff
from .injection import InjectionConfig
from .magnetics import MotorParams
from .simulation import ScenarioTrace


@dataclasses.dataclass(frozen=True)
class TraceEstimate:
    demod: DemodulatedCurrents
    series: EstimateSeries
    theta: np.ndarray  # true angle on the same samples

    @property
    def error(self) -> np.ndarray:
        return angle_diff(self.series.theta_hat, self.theta)

    def summary(self, t_from: float = 0.0) -> dict[str, float]:
        """Max and mean absolute error in electrical degrees over ``t >= t_from``."""
        keep = np.asarray(self.series.t) >= t_from
        err = np.degrees(np.abs(self.error[keep]))
        if err.size == 0:
            return {"samples": 0, "max_deg": 0.0, "mean_deg": 0.0, "ambiguous": 0.0}
        return {
            "samples": int(err.size),
            "max_deg": float(err.max()),
            "mean_deg": float(err.mean()),
            "ambiguous": float(np.mean(self.series.ambiguity[keep])),
        }


def estimate_trace(trace: ScenarioTrace, cfg: InjectionConfig, p: MotorParams, *,
                   saturation: bool = True, trend: bool = True, periods: int = 1,
                   est_cfg: EstimatorConfig | None = None,
                   initial_hint: float | None = 0.0) -> TraceEstimate:
    """
    Run demodulation and per-sample estimation on ``trace``.

    ``saturation=False`` drops every saturation coefficient from the estimator's
    model (the plant that produced the trace is unaffected).  The first sample's
    ambiguity is resolved towards ``initial_hint``.
    """
    model = p if saturation else p.linear()
    est_cfg = est_cfg or EstimatorConfig(exact=True)
    d = demodulate_trace(trace, cfg, periods, trend=trend)
    n0 = len(trace) - len(d)
    series = estimate_series(d, np.asarray(trace.theta_c)[n0:], cfg.u_tilde, cfg.omega_inj, model,
                             est_cfg, initial_hint=initial_hint)
    return TraceEstimate(d, series, np.asarray(trace.theta)[n0:])
