"""
Locked-rotor identification of the inductances and saturation coefficients.

The rotor is held at ``theta = 0`` and driven with ``u_bar + u_tilde f(Omega t)``.
Once settled, the demodulated ripple gives the differential admittance at the
operating point, ``Omega * i_tilde = G(i_bar) u_tilde``.  Three families of runs
isolate the entries of ``G``:

* d family (``u_bar_q = 0``, ``u_tilde = (u, 0)``):  ``G_dd`` versus ``i_bar_d``;
* cross family (``u_bar_d = 0``, ``u_tilde = (u, 0)``):  ``G_dd`` and ``G_dq`` versus ``i_bar_q``;
* q family (``u_bar_d = 0``, ``u_tilde = (0, u)``):  ``G_dq`` and ``G_qq`` versus ``i_bar_q``.

Each relation is linear in the unknown coefficients once the first-order
admittance is written in terms of current, and is fitted by linear least squares.

The first-order relations are biased on data from the full model: the admittance
is quartic-energy exact only to first order in the coefficients, the ripple is
not exactly ``u_tilde F / Omega`` (third-order flux terms, resistive damping of
the ripple) and the samples are discrete.  :func:`identify_full` therefore refines
the raw fit by indirect inference: the same experiments are replayed on the
current estimate, fitted the same way, and the estimate is shifted by the
difference between the two fits until they agree.
"""

from __future__ import annotations

import dataclasses
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, Sequence

import numpy as np

from .demodulation import demodulate
from .injection import F as primitive
from .injection import InjectionConfig
from .magnetics import SATURATION_KEYS, FluxDQ, MotorParams, admittance, flux_from_current_exact
from .simulation import simulate_locked_rotor


class IdentificationError(RuntimeError):
    pass


class NotSettledError(IdentificationError):
    pass


class IdentificationWarning(UserWarning):
    pass


@dataclasses.dataclass(frozen=True)
class IdPoint:
    """Settled locked-rotor operating point (dq frame, SI units)."""

    u_bar: tuple[float, float]
    u_tilde: tuple[float, float]
    i_bar: tuple[float, float]
    i_tilde: tuple[float, float]
    omega_inj: float

    def admittance_column(self) -> tuple[float, float]:
        """``Omega * i_tilde / |u_tilde|``: the column of G selected by the excitation axis."""
        u = math.hypot(*self.u_tilde)
        return (self.omega_inj * self.i_tilde[0] / u, self.omega_inj * self.i_tilde[1] / u)

    @property
    def axis(self) -> str:
        ud, uq = self.u_tilde
        if uq == 0 and ud != 0:
            return "d"
        if ud == 0 and uq != 0:
            return "q"
        return "mixed"


@dataclasses.dataclass(frozen=True)
class FitResult:
    coef: np.ndarray
    residual: float  # Euclidean norm of the regression residual
    count: int


# --- experiment -------------------------------------------------------------------------------

def run_id_experiment(u_bar, u_tilde, cfg: InjectionConfig, p: MotorParams,
                      settle: float | None = None, *, periods: int = 5,
                      tol: float = 1e-4) -> IdPoint:
    """
    Simulate one locked-rotor run and return its settled demodulated values.

    ``settle`` defaults to ten electrical time constants ``max(Ld, Lq) / R``.
    The flux starts on the first-order periodic orbit around ``i = u_bar / R``.
    The point counts as settled when ``i_bar`` moves by less than ``tol``
    (relative to the current scale) over the last ``periods`` injection periods;
    otherwise :class:`NotSettledError` is raised.
    """
    cfg = cfg.with_amplitude(u_tilde)
    if settle is None:
        settle = 10.0 * max(p.Ld, p.Lq) / p.R
    i_target = (u_bar[0] / p.R, u_bar[1] / p.R)
    phi_bar = flux_from_current_exact(i_target, p)
    f0 = float(primitive(0.0, cfg))
    phi0 = FluxDQ(float(phi_bar[0]) + cfg.u_tilde[0] / cfg.omega_inj * f0,
                  float(phi_bar[1]) + cfg.u_tilde[1] / cfg.omega_inj * f0)
    n_periods = math.ceil(settle / cfg.period) + periods + 1
    t, i_d, i_q = simulate_locked_rotor(u_bar, cfg, p, n_periods * cfg.period, phi0=phi0)
    d = demodulate(t, i_d, i_q, cfg)
    n_win = len(t) - len(d)
    last, first = -1, -1 - periods * n_win
    ib = np.array([d.i_bar[0][last], d.i_bar[1][last]])
    ib0 = np.array([d.i_bar[0][first], d.i_bar[1][first]])
    it = np.array([d.i_tilde[0][last], d.i_tilde[1][last]])
    scale = max(float(np.hypot(*ib)), float(np.hypot(*it)), 1e-12)
    change = float(np.hypot(*(ib - ib0))) / scale
    if change > tol:
        raise NotSettledError(
            f"i_bar still moving (relative change {change:.2e} over {periods} periods) at "
            f"u_bar=({u_bar[0]:.4g}, {u_bar[1]:.4g}) V; increase the settle time (now {settle:.4g} s)"
        )
    return IdPoint(u_bar=(float(u_bar[0]), float(u_bar[1])), u_tilde=cfg.u_tilde,
                   i_bar=(float(ib[0]), float(ib[1])), i_tilde=(float(it[0]), float(it[1])),
                   omega_inj=cfg.omega_inj)


# --- least squares ----------------------------------------------------------------------------

def lstsq(X, y) -> tuple[np.ndarray, float]:
    """Least squares through the SVD; returns coefficients and residual norm."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.shape[0] < X.shape[1] or np.linalg.matrix_rank(X) < X.shape[1]:
        raise np.linalg.LinAlgError("rank-deficient design matrix")
    coef = np.linalg.lstsq(X, y, rcond=None)[0]
    return coef, float(np.linalg.norm(y - X @ coef))


def lstsq_normal(X, y) -> np.ndarray:
    """Normal-equation solution, kept as a cross-check of :func:`lstsq`."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    return np.linalg.solve(X.T @ X, X.T @ np.asarray(y, dtype=float))


def _fit(X, y, what: str, currents) -> FitResult:
    try:
        coef, res = lstsq(X, y)
    except np.linalg.LinAlgError:
        values = ", ".join(f"{c:.4g}" for c in currents)
        raise IdentificationError(f"{what}: design matrix is rank-deficient for i_bar = [{values}] A") from None
    return FitResult(coef, res, len(y))


def _select(points: Iterable[IdPoint], axis: str, zero_bar: int) -> list[IdPoint]:
    return [pt for pt in points if pt.axis == axis and pt.u_bar[zero_bar] == 0.0]


def estimate_Ld_Lq(points: Sequence[IdPoint], floor: float = 1e-9) -> tuple[float, float]:
    """``L = u_tilde / (Omega i_tilde)`` on the zero-bias runs of each axis, averaged."""
    est = {"d": [], "q": []}
    for pt in points:
        if pt.u_bar != (0.0, 0.0) or pt.axis == "mixed":
            continue
        k = 0 if pt.axis == "d" else 1
        it = pt.i_tilde[k]
        if abs(it) < floor:
            raise IdentificationError(f"ripple {it:.3g} A on the {pt.axis} axis is below the numeric floor")
        est[pt.axis].append(pt.u_tilde[k] / (pt.omega_inj * it))
    if not est["d"] or not est["q"]:
        raise IdentificationError("need zero-bias runs with d-only and q-only excitation")
    return float(np.mean(est["d"])), float(np.mean(est["q"]))


def fit_d_axis(points: Sequence[IdPoint], Ld: float) -> FitResult:
    """``Omega i_d/u_d - 1/Ld = 6 a30 Ld i_d + 12 a40 Ld^2 i_d^2``; coefficients ``(a30, a40)``."""
    pts = [pt for pt in points if pt.axis == "d" and pt.u_bar[1] == 0.0]
    i_d = np.array([pt.i_bar[0] for pt in pts])
    y = np.array([pt.admittance_column()[0] for pt in pts]) - 1.0 / Ld
    X = np.column_stack([6 * Ld * i_d, 12 * Ld**2 * i_d**2])
    return _fit(X, y, "d-axis fit", i_d)


def fit_cross_terms(points: Sequence[IdPoint], Ld: float, Lq: float) -> tuple[FitResult, FitResult]:
    """
    d-excited runs along the q axis.

    ``Omega i_d/u_d - 1/Ld = 2 a22 Lq^2 i_q^2`` gives ``a22``;
    ``Omega i_q/u_d = 2 a12 Lq i_q`` gives ``a12``.
    """
    pts = _select(points, "d", 0)
    i_q = np.array([pt.i_bar[1] for pt in pts])
    cols = np.array([pt.admittance_column() for pt in pts]).reshape(-1, 2)
    a22 = _fit(2 * Lq**2 * i_q**2, cols[:, 0] - 1.0 / Ld, "cross fit (a22)", i_q)
    a12 = _fit(2 * Lq * i_q, cols[:, 1], "cross fit (a12)", i_q)
    return a22, a12


def fit_q_axis(points: Sequence[IdPoint], Lq: float) -> tuple[FitResult, FitResult]:
    """
    q-excited runs along the q axis.

    ``Omega i_d/u_q = 2 a12 Lq i_q`` gives ``a12`` again;
    ``Omega i_q/u_q - 1/Lq = 12 a04 Lq^2 i_q^2`` gives ``a04``.
    """
    pts = _select(points, "q", 0)
    i_q = np.array([pt.i_bar[1] for pt in pts])
    cols = np.array([pt.admittance_column() for pt in pts]).reshape(-1, 2)
    a12 = _fit(2 * Lq * i_q, cols[:, 0], "q-axis fit (a12)", i_q)
    a04 = _fit(12 * Lq**2 * i_q**2, cols[:, 1] - 1.0 / Lq, "q-axis fit (a04)", i_q)
    return a12, a04


# --- orchestration ----------------------------------------------------------------------------

FIT_NAMES = ("Ld", "Lq", "a30", "a40", "a22", "a12_cross", "a12_q", "a04")


@dataclasses.dataclass(frozen=True)
class RawFit:
    """One pass of the linear fits over a point set."""

    values: dict[str, float]
    residuals: dict[str, float]
    counts: dict[str, int]


def fit_all(points: Sequence[IdPoint]) -> RawFit:
    Ld, Lq = estimate_Ld_Lq(points)
    d = fit_d_axis(points, Ld)
    a22, a12c = fit_cross_terms(points, Ld, Lq)
    a12q, a04 = fit_q_axis(points, Lq)
    zero = [pt for pt in points if pt.u_bar == (0.0, 0.0)]
    values = {
        "Ld": Ld, "Lq": Lq, "a30": float(d.coef[0]), "a40": float(d.coef[1]),
        "a22": float(a22.coef[0]), "a12_cross": float(a12c.coef[0]),
        "a12_q": float(a12q.coef[0]), "a04": float(a04.coef[0]),
    }
    residuals = {"d_axis": d.residual, "a22": a22.residual, "a12_cross": a12c.residual,
                 "a12_q": a12q.residual, "a04": a04.residual}
    counts = {"L": len(zero), "d_axis": d.count, "a22": a22.count, "a12_cross": a12c.count,
              "a12_q": a12q.count, "a04": a04.count}
    return RawFit(values, residuals, counts)


@dataclasses.dataclass(frozen=True)
class SweepConfig:
    """DC levels in units of ``In`` and the HF amplitude; ``u_tilde=None`` picks 15 V or 14 V."""

    levels: tuple[float, ...] = (-2.0, -1.5, -1.0, -0.5, 0.0, 0.5, 1.0, 1.5, 2.0)
    u_tilde: float | None = None
    injection: InjectionConfig = InjectionConfig()
    settle: float | None = None
    refine: bool = True
    max_iter: int = 30
    rtol: float = 1e-5
    workers: int = 1


def default_amplitude(p: MotorParams) -> float:
    # the larger-saliency machine tolerates the larger amplitude
    return 15.0 if abs(p.Lq - p.Ld) / p.Ld > 0.2 else 14.0


def sweep_plan(p: MotorParams, sweep: SweepConfig) -> list[tuple[tuple[float, float], tuple[float, float]]]:
    """``(u_bar, u_tilde)`` for the d, cross and q families, ``i_bar`` spanning ``levels * In``."""
    u = sweep.u_tilde if sweep.u_tilde is not None else default_amplitude(p)
    plan = []
    for lv in sweep.levels:
        plan.append(((p.R * lv * p.In, 0.0), (u, 0.0)))
    for lv in sweep.levels:
        if lv != 0.0:
            plan.append(((0.0, p.R * lv * p.In), (u, 0.0)))
    for lv in sweep.levels:
        plan.append(((0.0, p.R * lv * p.In), (0.0, u)))
    return plan


def run_sweep(p: MotorParams, sweep: SweepConfig,
              plan: Sequence[tuple[tuple[float, float], tuple[float, float]]] | None = None) -> list[IdPoint]:
    plan = sweep_plan(p, sweep) if plan is None else plan

    def one(item):
        return run_id_experiment(item[0], item[1], sweep.injection, p, sweep.settle)

    if sweep.workers > 1:
        with ThreadPoolExecutor(sweep.workers) as pool:
            return list(pool.map(one, plan))
    return [one(item) for item in plan]


@dataclasses.dataclass(frozen=True)
class IdReport:
    """
    Identified magnetic parameters.

    ``a12`` is the mean of ``a12_cross`` (d-excited runs) and ``a12_q`` (q-excited
    runs).  ``raw`` holds the unrefined first-order fit.
    """

    Ld: float
    Lq: float
    a30: float
    a12: float
    a40: float
    a22: float
    a04: float
    a12_cross: float
    a12_q: float
    residuals: dict[str, float]
    counts: dict[str, int]
    raw: dict[str, float]
    iterations: int
    In: float
    warnings: tuple[str, ...] = ()

    @property
    def a12_spread(self) -> float:
        """Relative disagreement ``|a12_cross - a12_q| / |a12|`` (0 when both vanish)."""
        return abs(self.a12_cross - self.a12_q) / abs(self.a12) if self.a12 else 0.0

    def params(self, template: MotorParams) -> MotorParams:
        return dataclasses.replace(template, Ld=self.Ld, Lq=self.Lq,
                                   **{k: getattr(self, k) for k in SATURATION_KEYS})

    def normalized(self) -> dict[str, float]:
        Ld, Lq, In = self.Ld, self.Lq, self.In
        return {
            "a30": self.a30 * Ld**2 * In,
            "a12": self.a12 * Ld * Lq * In,
            "a12_cross": self.a12_cross * Ld * Lq * In,
            "a12_q": self.a12_q * Ld * Lq * In,
            "a40": self.a40 * Ld**3 * In**2,
            "a22": self.a22 * Ld * Lq**2 * In**2,
            "a04": self.a04 * Lq**3 * In**2,
        }

    def to_mapping(self) -> dict[str, object]:
        out: dict[str, object] = {k: getattr(self, k) for k in
                                  ("Ld", "Lq", "a30", "a12", "a40", "a22", "a04", "a12_cross", "a12_q")}
        out["a12_spread"] = self.a12_spread
        out.update({f"{k}_norm": v for k, v in self.normalized().items()})
        out.update({f"raw_{k}": v for k, v in self.raw.items()})
        out.update({f"residual_{k}": v for k, v in self.residuals.items()})
        out.update({f"count_{k}": v for k, v in self.counts.items()})
        out["iterations"] = self.iterations
        return out


PARAM_NAMES = ("Ld", "Lq") + SATURATION_KEYS


def _params_from_fit(values: dict[str, float]) -> dict[str, float]:
    out = {k: values[k] for k in PARAM_NAMES if k != "a12"}
    out["a12"] = 0.5 * (values["a12_cross"] + values["a12_q"])
    return out


def _as_params(values: dict[str, float], template: MotorParams) -> MotorParams:
    return dataclasses.replace(template, **{k: values[k] for k in PARAM_NAMES})


def identify_from_points(points: Sequence[IdPoint], template: MotorParams,
                         sweep: SweepConfig = SweepConfig(),
                         replay: Callable[[MotorParams], Sequence[IdPoint]] | None = None) -> IdReport:
    """
    Fit measured points; with ``sweep.refine`` remove the first-order bias by replay.

    ``template`` supplies ``R``, ``In`` and the mechanical data.  ``replay(p)``
    must rerun the experiments of ``points`` on machine ``p``; by default they are
    simulated with :func:`run_id_experiment` at the same voltages.
    """
    target = fit_all(points)
    params = _params_from_fit(target.values)
    offsets = {"a12_cross": 0.0, "a12_q": 0.0}
    iterations = 0
    if sweep.refine:
        if replay is None:
            plan = [(pt.u_bar, pt.u_tilde) for pt in points]
            replay = lambda q: run_sweep(q, sweep, plan)  # noqa: E731
        for iterations in range(1, sweep.max_iter + 1):
            sim = fit_all(replay(_as_params(params, template))).values
            step = {k: target.values[k] - sim[k] for k in FIT_NAMES}
            # both a12 fits estimate one coefficient: move it by their mean step and keep
            # the leftover of each as its individual correction
            a12_step = 0.5 * (step["a12_cross"] + step["a12_q"])
            offsets = {k: step[k] - a12_step for k in offsets}
            for k in PARAM_NAMES:
                params[k] += a12_step if k == "a12" else step[k]
            if all(abs(step[k]) <= sweep.rtol * _scale(k, params, template)
                   for k in PARAM_NAMES if k != "a12") and \
                    abs(a12_step) <= sweep.rtol * _scale("a12", params, template):
                break
        else:
            warnings.warn(f"bias refinement did not converge in {sweep.max_iter} iterations",
                          IdentificationWarning, stacklevel=2)
    values = dict(params)
    values["a12_cross"] = params["a12"] + offsets["a12_cross"]
    values["a12_q"] = params["a12"] + offsets["a12_q"]
    if not sweep.refine:
        values["a12_cross"], values["a12_q"] = target.values["a12_cross"], target.values["a12_q"]
    a12 = params["a12"]
    notes = []
    # below this normalized size a12 is numerically zero and its relative spread meaningless
    significant = abs(a12) > 1e-6 * _scale("a12", values, template)
    if significant and abs(values["a12_cross"] - values["a12_q"]) / abs(a12) > 0.10:
        msg = (f"a12 estimates disagree by more than 10 % "
               f"({values['a12_cross']:.4g} vs {values['a12_q']:.4g})")
        warnings.warn(msg, IdentificationWarning, stacklevel=2)
        notes.append(msg)
    return IdReport(
        Ld=values["Ld"], Lq=values["Lq"], a30=values["a30"], a12=a12, a40=values["a40"],
        a22=values["a22"], a04=values["a04"], a12_cross=values["a12_cross"], a12_q=values["a12_q"],
        residuals=target.residuals, counts=target.counts, raw=dict(target.values),
        iterations=iterations, In=template.In, warnings=tuple(notes),
    )


def _scale(key: str, values: dict[str, float], p: MotorParams) -> float:
    # magnitude used for the convergence test: coefficients are compared through their normalized size
    if key in ("Ld", "Lq"):
        return values[key]
    factor = {
        "a30": values["Ld"] ** 2 * p.In,
        "a40": values["Ld"] ** 3 * p.In**2,
        "a22": values["Ld"] * values["Lq"] ** 2 * p.In**2,
        "a12": values["Ld"] * values["Lq"] * p.In,
        "a04": values["Lq"] ** 3 * p.In**2,
    }[key]
    return 1.0 / factor


def identify_full(plant: MotorParams, sweep: SweepConfig = SweepConfig()) -> tuple[IdReport, list[IdPoint]]:
    """Run the three sweep families on ``plant`` and identify its magnetic parameters."""
    points = run_sweep(plant, sweep)
    template = plant.linear()
    return identify_from_points(points, template, sweep), points


def fitted_curves(points: Sequence[IdPoint], report: IdReport,
                  template: MotorParams) -> dict[str, np.ndarray]:
    """
    Measured admittance column per point, next to the raw first-order fit and the
    exact-model admittance of the refined parameters (plot-ready columns).
    """
    raw = report.raw
    Ld, Lq = raw["Ld"], raw["Lq"]
    a30, a40, a22, a04 = raw["a30"], raw["a40"], raw["a22"], raw["a04"]
    a12 = 0.5 * (raw["a12_cross"] + raw["a12_q"])
    refined = report.params(template)
    rows = []
    for pt in points:
        i_d, i_q = pt.i_bar
        g_dd = 1 / Ld + 6 * a30 * Ld * i_d + 12 * a40 * Ld**2 * i_d**2 + 2 * a22 * Lq**2 * i_q**2
        g_dq = 2 * a12 * Lq * i_q + 4 * a22 * Ld * i_d * Lq * i_q
        g_qq = 1 / Lq + 2 * a12 * Ld * i_d + 2 * a22 * Ld**2 * i_d**2 + 12 * a04 * Lq**2 * i_q**2
        g = admittance((i_d, i_q), refined, exact=True)
        if pt.axis == "d":
            first, exact = (g_dd, g_dq), (float(g.a_dd), float(g.a_dq))
        else:
            first, exact = (g_dq, g_qq), (float(g.a_dq), float(g.a_qq))
        col = pt.admittance_column()
        rows.append((0.0 if pt.axis == "d" else 1.0, *pt.u_bar, i_d, i_q, *col, *first, *exact))
    arr = np.array(rows, dtype=float).reshape(-1, 11)
    names = ("axis", "u_bar_d", "u_bar_q", "i_bar_d", "i_bar_q", "meas_d", "meas_q",
             "first_order_d", "first_order_q", "exact_d", "exact_q")
    return {k: arr[:, j] for j, k in enumerate(names)}


def points_to_columns(points: Sequence[IdPoint]) -> dict[str, np.ndarray]:
    arr = np.array([(*pt.u_bar, *pt.u_tilde, *pt.i_bar, *pt.i_tilde, pt.omega_inj) for pt in points],
                   dtype=float).reshape(-1, 9)
    names = ("u_bar_d", "u_bar_q", "u_tilde_d", "u_tilde_q", "i_bar_d", "i_bar_q",
             "i_tilde_d", "i_tilde_q", "omega_inj")
    return {k: arr[:, j] for j, k in enumerate(names)}
