"""
Saturated PMSM magnetics built on a quartic magnetic energy function.

The stator current is the gradient of an energy function of the flux linkage
(due to the current, magnet flux excluded).  The energy is the linear quadratic
part plus the five third/fourth order terms compatible with the symmetry of the
machine about its direct axis.  Everything below works elementwise on floats or
broadcastable numpy arrays.
"""

from __future__ import annotations

import dataclasses
import math
from typing import Any, Mapping, NamedTuple

import numpy as np

SATURATION_KEYS = ("a30", "a12", "a40", "a22", "a04")


class ModelValidityError(ValueError):
    """Raised when an operating point leaves the region where the perturbative model is usable."""


class FluxDQ(NamedTuple):
    phi_d: Any
    phi_q: Any


class CurrentDQ(NamedTuple):
    i_d: Any
    i_q: Any


class SymMatrix2(NamedTuple):
    """Symmetric 2x2 matrix stored as its three distinct entries."""

    a_dd: Any
    a_dq: Any
    a_qq: Any

    @property
    def det(self):
        return self.a_dd * self.a_qq - self.a_dq * self.a_dq

    def matrix(self) -> np.ndarray:
        """Dense form, shape ``(..., 2, 2)``."""
        dd, dq, qq = np.broadcast_arrays(*map(np.asarray, self))
        return np.stack([np.stack([dd, dq], -1), np.stack([dq, qq], -1)], -2)

    def is_positive_definite(self):
        return np.logical_and(self.a_dd > 0, self.det > 0)

    def inverse(self) -> SymMatrix2:
        det = self.det
        return SymMatrix2(self.a_qq / det, -self.a_dq / det, self.a_dd / det)

    def apply(self, x, y):
        return self.a_dd * x + self.a_dq * y, self.a_dq * x + self.a_qq * y


@dataclasses.dataclass(frozen=True)
class MotorParams:
    """
    Electrical, mechanical and magnetic parameters of one machine (SI units).

    ``lam`` is the peak permanent-magnet flux.  The five ``a..`` coefficients are
    raw energy-function coefficients; use :meth:`from_normalized` to enter the
    dimensionless products usually tabulated (``a30 * Ld**2 * In`` etc.).
    ``rated_torque`` and ``rated_speed_rpm`` only parameterize built-in scenarios.
    """

    R: float
    n: int
    lam: float
    Ld: float
    Lq: float
    a30: float = 0.0
    a12: float = 0.0
    a40: float = 0.0
    a22: float = 0.0
    a04: float = 0.0
    J: float = 5e-4
    In: float = 1.0
    rated_torque: float | None = None
    rated_speed_rpm: float | None = None

    def __post_init__(self) -> None:
        if not self.R > 0:
            raise ValueError(f"R must be positive, got {self.R}")
        if not (self.Ld > 0 and self.Lq > 0):
            raise ValueError(f"inductances must be positive, got Ld={self.Ld}, Lq={self.Lq}")
        if self.lam < 0:
            raise ValueError(f"lambda must be non-negative, got {self.lam}")
        if int(self.n) != self.n or self.n < 1:
            raise ValueError(f"pole pairs must be an integer >= 1, got {self.n}")
        if not self.J > 0:
            raise ValueError(f"J must be positive, got {self.J}")
        if not self.In > 0:
            raise ValueError(f"In must be positive, got {self.In}")
        for name in SATURATION_KEYS:
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")

    # --- normalized (dimensionless) saturation coefficients ---------------------------------

    def _norm_factors(self) -> dict[str, float]:
        Ld, Lq, In = self.Ld, self.Lq, self.In
        return {
            "a30": Ld**2 * In,
            "a12": Ld * Lq * In,
            "a40": Ld**3 * In**2,
            "a22": Ld * Lq**2 * In**2,
            "a04": Lq**3 * In**2,
        }

    @classmethod
    def from_normalized(cls, *, Ld: float, Lq: float, In: float, a30_norm: float = 0.0,
                        a12_norm: float = 0.0, a40_norm: float = 0.0, a22_norm: float = 0.0,
                        a04_norm: float = 0.0, **kwargs) -> MotorParams:
        norm = {"a30": a30_norm, "a12": a12_norm, "a40": a40_norm, "a22": a22_norm, "a04": a04_norm}
        base = cls(Ld=Ld, Lq=Lq, In=In, **kwargs)
        factors = base._norm_factors()
        return dataclasses.replace(base, **{k: v / factors[k] for k, v in norm.items()})

    def normalized(self) -> dict[str, float]:
        """Dimensionless products ``a30*Ld^2*In, a12*Ld*Lq*In, a40*Ld^3*In^2, a22*Ld*Lq^2*In^2, a04*Lq^3*In^2``."""
        factors = self._norm_factors()
        return {k: getattr(self, k) * factors[k] for k in SATURATION_KEYS}

    @classmethod
    def from_mapping(cls, values: Mapping[str, Any]) -> MotorParams:
        """Build from config-file style keys (``lambda``, ``a30`` or ``a30_norm``, ...)."""
        values = dict(values)
        known = {f.name for f in dataclasses.fields(cls)}
        kwargs: dict[str, Any] = {}
        norm: dict[str, float] = {}
        for key, value in values.items():
            if key == "lambda":
                kwargs["lam"] = float(value)
            elif key == "n":
                kwargs["n"] = int(float(value))
            elif key.endswith("_norm") and key[:-5] in SATURATION_KEYS:
                norm[key] = float(value)
            elif key in known:
                kwargs[key] = None if value is None else float(value)
            else:
                raise ValueError(f"unknown motor parameter key {key!r}")
        clash = [k for k in norm if k[:-5] in kwargs]
        if clash:
            raise ValueError(f"both raw and normalized values given for {', '.join(k[:-5] for k in clash)}")
        if norm:
            return cls.from_normalized(**kwargs, **norm)
        return cls(**kwargs)

    def to_mapping(self) -> dict[str, float]:
        out: dict[str, Any] = {}
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if value is None:
                continue
            out["lambda" if f.name == "lam" else f.name] = value
        return out

    def linear(self) -> MotorParams:
        """Same machine with every saturation coefficient set to zero."""
        return dataclasses.replace(self, **{k: 0.0 for k in SATURATION_KEYS})

    def scale_saturation(self, s: float) -> MotorParams:
        return dataclasses.replace(self, **{k: s * getattr(self, k) for k in SATURATION_KEYS})

    @property
    def nominal_torque(self) -> float:
        if self.rated_torque is not None:
            return self.rated_torque
        return 1.5 * self.n * self.lam * self.In

    @property
    def nominal_speed(self) -> float:
        """Rated electrical speed (rad/s)."""
        if self.rated_speed_rpm is None:
            raise ValueError("rated_speed_rpm is not set for this machine")
        return self.rated_speed_rpm * 2.0 * math.pi / 60.0 * self.n


IPM = MotorParams.from_normalized(
    R=1.52, n=3, lam=0.196, Ld=9.15e-3, Lq=13.58e-3, In=4.51, J=5e-4,
    a30_norm=0.039, a12_norm=0.053, a40_norm=0.0051, a22_norm=0.0171, a04_norm=0.0060,
    rated_torque=3.98, rated_speed_rpm=1800.0,
)

SPM = MotorParams.from_normalized(
    R=2.1, n=5, lam=0.155, Ld=7.86e-3, Lq=8.18e-3, In=5.19, J=1e-3,
    a30_norm=0.056, a12_norm=0.055, a40_norm=0.0164, a22_norm=0.027, a04_norm=0.0067,
    rated_torque=6.06, rated_speed_rpm=3000.0,
)

PRESETS = {"ipm": IPM, "spm": SPM}


# --- energy and its derivatives ---------------------------------------------------------------

def energy(phi: FluxDQ, p: MotorParams):
    d, q = phi
    return (d * d / (2 * p.Ld) + q * q / (2 * p.Lq)
            + p.a30 * d**3 + p.a12 * d * q * q
            + p.a40 * d**4 + p.a22 * d * d * q * q + p.a04 * q**4)


def current_from_flux(phi: FluxDQ, p: MotorParams) -> CurrentDQ:
    """Flux/current magnetization curves, i.e. the gradient of :func:`energy`."""
    d, q = phi
    dd, qq = d * d, q * q
    i_d = d / p.Ld + 3 * p.a30 * dd + p.a12 * qq + 4 * p.a40 * dd * d + 2 * p.a22 * d * qq
    i_q = q / p.Lq + 2 * p.a12 * d * q + 2 * p.a22 * dd * q + 4 * p.a04 * qq * q
    return CurrentDQ(i_d, i_q)


def flux_jacobian(phi: FluxDQ, p: MotorParams) -> SymMatrix2:
    """Exact Hessian of the energy, d(current)/d(flux), evaluated at a flux point."""
    d, q = phi
    g_dd = 1 / p.Ld + 6 * p.a30 * d + 12 * p.a40 * d * d + 2 * p.a22 * q * q
    g_dq = 2 * p.a12 * q + 4 * p.a22 * d * q
    g_qq = 1 / p.Lq + 2 * p.a12 * d + 2 * p.a22 * d * d + 12 * p.a04 * q * q
    return SymMatrix2(g_dd, g_dq, g_qq)


def flux_from_current_approx(i: CurrentDQ, p: MotorParams) -> FluxDQ:
    """Inverse magnetization curves to first order in the saturation coefficients."""
    i_d, i_q = i
    Ld, Lq = p.Ld, p.Lq
    phi_d = Ld * (i_d - 3 * p.a30 * Ld**2 * i_d**2 - p.a12 * Lq**2 * i_q**2
                  - 4 * p.a40 * Ld**3 * i_d**3 - 2 * p.a22 * Ld * Lq**2 * i_d * i_q**2)
    phi_q = Lq * (i_q - 2 * p.a12 * Ld * Lq * i_d * i_q
                  - 2 * p.a22 * Ld**2 * Lq * i_d**2 * i_q - 4 * p.a04 * Lq**3 * i_q**3)
    return FluxDQ(phi_d, phi_q)


def flux_from_current_exact(i: CurrentDQ, p: MotorParams, tol: float = 1e-10,
                            max_iter: int = 50) -> FluxDQ:
    """
    Invert the magnetization curves by damped Newton iteration.

    Seeded with :func:`flux_from_current_approx`; the Newton Jacobian is the exact
    energy Hessian.  Converged when every current component is within ``tol`` ampere.

    Raises
    ------
    ModelValidityError
        If the iteration does not converge (the current is outside the region
        where the energy function is convex along the solve path).
    """
    if not tol > 0:
        raise ValueError(f"tol must be positive, got {tol}")
    i_d = np.asarray(i[0], dtype=float)
    i_q = np.asarray(i[1], dtype=float)
    scalar = i_d.ndim == 0 and i_q.ndim == 0
    i_d, i_q = np.broadcast_arrays(np.atleast_1d(i_d), np.atleast_1d(i_q))
    d, q = (np.array(x, dtype=float) for x in flux_from_current_approx((i_d, i_q), p))

    def residual(d, q):
        c_d, c_q = current_from_flux((d, q), p)
        return c_d - i_d, c_q - i_q

    r_d, r_q = residual(d, q)
    for _ in range(max_iter):
        err = np.maximum(np.abs(r_d), np.abs(r_q))
        if np.all(err <= tol):
            break
        jac = flux_jacobian((d, q), p)
        det = jac.det
        bad = ~(jac.is_positive_definite() & np.isfinite(det))
        if np.any(bad):
            _raise_validity(i_d, i_q, bad)
        step_d = (jac.a_qq * r_d - jac.a_dq * r_q) / det
        step_q = (jac.a_dd * r_q - jac.a_dq * r_d) / det
        norm0 = np.hypot(r_d, r_q)
        lam = np.ones_like(d)
        # backtracking: halve the step where the residual norm would grow
        for _ in range(30):
            nd, nq = d - lam * step_d, q - lam * step_q
            nr_d, nr_q = residual(nd, nq)
            worse = ~(np.hypot(nr_d, nr_q) < norm0) & (norm0 > tol)
            if not np.any(worse):
                break
            lam = np.where(worse, lam / 2, lam)
        d, q, r_d, r_q = nd, nq, nr_d, nr_q
    else:
        err = np.maximum(np.abs(r_d), np.abs(r_q))
        if np.any(err > tol):
            _raise_validity(i_d, i_q, err > tol, "Newton iteration did not converge")
    if scalar:
        return FluxDQ(float(d[0]), float(q[0]))
    return FluxDQ(d, q)


def _raise_validity(i_d, i_q, mask, what="energy Hessian is not positive-definite"):
    k = int(np.flatnonzero(mask)[0])
    raise ModelValidityError(
        f"{what} while inverting current i_dq=({i_d.flat[k]:.6g}, {i_q.flat[k]:.6g}) A; "
        "operating point outside model validity"
    )


def admittance(i: CurrentDQ, p: MotorParams, exact: bool = False) -> SymMatrix2:
    """
    Differential admittance d(current)/d(flux) expressed as a function of current.

    By default the closed-form entries (first order in the saturation coefficients)
    are returned.  ``exact=True`` evaluates the energy Hessian at the exactly
    inverted flux instead.
    """
    if exact:
        return flux_jacobian(flux_from_current_exact(i, p), p)
    i_d, i_q = i
    Ld, Lq = p.Ld, p.Lq
    g_dd = 1 / Ld + 6 * p.a30 * Ld * i_d + 12 * p.a40 * Ld**2 * i_d**2 + 2 * p.a22 * Lq**2 * i_q**2
    g_dq = 2 * p.a12 * Lq * i_q + 4 * p.a22 * Ld * i_d * Lq * i_q
    g_qq = 1 / Lq + 2 * p.a12 * Ld * i_d + 2 * p.a22 * Ld**2 * i_d**2 + 12 * p.a04 * Lq**2 * i_q**2
    return SymMatrix2(g_dd, g_dq, g_qq)


def inductance(i: CurrentDQ, p: MotorParams, exact: bool = False) -> SymMatrix2:
    """Inverse of :func:`admittance`; fails outside the positive-definite region."""
    g = admittance(i, p, exact=exact)
    if not np.all(g.is_positive_definite()):
        raise ModelValidityError(f"admittance not positive-definite at i_dq=({i[0]}, {i[1]})")
    return g.inverse()


def is_valid(i: CurrentDQ, p: MotorParams):
    """True where the closed-form admittance is positive-definite."""
    return admittance(i, p).is_positive_definite()


def saliency_matrix(mu, i_bar, p: MotorParams, exact: bool = False) -> np.ndarray:
    """
    Admittance seen in a frame rotated by ``mu`` from the rotor frame.

    ``S(mu, i) = M_mu G(M_mu^T i) M_mu^T`` with ``i_bar`` given in the rotated
    (controller) frame.  Vectorized over ``mu``; returns shape ``(..., 2, 2)``.
    """
    mu = np.asarray(mu, dtype=float)
    c, s = np.cos(mu), np.sin(mu)
    i_g, i_dl = i_bar
    g = admittance(CurrentDQ(c * i_g + s * i_dl, -s * i_g + c * i_dl), p, exact=exact)
    # rotate the symmetric matrix: M G M^T
    c2, s2 = c * c, s * s
    cs = c * s
    s_gg = c2 * g.a_dd - 2 * cs * g.a_dq + s2 * g.a_qq
    s_gd = cs * (g.a_dd - g.a_qq) + (c2 - s2) * g.a_dq
    s_dd = s2 * g.a_dd + 2 * cs * g.a_dq + c2 * g.a_qq
    return SymMatrix2(s_gg, s_gd, s_dd).matrix()
