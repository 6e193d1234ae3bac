import dataclasses
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from pmsm_injection.identification import (IdentificationError, IdentificationWarning, IdPoint,
                                           NotSettledError, SweepConfig, default_amplitude,
                                           estimate_Ld_Lq, fit_all, fit_d_axis,
                                           fit_q_axis, fitted_curves, identify_from_points,
                                           identify_full, lstsq, lstsq_normal, points_to_columns,
                                           run_id_experiment, sweep_plan)
from pmsm_injection.injection import InjectionConfig
from pmsm_injection.magnetics import IPM, SPM, admittance

CFG = InjectionConfig()
W = CFG.omega_inj


def first_order_point(u_bar, u_tilde, p, distort=None):
    """Point whose ripple follows the closed-form admittance exactly (optionally distorted)."""
    i_bar = (u_bar[0] / p.R, u_bar[1] / p.R)
    g = admittance(i_bar, p)
    it = g.apply(u_tilde[0] / W, u_tilde[1] / W)
    if distort is not None:
        it = distort(i_bar, it)
    return IdPoint(u_bar, u_tilde, i_bar, (float(it[0]), float(it[1])), W)


def synthetic_sweep(p, distort=None, sweep=SweepConfig()):
    return [first_order_point(ub, ut, p, distort) for ub, ut in sweep_plan(p, sweep)]


@pytest.mark.parametrize("p", [IPM, SPM], ids=["ipm", "spm"])
def test_exact_design_recovers_coefficients(p):
    fit = fit_all(synthetic_sweep(p)).values
    assert fit["Ld"] == pytest.approx(p.Ld, rel=1e-12)
    assert fit["Lq"] == pytest.approx(p.Lq, rel=1e-12)
    for key in ("a30", "a40", "a22", "a04"):
        assert fit[key] == pytest.approx(getattr(p, key), rel=1e-9)
    assert fit["a12_cross"] == pytest.approx(p.a12, rel=1e-9)
    assert fit["a12_q"] == pytest.approx(p.a12, rel=1e-9)


def test_two_point_fit_matches_full_sweep():
    pts = synthetic_sweep(IPM)
    full = fit_d_axis(pts, IPM.Ld)
    d_pts = [pt for pt in pts if pt.axis == "d" and pt.u_bar[1] == 0.0 and pt.u_bar[0] != 0.0]
    minimal = fit_d_axis([d_pts[0], d_pts[-1]], IPM.Ld)
    assert minimal.count == 2 and full.count == 9
    assert np.allclose(minimal.coef, full.coef, rtol=0.01)
    assert full.residual < 1e-9


def test_lstsq_agrees_with_normal_equations_on_used_designs():
    pts = synthetic_sweep(SPM)
    i_d = np.array([pt.i_bar[0] for pt in pts if pt.axis == "d" and pt.u_bar[1] == 0.0])
    i_q = np.array([pt.i_bar[1] for pt in pts if pt.axis == "q"])
    rng = np.random.default_rng(0)
    for X in (np.column_stack([6 * SPM.Ld * i_d, 12 * SPM.Ld**2 * i_d**2]),
              (2 * SPM.Lq * i_q)[:, None], (12 * SPM.Lq**2 * i_q**2)[:, None]):
        y = rng.normal(size=X.shape[0])
        a, _ = lstsq(X, y)
        b = lstsq_normal(X, y)
        assert np.allclose(a, b, rtol=1e-10, atol=0)


def test_rank_deficient_design_names_currents():
    pts = [pt for pt in synthetic_sweep(IPM) if pt.axis == "d" and pt.u_bar == (0.0, 0.0)]
    with pytest.raises(IdentificationError, match=r"rank-deficient for i_bar = \[0"):
        fit_d_axis(pts, IPM.Ld)
    with pytest.raises(np.linalg.LinAlgError):
        lstsq(np.ones((3, 2)), np.ones(3))


def test_inductance_from_zero_bias_points():
    pts = synthetic_sweep(SPM)
    assert estimate_Ld_Lq(pts) == pytest.approx((SPM.Ld, SPM.Lq), rel=1e-12)
    with pytest.raises(IdentificationError, match="zero-bias"):
        estimate_Ld_Lq([pt for pt in pts if pt.axis == "d"])
    dead = IdPoint((0.0, 0.0), (15.0, 0.0), (0.0, 0.0), (0.0, 0.0), W)
    with pytest.raises(IdentificationError, match="floor"):
        estimate_Ld_Lq([dead])


def test_cross_family_parity():
    """For the d-excited family the q ripple is odd and the d ripple even in i_bar_q."""
    pts = {pt.u_bar[1]: pt for pt in synthetic_sweep(IPM) if pt.axis == "d" and pt.u_bar[0] == 0.0}
    for uq, pt in pts.items():
        if uq > 0:
            mirror = pts[-uq]
            assert mirror.i_tilde[1] == pytest.approx(-pt.i_tilde[1], rel=1e-12)
            assert mirror.i_tilde[0] == pytest.approx(pt.i_tilde[0], rel=1e-12)


def test_cross_family_parity_on_simulated_plant():
    u = 15.0
    a = run_id_experiment((0.0, IPM.R * IPM.In), (u, 0.0), CFG, IPM)
    b = run_id_experiment((0.0, -IPM.R * IPM.In), (u, 0.0), CFG, IPM)
    assert b.i_tilde[1] == pytest.approx(-a.i_tilde[1], rel=1e-6)
    assert b.i_tilde[0] == pytest.approx(a.i_tilde[0], rel=1e-6)


def test_no_cross_coupling_without_a12():
    p = dataclasses.replace(IPM, a12=0.0, a22=0.0)
    pts = synthetic_sweep(p)
    assert all(abs(pt.i_tilde[0]) < 1e-15 for pt in pts if pt.axis == "q")
    a12, _ = fit_q_axis(pts, p.Lq)
    assert abs(a12.coef[0]) < 1e-12


@pytest.mark.parametrize("p", [IPM, SPM], ids=["ipm", "spm"])
def test_zero_bias_experiment_gives_inductance(p):
    for ut, k, L in (((15.0, 0.0), 0, p.Ld), ((0.0, 15.0), 1, p.Lq)):
        pt = run_id_experiment((0.0, 0.0), ut, CFG, p)
        # 8-sample quadrature of the rectified ripple leaves a tiny offset
        assert pt.i_bar == pytest.approx((0.0, 0.0), abs=1e-3 * p.In)
        # raw single-run value; resistive damping and saturation bias it below 1 %
        assert ut[k] / (W * pt.i_tilde[k]) == pytest.approx(L, rel=1e-2)


def test_linear_plant_experiment_is_exact_up_to_damping():
    lin = IPM.linear()
    pt = run_id_experiment((lin.R * lin.In, 0.0), (15.0, 0.0), CFG, lin)
    assert lin.R * pt.i_bar[0] == pytest.approx(lin.R * lin.In, rel=1e-3)
    assert 15.0 / (W * pt.i_tilde[0]) == pytest.approx(lin.Ld, rel=5e-3)


def test_not_settled_is_reported():
    with pytest.raises(NotSettledError, match="increase the settle time"):
        run_id_experiment((IPM.R * 1.5 * IPM.In, 0.0), (15.0, 0.0), CFG, IPM, settle=0.002)


def test_sweep_plan_layout():
    plan = sweep_plan(IPM, SweepConfig())
    assert len(plan) == 9 + 8 + 9
    assert default_amplitude(IPM) == 15.0 and default_amplitude(SPM) == 14.0
    assert max(abs(ub[0]) for ub, _ in plan) == pytest.approx(2 * IPM.R * IPM.In)


@given(st.floats(0.9, 1.1), st.floats(0.9, 1.1), st.floats(-0.05, 0.05))
def test_refinement_inverts_a_known_bias(kd, kq, tilt):
    """If the measurement distorts the ripple, replaying through the same distortion recovers the plant."""
    def distort(i_bar, it):
        return (it[0] * (1 + 0.01 * kd + tilt * 1e-3 * i_bar[0]), it[1] * (1 - 0.01 * kq))

    truth = IPM
    measured = synthetic_sweep(truth, distort)
    sweep = SweepConfig(max_iter=60, rtol=1e-9)
    with warnings.catch_warnings():
        warnings.simplefilter("error", IdentificationWarning)
        report = identify_from_points(measured, truth.linear(), sweep,
                                      replay=lambda q: synthetic_sweep(q, distort))
    assert report.Ld == pytest.approx(truth.Ld, rel=1e-6)
    assert report.Lq == pytest.approx(truth.Lq, rel=1e-6)
    norm, ref = report.normalized(), truth.normalized()
    for key in ref:
        assert norm[key] == pytest.approx(ref[key], rel=1e-4, abs=1e-8)


def test_a12_disagreement_warns():
    def distort(i_bar, it):
        return (it[0] * 1.2 if i_bar[1] else it[0], it[1])  # corrupt q-family d ripple only

    pts = [pt if pt.axis != "q" else first_order_point(pt.u_bar, pt.u_tilde, IPM, distort)
           for pt in synthetic_sweep(IPM)]
    with pytest.warns(IdentificationWarning, match="disagree"):
        report = identify_from_points(pts, IPM.linear(), SweepConfig(refine=False))
    assert report.a12_spread > 0.1 and report.warnings


@pytest.fixture(scope="module")
def linear_identification():
    return identify_full(IPM.linear(), SweepConfig(workers=4))


def test_linear_plant_identification(linear_identification):
    report, points = linear_identification
    assert report.Ld == pytest.approx(IPM.Ld, rel=1e-6)
    assert report.Lq == pytest.approx(IPM.Lq, rel=1e-6)
    assert all(abs(v) < 1e-3 for v in report.normalized().values())
    assert all(abs(report.raw[k] * f) < 1e-3 for k, f in
               (("a30", IPM.Ld**2 * IPM.In), ("a04", IPM.Lq**3 * IPM.In**2)))
    assert all(r >= 0 for r in report.residuals.values())


def test_report_serialization_and_curves(linear_identification):
    report, points = linear_identification
    m = report.to_mapping()
    assert {"Ld", "a12_spread", "a30_norm", "raw_Ld", "residual_d_axis", "count_a04", "iterations"} <= set(m)
    curves = fitted_curves(points, report, IPM.linear())
    assert len(curves["meas_d"]) == len(points)
    d_rows = curves["axis"] == 0
    assert np.allclose(curves["meas_d"][d_rows], curves["exact_d"][d_rows], rtol=5e-3)
    cols = points_to_columns(points)
    assert np.array_equal(cols["i_bar_d"], [pt.i_bar[0] for pt in points])
    p = report.params(IPM.linear())
    assert p.Ld == report.Ld and p.R == IPM.R
