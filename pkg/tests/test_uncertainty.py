import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from robustfl import expr as ex
from robustfl import pipeline as pl
from robustfl.model import uniform_points
from robustfl.modelfile import loads_model
from robustfl.uncertainty import (AnchorViolation, BoundError, BoundResult,
                                  ExpressionBlowupError, LinearizedUncertainModel, assemble_structured_model,
                                  bound_report, bound_rho, build_uncertainty_stack,
                                  coverage_check, grid_oracle)

SCALAR = """
states: [{{name: x, trim: 0.0}}]
inputs: [{{name: u, trim: 0.0}}]
parameters: [{{name: p, nominal: {nominal}, bound: {bound}}}]
dynamics: {{x: "{rhs}"}}
outputs: {{y: x}}
box: {{chi: [1.0, 1.0], v: [1.0]}}
"""


def scalar_model(rhs, nominal=0.0, bound=1.0):
    mf = loads_model(SCALAR.format(rhs=rhs, nominal=nominal, bound=bound))
    lin = pl.linearize_model(mf)
    return mf, lin


def test_pendulum_stack_rows(pendulum):
    stack = pendulum.lin.stack
    assert stack.nonzero_rows() == (2,)
    assert stack.input_rows() == ()
    assert stack.chain_tops() == (2,)
    b = {"x1": 0.4, "x2": 0.0, "delta_a": -1.5}
    assert ex.evaluate(stack.row_exprs()[2], b) == pytest.approx(1.5 * np.sin(0.4), rel=1e-13)


def test_pendulum_gradient_closed_form(pendulum):
    # w = -da*sin(x1) with x1 = chi2 at y_c = 0: gradient (0, -da*cos(chi2), 0 | 0)
    t = pendulum.lin.transform()
    rng = np.random.default_rng(0)
    chi = rng.uniform(-0.5, 0.5, (20, 3))
    v = rng.uniform(-1, 1, (20, 1))
    dp = rng.uniform(-1.962, 1.962, (20, 1))
    w, grad, ok, _ = t.evaluate(chi, v, dp)
    assert ok.all()
    np.testing.assert_allclose(w[:, 0], -dp[:, 0] * np.sin(chi[:, 1]), rtol=1e-12)
    expected = np.zeros((20, 4))
    expected[:, 1] = -dp[:, 0] * np.cos(chi[:, 1])
    np.testing.assert_allclose(grad[:, 0, :], expected, atol=1e-12)


def test_quadratic_mismatch_bound():
    # w = dp*x^2 on |x| <= 1, |dp| <= 1: max |dw/dchi| = 2, times safety 1.1
    mf, lin = scalar_model("p*x^2 + u")
    res = bound_rho(lin.transform(), mf.box, mf.solver["bound"])
    assert res.rho_raw[1] == pytest.approx(2.0, rel=1e-9)
    assert res.rho[1] == pytest.approx(2.2, rel=1e-9)
    assert res.rho[0] == 0.0


def test_input_dependent_mismatch():
    # x' = p*u with p = 1 +/- 0.2: w = dp*v, gradient 0.2 in v only
    mf, lin = scalar_model("p*u", nominal=1.0, bound=0.2)
    assert lin.stack.input_rows() == (1,)
    res, model = pl.compute_bounds(mf, lin)
    assert res.rho_raw[1] == pytest.approx(0.2, rel=1e-12)
    np.testing.assert_allclose(model.G[:, 0], [0.0, 0.22], rtol=1e-12)


def test_gradient_chain_rule_matches_finite_difference(ahfv):
    t = ahfv.lin.transform()
    box = ahfv.mf.box
    rng = np.random.default_rng(5)
    for _ in range(3):
        z = rng.uniform(-0.3, 0.3, box.n_chi + box.n_v)
        chi = (z[:box.n_chi] * box.chi_upper)[None, :]
        v = (z[box.n_chi:] * box.v_upper)[None, :]
        dp = rng.uniform(-1, 1, (1, 4)) * t.stack.split.delta_bounds
        _, grad, ok, _ = t.evaluate(chi, v, dp)
        assert ok.all()
        full = np.hstack([chi, v])[0]
        for j in list(t.state_index) + [box.n_chi, box.n_chi + 1]:
            h = 1e-5 * (box.upper[j] - box.lower[j])
            zp, zm = full.copy(), full.copy()
            zp[j] += h
            zm[j] -= h
            wp, *_ = t.evaluate(zp[None, :box.n_chi], zp[None, box.n_chi:], dp,
                                with_gradient=False)
            wm, *_ = t.evaluate(zm[None, :box.n_chi], zm[None, box.n_chi:], dp,
                                with_gradient=False)
            fd = (wp - wm)[0] / (2 * h)
            scale = np.abs(grad[0, :, :]).max(axis=1) + 1e-12
            np.testing.assert_array_less(np.abs(fd - grad[0, :, j]), 1e-5 * scale + 1e-12)


def test_ahfv_channels(ahfv):
    stack = ahfv.lin.stack
    assert stack.nonzero_rows() == (2, 3, 6, 7, 8)
    assert stack.input_rows() == (3, 8)
    assert stack.chain_tops() == (3, 8)


def test_zero_uncertainty_collapses():
    mf, lin = scalar_model("p*x^2 + u", bound=0.0)
    assert lin.stack.nonzero_rows() == ()
    res, model = pl.compute_bounds(mf, lin)
    assert res.bounds == [] and model.active == ()
    assert not np.any(model.C) and not np.any(model.K) and not np.any(model.G)


def test_anchor_violation():
    # an additive parameter survives at chi = 0: the increment bound cannot cover it
    mf, lin = scalar_model("p + u", nominal=0.0, bound=0.5)
    with pytest.raises(AnchorViolation, match="does not vanish"):
        bound_rho(lin.transform(), mf.box, mf.solver["bound"])
    res = bound_rho(lin.transform(), mf.box, dict(mf.solver["bound"], anchor="warn"))
    assert res.anchor_max == pytest.approx(0.5) and res.warnings


def test_expression_blowup_guard(ahfv):
    with pytest.raises(ExpressionBlowupError, match="nodes"):
        build_uncertainty_stack(ahfv.lin.chain, max_nodes=50)


@settings(max_examples=6, deadline=None)
@given(scale=st.floats(0.1, 3.0))
def test_bound_scales_with_parameter_width(scale):
    # the pendulum mismatch is linear in the deviation, so rho is linear in the width
    mf, lin = scalar_model("-p*sin(x) + u", nominal=1.0, bound=0.2)
    mf2, lin2 = scalar_model("-p*sin(x) + u", nominal=1.0, bound=0.2 * scale)
    r1 = bound_rho(lin.transform(), mf.box).rho_raw[1]
    r2 = bound_rho(lin2.transform(), mf2.box).rho_raw[1]
    assert r2 == pytest.approx(scale * r1, rel=1e-9)


@settings(max_examples=5, deadline=None)
@given(f=st.floats(1.0, 2.0))
def test_bound_monotone_in_box(f):
    mf, lin = scalar_model("p*x^3 + u")
    small = bound_rho(lin.transform(), mf.box).rho_raw[1]
    large = bound_rho(lin.transform(), mf.box.scaled(f)).rho_raw[1]
    assert large >= small * (1 - 1e-12)


def test_coverage_and_oracle_on_pendulum(pendulum):
    res, _ = pendulum.bounds
    t = pendulum.lin.transform()
    viol, worst = coverage_check(t, pendulum.mf.box, res.rho, n=2000)
    assert not viol.any()
    assert worst[2] <= res.rho[2]
    oracle = grid_oracle(t, pendulum.mf.box, points=2000)
    assert oracle[2] <= res.rho_raw[2] + 1e-12


def test_bound_result_roundtrip(pendulum):
    res, _ = pendulum.bounds
    back = BoundResult.from_dict(res.to_dict())
    assert bound_report(back) == bound_report(res)


def test_structured_model_conventions():
    rho = np.array([0, 0, 0.5, 0, 0, 0, 0.1, 0.2, 0.3])
    dense = assemble_structured_model((3, 4), rho, input_channels=(3, 8))
    sparse = assemble_structured_model((3, 4), rho, convention="sparse", input_channels=(3, 8))
    assert dense.active == (2, 6, 7, 8)
    np.testing.assert_array_equal(dense.K[2], np.full(9, 0.5))
    np.testing.assert_array_equal(sparse.K[2], 0.5 * np.eye(9)[2])
    np.testing.assert_array_equal(np.flatnonzero(dense.G[:, 0]), [8])
    np.testing.assert_array_equal(np.diag(dense.C), rho > 0)
    everywhere = assemble_structured_model((3, 4), rho)
    np.testing.assert_array_equal(np.flatnonzero(everywhere.G[:, 0]), [8])
    A, B = dense.perturbed(np.ones(9))
    np.testing.assert_allclose(A - dense.A, np.diag(rho > 0) @ dense.K)
    np.testing.assert_allclose(B - dense.B, dense.G)


def test_structured_model_validation():
    with pytest.raises(ValueError, match="expected 3 bounds"):
        assemble_structured_model((2,), [0.1, 0.2])
    with pytest.raises(ValueError, match="nonnegative"):
        assemble_structured_model((2,), [0, 0, -1.0])
    with pytest.raises(ValueError, match="convention"):
        assemble_structured_model((2,), [0, 0, 1.0], convention="diag")


def test_structured_model_roundtrip():
    m = assemble_structured_model((1, 2), [0, 0.3, 0, 0, 0.2])
    back = LinearizedUncertainModel.from_dict(m.to_dict())
    for key in ("A", "B", "C", "K", "G", "rho"):
        np.testing.assert_array_equal(getattr(back, key), getattr(m, key))
    exact = LinearizedUncertainModel.exact([[0.0]], [1.0])
    assert exact.active == () and exact.B.shape == (1, 1)


def test_box_outside_coordinate_domain_rejected():
    # chi2 = sin(x) cannot reach +-2, so most grid points have no state
    mf = loads_model(SCALAR.format(rhs="-p*x + u", nominal=1.0, bound=0.2)
                     .replace("outputs: {y: x}", "outputs: {y: sin(x)}")
                     .replace("chi: [1.0, 1.0]", "chi: [1.0, 2.0]"))
    lin = pl.linearize_model(mf)
    with pytest.raises(BoundError, match="could not be mapped back"):
        bound_rho(lin.transform(), mf.box)


def test_bound_covers_increments_from_anchor(ahfv):
    # the AHFV mismatch is nonzero at chi = 0, v = 0 for perturbed parameters;
    # the gradient bound still covers the increment from that point
    t, box = ahfv.lin.transform(), ahfv.mf.box
    res, _ = ahfv.bounds
    hw = t.stack.split.delta_bounds
    Z = uniform_points(np.concatenate([box.lower, -hw]), np.concatenate([box.upper, hw]),
                       4000, 11)
    chi, v, dp = Z[:, :t.n_bar], Z[:, t.n_bar:t.n_bar + t.m], Z[:, t.n_bar + t.m:]
    w, _, ok, _ = t.evaluate(chi, v, dp, with_gradient=False)
    w0, _, ok0, _ = t.evaluate(0 * chi, 0 * v, dp, with_gradient=False)
    ok &= ok0
    size = np.abs(np.hstack([chi, v])[ok]).sum(axis=1)
    rho = res.rho[list(t.channels)]
    assert np.abs(w0[ok]).max() > 1.0
    assert np.all(np.abs(w - w0)[ok] <= rho * size[:, None] * (1 + 1e-12))
