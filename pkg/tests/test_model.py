import warnings

import numpy as np
import pytest

from robustfl import expr as ex
from robustfl.model import (ModelError, OperatingBox, ParameterSpec, TrimWarning,
                            UncertainSystem, grid_points, lhs_points, sample_box,
                            split_nominal_uncertain)


def pendulum_system(a=9.81, rel=0.2, x_trim=(0.0, 0.0)):
    sym = {"x1": "state", "x2": "state", "u": "input", "a": "parameter"}
    dyn = [ex.parse("x2", sym), ex.parse("-a*sin(x1) + u", sym)]
    return UncertainSystem.from_dynamics(
        ["x1", "x2"], ["u"], [ParameterSpec("a", a, rel * a)], dyn,
        [ex.parse("x1", sym)], x_trim, [0.0], name="pendulum")


def test_input_affine_split():
    s = pendulum_system()
    assert [ex.to_string(f) for f in s.drift] == ["x2", "-(a*sin(x1))"]
    assert [ex.to_string(g[0]) for g in s.input_fields] == ["0.0", "1.0"]


def test_non_affine_input_rejected():
    sym = {"x": "state", "u": "input"}
    with pytest.raises(ModelError, match="not affine"):
        UncertainSystem.from_dynamics(["x"], ["u"], [], [ex.parse("x + u^2", sym)],
                                      [ex.parse("x", sym)], [0.0], [0.0])


def test_not_square_rejected():
    sym = {"x": "state", "u": "input", "w": "input"}
    with pytest.raises(ModelError, match="system not square"):
        UncertainSystem.from_dynamics(["x"], ["u", "w"], [], [ex.parse("u + w", sym)],
                                      [ex.parse("x", sym)], [0.0], [0.0, 0.0])


def test_trim_warning():
    with pytest.warns(TrimWarning):
        pendulum_system(x_trim=(0.5, 0.0))
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        assert pendulum_system().trim_residual() == 0.0


def test_parameter_spec():
    p = ParameterSpec("a", 2.0, 0.5)
    assert (p.lower, p.upper, p.uncertain) == (1.5, 2.5, True)
    assert not ParameterSpec("b", 1.0).uncertain
    with pytest.raises(ModelError, match="parameter value missing: c"):
        ParameterSpec("c", float("nan"))
    with pytest.raises(ModelError):
        ParameterSpec("d", 1.0, -0.1)


def test_split_nominal_uncertain():
    s = pendulum_system()
    sp = split_nominal_uncertain(s)
    assert [d.name for d in sp.delta_symbols] == ["delta_a"]
    np.testing.assert_allclose(sp.delta_bounds, [0.2 * 9.81])
    # f(x, p0 + dp) - f(x, p0) recovers the parametric term exactly
    b = {"x1": 0.3, "x2": 0.0, "delta_a": 0.7}
    assert ex.evaluate(sp.ddrift[1], b) == pytest.approx(-0.7 * np.sin(0.3), rel=1e-14)
    assert ex.is_zero(ex.simplify(sp.ddrift[0]))
    assert ex.evaluate(sp.drift0[1], b) == pytest.approx(-9.81 * np.sin(0.3), rel=1e-14)


def test_known_parameters_are_substituted():
    s = pendulum_system(rel=0.0)
    sp = split_nominal_uncertain(s)
    assert sp.delta_symbols == () and not sp.has_uncertainty
    assert all(ex.is_zero(ex.simplify(d)) for d in sp.ddrift)


def test_box_validation():
    box = OperatingBox.symmetric([1.0, 2.0], [3.0])
    assert box.contains([0.5, -2.0], [3.0])
    assert not box.contains([1.5, 0.0], [0.0])
    with pytest.raises(ModelError, match="origin"):
        OperatingBox([0.1], [1.0], [-1.0], [1.0])
    with pytest.raises(ModelError):
        OperatingBox([1.0], [-1.0], [-1.0], [1.0])


def test_sampling_shapes_and_bounds():
    g = grid_points([0, -1], [1, 1], 3)
    assert g.shape == (9, 2) and set(g[:, 0]) == {0.0, 0.5, 1.0}
    pts = lhs_points([-1, -2, 0], [1, 2, 5], 100, seed=4)
    assert pts.shape == (100, 3)
    assert np.all(pts >= [-1, -2, 0]) and np.all(pts <= [1, 2, 5])
    # Latin hypercube: one sample per stratum on every axis
    for j, (lo, hi) in enumerate([(-1, 1), (-2, 2), (0, 5)]):
        strata = np.floor((pts[:, j] - lo) / (hi - lo) * 100).astype(int)
        assert sorted(strata) == list(range(100))
    np.testing.assert_array_equal(lhs_points([0], [1], 10, seed=1), lhs_points([0], [1], 10, seed=1))


def test_sample_box_covers_parameters():
    box = OperatingBox.symmetric([1.0], [1.0])
    s = sample_box(box, [ParameterSpec("a", 2.0, 1.0)], "grid", k=3)
    assert s.chi.shape == (27, 1) and s.p.shape == (27, 1)
    assert s.p.min() == 1.0 and s.p.max() == 3.0
