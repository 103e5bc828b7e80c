import numpy as np
import pytest

from robustfl import pipeline as pl
from robustfl.modelfile import loads_model
from robustfl.sim import (CASE_FACTORS, Scenario, SimulationError, case_parameters,
                          iqc_monitor, output_derivative, read_csv, reference_value,
                          run_cases, simulate, trajectory_coverage)


def sim(run, scenario, gain=None):
    lin = run.lin
    d = run.design
    return simulate(run.mf.system, lin.law, lin.diffeo, d.gain if gain is None else gain,
                    scenario, Q=d.Q, R=d.R, model=run.bounds[1], stack=lin.stack)


def test_reference_schedule():
    steps = [(0.0, 1.0), (2.0, 3.0)]
    assert [reference_value(steps, t) for t in (-1.0, 0.0, 1.9, 2.0, 5.0)] == \
        [1.0, 1.0, 1.0, 3.0, 3.0]
    sc = Scenario([1.0], [steps], horizon=1.0)
    assert sc.switch_times() == [0.0, 2.0]
    with pytest.raises(ValueError):
        Scenario([1.0], [steps], horizon=1.0, step=0.0)


def test_equilibrium_is_invariant(ahfv):
    sys = ahfv.mf.system
    sc = Scenario(sys.p_nominal, ahfv.mf.reference_schedule(), horizon=0.5, step=1e-2)
    sc.references = [[(0.0, float(sys.x_trim[0]))], [(0.0, float(sys.x_trim[1]))]]
    lin = ahfv.lin
    gain = np.ones((sys.m, lin.chain.n_bar))
    tr = simulate(sys, lin.law, lin.diffeo, gain, sc, Q=ahfv.mf.Q, R=ahfv.mf.R)
    assert not tr.diverged
    np.testing.assert_allclose(tr.x, np.tile(sys.x_trim, (len(tr), 1)),
                               atol=1e-9 * (1 + np.abs(sys.x_trim)).max())
    assert np.max(np.abs(tr.cost)) < 1e-12


def test_rk4_fourth_order(pendulum):
    # perturbed plant, nonlinear closed loop: halving h shrinks the error ~16x
    sys = pendulum.mf.system
    refs = pendulum.mf.reference_schedule()
    p = case_parameters(sys, 2)
    ref = sim(pendulum, Scenario(p, refs, horizon=2.0, step=0.0025)).x[-1]
    errs = []
    for h in (0.04, 0.02, 0.01):
        errs.append(np.linalg.norm(sim(pendulum, Scenario(p, refs, 2.0, h)).x[-1] - ref))
    ratios = [errs[0] / errs[1], errs[1] / errs[2]]
    assert all(12 < r < 20 for r in ratios), ratios


def test_nominal_plant_is_exactly_linearized(pendulum):
    sys = pendulum.mf.system
    tr = sim(pendulum, Scenario(sys.p_nominal, pendulum.mf.reference_schedule(), 3.0, 1e-3))
    t, d2 = output_derivative(tr, 0, 2)
    v = tr.v[1:-1, 0][1:-1]
    assert t.size == v.size
    np.testing.assert_allclose(d2, v, atol=1e-6 * (1 + np.abs(v).max()))


def test_output_derivative_stencil():
    class T:
        pass
    tr = T()
    tr.t = np.linspace(0, 1, 101)
    tr.y = np.sin(tr.t)[:, None]
    t, d3 = output_derivative(tr, 0, 3)
    # five-point stencil, second order: error about h^2/4 * max|y^(5)|
    np.testing.assert_allclose(d3, -np.cos(t), atol=3e-5)


def test_case_parameters_scale_uncertain_only(ahfv):
    sys = ahfv.mf.system
    p2 = case_parameters(sys, 2)
    for spec, val in zip(sys.parameters, p2):
        expected = spec.nominal * CASE_FACTORS[2] if spec.uncertain else spec.nominal
        assert val == expected


def test_out_of_set_parameters_rejected_unless_flagged(first_order):
    refs = first_order.mf.reference_schedule()
    with pytest.raises(SimulationError, match="outside the parameter set"):
        sim(first_order, Scenario([2.0], refs, 1.0, 1e-2))
    tr = sim(first_order, Scenario([2.0], refs, 1.0, 1e-2, out_of_set=True))
    assert len(tr) == 101


def test_first_order_tracks_in_all_cases(first_order):
    lin, d, mf = first_order.lin, first_order.design, first_order.mf
    trajs = run_cases(mf.system, lin.law, lin.diffeo, d.gain, mf.reference_schedule(),
                      horizon=10.0, step=1e-3)
    step = mf.reference_schedule()[0][-1][1]
    for tr in trajs:
        assert not tr.diverged
        assert abs(tr.tracking_error[-1, 0]) <= 1e-3 * abs(step)
    # with a 20% bound the +-20% cases sit exactly on the parameter set edge
    assert not any(tr.scenario.out_of_set for tr in trajs)


def test_csv_roundtrip(tmp_path, first_order):
    sys = first_order.mf.system
    tr = sim(first_order, Scenario(sys.p_nominal, first_order.mf.reference_schedule(),
                                   1.0, 1e-2, label="case1"))
    path = tmp_path / "case1.csv"
    tr.to_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "t,x1,chi1,chi2,u1,v1,y1,yc1,cost"
    assert len(lines) == 1 + 101
    back = read_csv(path, label="case1")
    np.testing.assert_allclose(back.chi, tr.chi, rtol=1e-11, atol=1e-14)
    np.testing.assert_allclose(back.cost, tr.cost, rtol=1e-11, atol=1e-14)
    assert back.scenario.label == "case1"


def test_divergence_truncates_trajectory():
    mf = loads_model("""
states: [{name: x, trim: 0.0}]
inputs: [{name: u, trim: 0.0}]
parameters: [{name: p, nominal: 0.0, bound: 1.0}]
dynamics: {x: "p*x^2 + u"}
outputs: {y: x}
""")
    lin = pl.linearize_model(mf)
    sc = Scenario([1.0], [[(0.0, 0.0)]], horizon=5.0, step=1e-2, x0=[2.0])
    tr = simulate(mf.system, lin.law, lin.diffeo, np.zeros((1, 2)), sc)
    assert tr.diverged and "truncated" in tr.diagnostic
    assert 0 < len(tr) < 501


def test_iqc_monitor_and_box_exit(pendulum):
    sys = pendulum.mf.system
    model = pendulum.bounds[1]
    d = pendulum.design
    refs = [[(0.0, 0.2)]]
    tr = sim(pendulum, Scenario(sys.p_nominal, refs, 5.0, 1e-3))
    reports, exit_msg = iqc_monitor(tr, model, d.D, pendulum.mf.box)
    assert [r.channel for r in reports] == [2]
    # nominal plant: zeta = 0, so the integral is nonnegative and the IQC holds
    assert reports[0].satisfied and exit_msg == ""
    big = [[(0.0, 3.0)]]
    tr = sim(pendulum, Scenario(sys.p_nominal, big, 1.0, 1e-3))
    _, exit_msg = iqc_monitor(tr, model, d.D, pendulum.mf.box)
    assert exit_msg.startswith("bound region exited at t=0")


def test_trajectory_respects_bound_inside_box(pendulum):
    sys = pendulum.mf.system
    res, _ = pendulum.bounds
    for case in (2, 3):
        tr = sim(pendulum, Scenario(case_parameters(sys, case),
                                    pendulum.mf.reference_schedule(), 5.0, 1e-3))
        viol, inside = trajectory_coverage(tr, res.rho, pendulum.mf.box)
        assert inside > 0 and not viol.any()


def test_iqc_requires_recorded_signals(pendulum):
    sys = pendulum.mf.system
    lin = pendulum.lin
    tr = simulate(sys, lin.law, lin.diffeo, pendulum.design.gain,
                  Scenario(sys.p_nominal, pendulum.mf.reference_schedule(), 0.1, 1e-2))
    with pytest.raises(ValueError, match="uncertainty signals"):
        iqc_monitor(tr, pendulum.bounds[1], pendulum.design.D)
