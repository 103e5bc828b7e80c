import numpy as np
import pytest
import scipy.linalg as sl
from hypothesis import given, settings
from hypothesis import strategies as st

from robustfl.synthesis import (TAU_RANGE, MinimaxDesign, NoFeasibleTau, SingularWeightError,
                                assemble_game, cost_bound, design, design_report, gain,
                                initial_states, optimize_tau, riccati_residual,
                                robust_spot_check, solve_game_riccati, sym_sqrt)
from robustfl.uncertainty import LinearizedUncertainModel, assemble_structured_model


def random_system(rng, n, m):
    A = rng.normal(size=(n, n))
    B = rng.normal(size=(n, m))
    L = rng.normal(size=(n, n))
    Q = L @ L.T / n + 1e-3 * np.eye(n)
    M = rng.normal(size=(m, m))
    R = M @ M.T + np.eye(m)
    return A, B, Q, R


def scipy_game_solution(game):
    # the game equation is a standard ARE with inputs [v, w] weighted by diag(E, -I)
    c = game.C.shape[1]
    Bt = np.hstack([game.B, game.C])
    Rt = sl.block_diag(game.E, -np.eye(c))
    S = np.hstack([game.K.T @ game.G, np.zeros((game.A.shape[0], c))])
    return sl.solve_continuous_are(game.A, Bt, game.K.T @ game.K, Rt, s=S)


def test_scalar_lqr_closed_form():
    model = LinearizedUncertainModel.exact([[0.0]], [[1.0]])
    d = design(model, np.eye(1), np.eye(1), [])
    assert d.is_lqr
    assert abs(d.X[0, 0] - 1.0) <= 1e-12
    assert abs(d.gain[0, 0] - 1.0) <= 1e-12


def test_double_integrator_lqr_closed_form():
    # x'' = v, Q = I, R = 1: X = [[sqrt3, 1], [1, sqrt3]], gain = [1, sqrt3]
    model = LinearizedUncertainModel.exact([[0, 1], [0, 0]], [[0], [1]])
    d = design(model, np.eye(2), np.eye(1), [])
    s3 = np.sqrt(3.0)
    np.testing.assert_allclose(d.X, [[s3, 1.0], [1.0, s3]], rtol=1e-12)
    np.testing.assert_allclose(d.gain, [[1.0, s3]], rtol=1e-12)


def test_random_lqr_matches_scipy():
    rng = np.random.default_rng(11)
    for _ in range(20):
        n = int(rng.integers(1, 13))
        m = int(rng.integers(1, min(n, 4) + 1))
        A, B, Q, R = random_system(rng, n, m)
        model = LinearizedUncertainModel.exact(A, B)
        game = assemble_game(model, Q, R, [])
        X, res = solve_game_riccati(game)
        Xs = sl.solve_continuous_are(A, B, Q, R)
        assert np.linalg.norm(X - Xs) <= 1e-8 * (1 + np.linalg.norm(Xs))
        assert res <= 1e-8 * (1 + np.linalg.norm(X))


def test_game_solution_matches_scipy_indefinite_form():
    model = assemble_structured_model((3, 4), [0, 0, .01, .02, 0, 0, .1, .05, .2],
                                      input_channels=(3, 8))
    Q = np.diag([10, 5, 5, 1, 1, 1, 1, 1, 1.0])
    R = np.eye(2)
    tau, _ = optimize_tau(model, Q, R)
    game = assemble_game(model, Q, R, tau)
    X, res = solve_game_riccati(game)
    Xs = scipy_game_solution(game)
    assert np.linalg.norm(X - Xs) <= 1e-8 * (1 + np.linalg.norm(Xs))
    assert np.linalg.norm(riccati_residual(X, game)) <= 1e-8 * (1 + np.linalg.norm(X))


def test_pendulum_design(pendulum):
    d = pendulum.design
    model = pendulum.bounds[1]
    assert d.active == (2,)
    assert d.residual <= 1e-8 * (1 + np.linalg.norm(d.X))
    assert np.all(d.closed_loop_eigs.real < 0)
    assert np.allclose(d.X, d.X.T) and np.min(np.linalg.eigvalsh(d.X)) > 0
    failures, worst = robust_spot_check(model, d)
    assert failures == 0 and worst < 0


def test_tau_optimum_beats_dense_scan(first_order):
    # one active channel: a 200-point log scan is an independent oracle for the optimum
    model = first_order.bounds[1]
    mf = first_order.mf
    Q = np.eye(model.n_bar) if mf.Q is None else mf.Q
    R = np.eye(model.m) if mf.R is None else mf.R
    assert len(model.active) == 1
    tau, best = optimize_tau(model, Q, R)
    scan = []
    for t in np.logspace(np.log10(TAU_RANGE[0]), np.log10(TAU_RANGE[1]), 200):
        try:
            scan.append(design(model, Q, R, [t]).bound)
        except Exception:
            scan.append(np.inf)
    assert np.isfinite(min(scan))
    assert best <= min(scan) * (1 + 1e-9)
    assert design(model, Q, R, tau).bound == pytest.approx(best, rel=1e-12)


def test_optimizer_never_worse_than_start(pendulum):
    model = pendulum.bounds[1]
    Q, R = pendulum.mf.Q, pendulum.mf.R
    start = design(model, Q, R, [10.0]).bound
    _, best = optimize_tau(model, Q, R, tau_init=10.0)
    assert best <= start


def test_infeasible_bounds():
    # input-gain uncertainty far above the nominal gain: no multiplier works
    model = assemble_structured_model((2,), [0, 0, 50.0], input_channels=(2,))
    with pytest.raises(NoFeasibleTau):
        optimize_tau(model, np.eye(3), np.eye(1))


def test_singular_weights():
    model = LinearizedUncertainModel.exact([[0.0]], [[1.0]])
    with pytest.raises(SingularWeightError):
        design(model, np.eye(1), np.zeros((1, 1)), [])
    with pytest.raises(SingularWeightError):
        sym_sqrt(-np.eye(2))
    uncertain = assemble_structured_model((1,), [0, 0.2])
    with pytest.raises(SingularWeightError, match="positive"):
        assemble_game(uncertain, np.eye(2), np.eye(1), [0.0])


def test_cost_bound_and_initial_states():
    X = np.diag([1.0, 2.0])
    D = [np.eye(2)]
    assert cost_bound(X, [3.0], D, [1.0, 1.0]) == pytest.approx(3.0 + 6.0)
    C0 = initial_states(2)
    # average over e1, e2 of e'Xe + tau e'De
    assert cost_bound(X, [3.0], D, C0) == pytest.approx((1 + 2) / 2 + 3.0)
    with pytest.raises(ValueError):
        initial_states(2, "corner")


def test_gain_definition():
    model = LinearizedUncertainModel.exact([[0.0]], [[2.0]])
    game = assemble_game(model, np.eye(1), 4 * np.eye(1), [])
    X, _ = solve_game_riccati(game)
    np.testing.assert_allclose(gain(X, game), 2.0 * X / 4.0)


def test_design_roundtrip_and_report(pendulum):
    d = pendulum.design
    back = MinimaxDesign.from_dict(d.to_dict())
    assert design_report(back) == design_report(d)
    lqr = design(LinearizedUncertainModel.exact([[0.0]], [[1.0]]), np.eye(1), np.eye(1), [])
    assert "reduces to standard LQR" in design_report(lqr)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), tau=st.floats(1.0, 1e3))
def test_game_solution_dominates_lqr(seed, tau):
    # the worst-case cost-to-go is never below the nominal one
    rng = np.random.default_rng(seed)
    rho = np.zeros(3)
    rho[2] = rng.uniform(0.01, 0.3)
    model = assemble_structured_model((2,), rho, input_channels=())
    Q, R = np.eye(3), np.eye(1)
    try:
        d = design(model, Q, R, [tau])
    except Exception:
        return
    lqr = design(LinearizedUncertainModel.exact(model.A, model.B), Q, R, [])
    assert np.min(np.linalg.eigvalsh(d.X - lqr.X)) >= -1e-9 * np.linalg.norm(d.X)
