"""Closed-loop simulation of the uncertain plant.

The plant runs with its true parameters while the linearizing law uses the
nominal ones; the outer loop is ``v = -G chi``. Integration is classical
fixed-step RK4 on ``[x; integrals; cost]``.
"""

from __future__ import annotations

import logging
import math
import re
from dataclasses import dataclass, field

import numpy as np

from . import expr as ex
from .linearize import SINGULAR_COND, SingularDecouplingError, brunovsky

__all__ = [
    "SimulationError", "Scenario", "Trajectory", "simulate", "iqc_monitor", "IQCReport",
    "run_cases", "case_parameters", "output_derivative", "reference_value",
    "trajectory_coverage", "CASE_FACTORS", "read_csv",
]

log = logging.getLogger(__name__)

CASE_FACTORS = {1: 1.0, 2: 0.8, 3: 1.2}


class SimulationError(RuntimeError):
    pass


def reference_value(steps, t):
    """Value of a step schedule ``[(t_switch, value), ...]`` at time ``t``.

    The first value also holds before the first switch.
    """
    val = steps[0][1]
    for ts, v in steps:
        if ts <= t + 1e-12:
            val = v
        else:
            break
    return val


@dataclass
class Scenario:
    """One simulation run.

    Parameters
    ----------
    p_true : array_like
        True parameter values in declaration order.
    references : list
        Per output, a step schedule ``[(t_switch, value), ...]``.
    horizon, step : float
    x0 : array_like, optional
        Initial state (trim by default).
    integrals0 : array_like, optional
        Initial integrator states (zero by default).
    label : str
    out_of_set : bool
        Allow ``p_true`` outside the parameter set (stress tests).
    """

    p_true: np.ndarray
    references: list
    horizon: float
    step: float = 1e-3
    x0: np.ndarray | None = None
    integrals0: np.ndarray | None = None
    label: str = "scenario"
    out_of_set: bool = False

    def __post_init__(self):
        self.p_true = np.asarray(self.p_true, dtype=float)
        if not self.step > 0:
            raise ValueError("step size must be positive")
        if not self.horizon >= 0:
            raise ValueError("horizon must be nonnegative")

    def commands(self, t):
        return np.array([reference_value(s, t) for s in self.references], dtype=float)

    def switch_times(self):
        return sorted({float(ts) for s in self.references for ts, _ in s})


@dataclass
class Trajectory:
    t: np.ndarray
    x: np.ndarray
    chi: np.ndarray
    u: np.ndarray
    v: np.ndarray
    y: np.ndarray
    yc: np.ndarray
    cost: np.ndarray            # cumulative integral of chi'Q chi + v'R v
    z: np.ndarray | None = None
    zeta: np.ndarray | None = None
    scenario: Scenario | None = None
    diagnostic: str = ""
    diverged: bool = False
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return self.t.size

    @property
    def tracking_error(self):
        return self.y - self.yc

    def header(self):
        cols = ["t"]
        for name, arr in (("x", self.x), ("chi", self.chi), ("u", self.u), ("v", self.v),
                          ("y", self.y), ("yc", self.yc)):
            cols += [f"{name}{i + 1}" for i in range(arr.shape[1])]
        return cols + ["cost"]

    def to_csv(self, path):
        data = np.hstack([self.t[:, None], self.x, self.chi, self.u, self.v, self.y,
                          self.yc, self.cost[:, None]])
        np.savetxt(path, data, delimiter=",", header=",".join(self.header()),
                   comments="", fmt="%.12g")


def read_csv(path, label=None):
    """Rebuild a :class:`Trajectory` from a file written by :meth:`Trajectory.to_csv`."""
    with open(path) as fh:
        cols = fh.readline().strip().split(",")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    groups = {}
    for j, c in enumerate(cols):
        m = re.fullmatch(r"([a-z]+?)(\d*)", c)
        groups.setdefault(m.group(1), []).append(j)
    get = lambda k: data[:, groups.get(k, [])]  # noqa: E731
    sc = None
    if label is not None:
        sc = Scenario(np.zeros(0), [], horizon=0.0, label=label)
    return Trajectory(t=data[:, 0], x=get("x"), chi=get("chi"), u=get("u"), v=get("v"),
                      y=get("y"), yc=get("yc"), cost=data[:, groups["cost"][0]], scenario=sc)


def _compile_plant(system, p_true):
    binding = {s: ex.const(float(v)) for s, v in zip(system.param_symbols, p_true)}
    rhs = [ex.simplify(ex.substitute(e, binding)) for e in system.rhs()]
    return ex.compile_exprs(rhs, system.state_symbols + system.input_symbols)


def _compile_outputs(system):
    return ex.compile_exprs(system.outputs, system.state_symbols)


def simulate(system, law, diffeo, gain, scenario, Q=None, R=None, model=None, stack=None):
    """Integrate the closed loop for one scenario.

    Parameters
    ----------
    system : UncertainSystem
    law : FeedbackLaw
        Nominal linearizing law ``u(x, v)``.
    diffeo : Diffeomorphism
    gain : ndarray (m, n_bar) or callable
        Either the state-feedback gain (``v = -gain chi``) or a function
        ``(t, chi) -> v``.
    scenario : Scenario
    Q, R : ndarray, optional
        Weights of the recorded cost (identity by default).
    model : LinearizedUncertainModel, optional
        Enables recording of the uncertainty outputs ``z``.
    stack : UncertaintyStack, optional
        Enables recording of the realized uncertainty inputs ``zeta``.

    Returns
    -------
    Trajectory
        Truncated, with ``diverged`` set, if the state becomes non-finite.

    Raises
    ------
    SingularDecouplingError
        The decoupling matrix became singular; the exception carries the state.
    """
    n, m, nb = system.n, system.m, diffeo.n_bar
    Q = np.eye(nb) if Q is None else np.asarray(Q, dtype=float)
    R = np.eye(m) if R is None else np.asarray(R, dtype=float)
    if not scenario.out_of_set:
        for p, val in zip(system.parameters, scenario.p_true):
            if not p.contains(val, tol=1e-12 * (1 + abs(p.nominal))):
                raise SimulationError(f"true value {val!r} of '{p.name}' lies outside the "
                                      "parameter set (set out_of_set to allow)")
    plant = _compile_plant(system, scenario.p_true)
    outputs = _compile_outputs(system)
    if callable(gain):
        control = gain
    else:
        Gm = np.asarray(gain, dtype=float).reshape(m, nb)
        control = lambda t, chi: -Gm @ chi  # noqa: E731
        A, B = brunovsky(diffeo.degrees)
        eig = np.linalg.eigvals(A - B @ Gm)
        if np.max(np.abs(eig)) * scenario.step > 0.1:
            log.warning("step size %.3g is coarse for the fastest closed-loop mode "
                        "(|lambda| h = %.3g)", scenario.step, np.max(np.abs(eig)) * scenario.step)

    int_idx = list(diffeo.integral_index)
    st_idx = list(diffeo.state_index)

    def chi_of(x, xi, yc):
        chi = np.empty(nb)
        chi[int_idx] = xi
        chi[st_idx] = diffeo.evaluate(x, yc)
        return chi

    def law_u(x, v):
        f, G = law.terms(x)
        if m == 1:
            g = G[0, 0]
            if not (math.isfinite(g) and abs(g) > 1.0 / SINGULAR_COND):
                raise SingularDecouplingError("decoupling matrix singular along the trajectory",
                                              x)
            return (v - f) / g
        return law._solve(G, v - f, x)

    def deriv(t, s):
        x, xi = s[:n], s[n:n + m]
        yc = scenario.commands(t)
        chi = chi_of(x, xi, yc)
        v = np.asarray(control(t, chi), dtype=float).reshape(m)
        u = law_u(x, v)
        # plain floats keep math's OverflowError instead of numpy warnings
        xs = [float(a) for a in x]
        xdot = plant.scalar(xs + [float(a) for a in u])
        y = np.array(outputs.scalar(xs))
        with np.errstate(over="ignore", invalid="ignore"):
            c = float(chi @ Q @ chi + v @ R @ v)
        return np.concatenate([xdot, y - yc, [c]]), chi, u, v, y, yc

    h = scenario.step
    steps = int(round(scenario.horizon / h))
    x0 = system.x_trim if scenario.x0 is None else np.asarray(scenario.x0, dtype=float)
    xi0 = np.zeros(m) if scenario.integrals0 is None else np.asarray(scenario.integrals0, float)
    s = np.concatenate([x0, xi0, [0.0]])
    T = np.empty(steps + 1)
    Xs, CH = np.empty((steps + 1, n)), np.empty((steps + 1, nb))
    U, V, Y, YC = (np.empty((steps + 1, m)) for _ in range(4))
    COST = np.empty(steps + 1)
    diagnostic, diverged = "", False
    rows = 0
    for k in range(steps + 1):
        t = k * h
        try:
            k1, chi, u, v, y, yc = deriv(t, s)
        except SingularDecouplingError:
            raise
        except (ArithmeticError, ValueError) as err:
            diverged, diagnostic = True, f"evaluation failed at t={t:.6g} ({err})"
            break
        if not (np.all(np.isfinite(k1)) and np.all(np.isfinite(u))):
            diverged, diagnostic = True, f"non-finite state or derivative at t={t:.6g}"
            break
        T[k], Xs[k], CH[k], U[k], V[k], Y[k], YC[k], COST[k] = t, s[:n], chi, u, v, y, yc, s[-1]
        rows = k + 1
        if k == steps:
            break
        try:
            k2 = deriv(t + h / 2, s + h / 2 * k1)[0]
            k3 = deriv(t + h / 2, s + h / 2 * k2)[0]
            k4 = deriv(t + h, s + h * k3)[0]
        except SingularDecouplingError:
            raise
        except (ArithmeticError, ValueError) as err:
            diverged, diagnostic = True, f"evaluation failed after t={t:.6g} ({err})"
            break
        s = s + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    if diverged:
        diagnostic += "; trajectory truncated"
    sl = slice(0, rows)
    traj = Trajectory(T[sl], Xs[sl], CH[sl], U[sl], V[sl], Y[sl], YC[sl], COST[sl],
                      scenario=scenario, diagnostic=diagnostic, diverged=diverged)
    if diverged:
        log.warning("%s: %s", scenario.label, diagnostic)
    if model is not None:
        traj.z = traj.chi @ model.K.T + traj.v @ model.G.T
    if stack is not None:
        dp = _delta_p(system, scenario.p_true)
        traj.zeta = stack.values(traj.x, traj.u, np.tile(dp, (len(traj), 1)))
    return traj


def _delta_p(system, p_true):
    """Deviations of the uncertain parameters (known ones must sit at nominal)."""
    out = []
    for p, val in zip(system.parameters, p_true):
        if p.uncertain:
            out.append(val - p.nominal)
    return np.array(out, dtype=float)


def case_parameters(system, case):
    """True parameters for the standard cases.

    Case 1 keeps nominal values, case 2 scales every uncertain parameter by
    0.8 and case 3 by 1.2; known parameters are never changed.
    """
    f = CASE_FACTORS[int(case)]
    return np.array([p.nominal * f if p.uncertain else p.nominal for p in system.parameters])


def run_cases(system, law, diffeo, gain, references, horizon, step=1e-3, cases=(1, 2, 3),
              **kwargs):
    """Simulate the standard cases with identical references.

    Perturbed cases may leave the parameter set when the relative bound is
    below 20 percent; they are flagged out-of-set rather than rejected.
    """
    out = []
    for c in cases:
        p = case_parameters(system, c)
        inside = all(sp.contains(v, tol=1e-12 * (1 + abs(sp.nominal)))
                     for sp, v in zip(system.parameters, p))
        sc = Scenario(p, references, horizon, step, label=f"case{c}", out_of_set=not inside)
        out.append(simulate(system, law, diffeo, gain, sc, **kwargs))
    return out


@dataclass
class IQCReport:
    channel: int                  # 0-based
    running: np.ndarray           # running integral of z^2 - zeta^2
    threshold: float              # -chi(t0)' D chi(t0)
    satisfied: bool

    @property
    def final(self):
        return float(self.running[-1]) if self.running.size else 0.0


def iqc_monitor(traj, model, D, box=None, t_start=None):
    """Check the integral quadratic constraint of every active channel.

    The window starts at ``t_start`` (default: the last reference switch,
    after which the closed loop is time invariant) and the constraint is
    judged on the integral over the whole remaining horizon.

    Returns
    -------
    reports : list of IQCReport
    box_exit : str
        ``"bound region exited at t=..."`` when ``chi`` or ``v`` leaves
        ``box`` inside the window, else an empty string.
    """
    if traj.z is None or traj.zeta is None:
        raise ValueError("trajectory lacks uncertainty signals (simulate with model and stack)")
    if t_start is None:
        sw = traj.scenario.switch_times() if traj.scenario is not None else [0.0]
        t_start = max([t for t in sw if t <= traj.t[-1]], default=0.0)
    i0 = int(np.searchsorted(traj.t, t_start - 1e-12))
    t = traj.t[i0:]
    chi0 = traj.chi[i0]
    reports = []
    for j, k in enumerate(model.active):
        integrand = traj.z[i0:, k] ** 2 - traj.zeta[i0:, k] ** 2
        running = np.concatenate([[0.0], np.cumsum(0.5 * (integrand[1:] + integrand[:-1])
                                                   * np.diff(t))])
        thr = -float(chi0 @ D[j] @ chi0)
        reports.append(IQCReport(int(k), running, thr, bool(running[-1] >= thr)))
    box_exit = ""
    if box is not None:
        inside = np.all((traj.chi[i0:] >= box.chi_lower - 1e-12)
                        & (traj.chi[i0:] <= box.chi_upper + 1e-12), axis=1)
        inside &= np.all((traj.v[i0:] >= box.v_lower - 1e-12)
                         & (traj.v[i0:] <= box.v_upper + 1e-12), axis=1)
        if not inside.all():
            box_exit = f"bound region exited at t={t[int(np.argmin(inside))]:.6g}"
    return reports, box_exit


def output_derivative(traj, i, r):
    """Central finite-difference estimate of ``y_i^(r)`` at interior samples.

    Returns ``(t, d)`` for the samples where the stencil fits.
    """
    h = traj.t[1] - traj.t[0]
    p = (r + 2) // 2
    offs = np.arange(-p, p + 1)
    # stencil weights from the Taylor system sum_j w_j o_j^k / k! = delta_{kr}
    A = np.vander(offs, 2 * p + 1, increasing=True).T.astype(float)
    rhs = np.zeros(2 * p + 1)
    rhs[r] = math.factorial(r)
    w = np.linalg.solve(A, rhs)
    y = traj.y[:, i]
    N = y.size
    d = sum(wj * y[p + o:N - p + o] for wj, o in zip(w, offs)) / h ** r
    return traj.t[p:N - p], d


def trajectory_coverage(traj, rho, box, norm="inf"):
    """Count stored instants inside ``box`` where ``|zeta_k| > rho_k ||[chi; v]||``.

    Returns ``(violations per channel, number of instants inside the box)``.
    """
    inside = np.all((traj.chi >= box.chi_lower) & (traj.chi <= box.chi_upper), axis=1)
    inside &= np.all((traj.v >= box.v_lower) & (traj.v <= box.v_upper), axis=1)
    cv = np.hstack([traj.chi, traj.v])[inside]
    size = np.sum(np.abs(cv), axis=1) if norm == "inf" else np.linalg.norm(cv, axis=1)
    zeta = np.abs(traj.zeta[inside])
    rho = np.asarray(rho, dtype=float)
    viol = np.sum(zeta > rho[None, :] * size[:, None] * (1 + 1e-9) + 1e-12, axis=0)
    return viol.astype(int), int(np.count_nonzero(inside))
