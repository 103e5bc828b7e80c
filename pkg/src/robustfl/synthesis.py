"""Minimax LQR design for the structured uncertain linear model.

Each active uncertainty channel contributes an integral quadratic
constraint with multiplier ``tau_j``. For fixed multipliers the design is
a game-type algebraic Riccati equation; the multipliers are then chosen to
minimize the resulting guaranteed cost bound.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import schur, solve_continuous_lyapunov
from scipy.optimize import minimize

__all__ = [
    "RiccatiError", "NoStabilizingSolution", "HamiltonianSplitError", "SingularWeightError",
    "NoFeasibleTau", "GameData", "assemble_game", "solve_game_riccati",
    "riccati_residual", "gain", "cost_bound", "MinimaxDesign", "design",
    "optimize_tau", "robust_spot_check", "sym_sqrt", "initial_states",
    "TAU_RANGE", "design_report",
]

TAU_RANGE = (1e-3, 1e6)
RESIDUAL_TOL = 1e-8


class RiccatiError(ArithmeticError):
    """No acceptable solution of the game Riccati equation."""


class NoStabilizingSolution(RiccatiError):
    pass


class HamiltonianSplitError(RiccatiError):
    """The Hamiltonian has eigenvalues on (or numerically near) the imaginary axis."""


class SingularWeightError(RiccatiError):
    pass


class NoFeasibleTau(RiccatiError):
    pass


def sym_sqrt(M):
    """Symmetric square root of a symmetric positive semidefinite matrix."""
    M = np.asarray(M, dtype=float)
    w, V = np.linalg.eigh(0.5 * (M + M.T))
    if np.min(w, initial=0.0) < -1e-10 * max(1.0, np.max(np.abs(w), initial=0.0)):
        raise SingularWeightError("weight matrix is not positive semidefinite")
    return (V * np.sqrt(np.clip(w, 0.0, None))) @ V.T


@dataclass
class GameData:
    """Stacked game matrices for fixed multipliers.

    ``K`` and ``G`` stack the performance output and one scaled
    uncertainty output per active channel, ``E = G^T G`` weights the
    control, and ``C`` holds the scaled uncertainty input directions.
    """

    A: np.ndarray
    B: np.ndarray
    K: np.ndarray
    G: np.ndarray
    E: np.ndarray
    C: np.ndarray


def assemble_game(model, Q, R, tau):
    """Game matrices for multipliers ``tau`` (one per active channel).

    Raises
    ------
    SingularWeightError
        ``E`` is singular, or a multiplier is not positive.
    """
    active = model.active
    tau = np.broadcast_to(np.asarray(tau, dtype=float), (len(active),))
    if np.any(~(tau > 0)):
        raise SingularWeightError("multipliers must be positive")
    n_bar, m = model.n_bar, model.m
    Qh, Rh = sym_sqrt(Q), sym_sqrt(R)
    K = [Qh, np.zeros((m, n_bar))]
    G = [np.zeros((n_bar, m)), Rh]
    C = np.zeros((n_bar, len(active)))
    for j, k in enumerate(active):
        s = np.sqrt(tau[j])
        K.append(s * model.K[k:k + 1, :])
        G.append(s * model.G[k:k + 1, :])
        C[:, j] = model.C[:, k] / s
    K, G = np.vstack(K), np.vstack(G)
    E = G.T @ G
    if np.linalg.cond(E) > 1e12:
        raise SingularWeightError("control weighting G^T G is singular; check R")
    return GameData(model.A, model.B, K, G, E, C)


def _riccati_terms(game):
    Einv = np.linalg.inv(game.E)
    Abar = game.A - game.B @ Einv @ game.G.T @ game.K
    S = game.B @ Einv @ game.B.T - game.C @ game.C.T
    I = np.eye(game.K.shape[0])
    Qbar = game.K.T @ (I - game.G @ Einv @ game.G.T) @ game.K
    return Abar, 0.5 * (S + S.T), 0.5 * (Qbar + Qbar.T)


def riccati_residual(X, game):
    """Left-hand side of the game Riccati equation at ``X``."""
    Abar, S, Qbar = _riccati_terms(game)
    return Abar.T @ X + X @ Abar - X @ S @ X + Qbar


def solve_game_riccati(game, refine=True):
    """Stabilizing solution of ``Abar^T X + X Abar - X S X + Qbar = 0``.

    Here ``Abar = A - B E^-1 G^T K``, ``S = B E^-1 B^T - C C^T`` and
    ``Qbar = K^T (I - G E^-1 G^T) K``. The stable invariant subspace of the
    Hamiltonian ``[[Abar, -S], [-Qbar, -Abar^T]]`` is found by an ordered
    real Schur decomposition, followed by one Newton refinement step.

    Returns
    -------
    X : ndarray
    residual : float
        Frobenius norm of the equation residual.

    Raises
    ------
    HamiltonianSplitError, NoStabilizingSolution
    """
    Abar, S, Qbar = _riccati_terms(game)
    n = Abar.shape[0]
    H = np.block([[Abar, -S], [-Qbar, -Abar.T]])
    if not np.all(np.isfinite(H)):
        raise NoStabilizingSolution("non-finite Hamiltonian")
    scale = max(1.0, np.linalg.norm(H, 1))
    T, U, sdim = schur(H, output="real", sort=lambda re, im: re < -1e-10 * scale)
    eig = np.linalg.eigvals(H)
    if np.min(np.abs(eig.real)) <= 1e-10 * scale:
        raise HamiltonianSplitError("Hamiltonian has eigenvalues on the imaginary axis")
    if sdim != n:
        raise HamiltonianSplitError(f"stable subspace has dimension {sdim}, expected {n}")
    U11, U21 = U[:n, :n], U[n:, :n]
    if np.linalg.cond(U11) > 1e12:
        raise NoStabilizingSolution("stable subspace is not a graph (no stabilizing solution)")
    X = np.linalg.solve(U11.T, U21.T).T
    X = 0.5 * (X + X.T)
    res = np.linalg.norm(riccati_residual(X, game))
    if refine:
        Acl = Abar - S @ X
        try:
            X1 = solve_continuous_lyapunov(Acl.T, -(Qbar + X @ S @ X))
            X1 = 0.5 * (X1 + X1.T)
            res1 = np.linalg.norm(riccati_residual(X1, game))
            if np.isfinite(res1) and res1 < res:
                X, res = X1, res1
        except (np.linalg.LinAlgError, ValueError):
            pass
    normX = np.linalg.norm(X)
    if not res <= RESIDUAL_TOL * (1.0 + normX):
        raise NoStabilizingSolution(f"Riccati residual {res:.3e} exceeds tolerance")
    if np.max(np.linalg.eigvals(Abar - S @ X).real) >= 0:
        raise NoStabilizingSolution("solution is not stabilizing")
    if np.min(np.linalg.eigvalsh(X)) < -1e-8 * (1.0 + normX):
        raise NoStabilizingSolution("solution is not positive semidefinite")
    return X, float(res)


def gain(X, game):
    """Feedback gain ``E^-1 (B^T X + G^T K)``; the control is ``v = -gain chi``."""
    return np.linalg.solve(game.E, game.B.T @ X + game.G.T @ game.K)


def initial_states(n_bar, chi0="unit-average"):
    """Initial states for the cost bound as columns of a matrix.

    ``"unit-average"`` averages over the canonical basis vectors.
    """
    if isinstance(chi0, str):
        if chi0 != "unit-average":
            raise ValueError(f"unknown initial-state rule {chi0!r}")
        return np.eye(n_bar) / np.sqrt(n_bar)
    chi0 = np.asarray(chi0, dtype=float)
    return chi0.reshape(n_bar, -1)


def cost_bound(X, tau, D, chi0):
    """``chi0^T X chi0 + sum_j tau_j chi0^T D_j chi0``.

    ``chi0`` may hold several initial states as columns; their bounds are
    summed (so columns scaled by ``1/sqrt(N)`` give the average).
    """
    chi0 = np.asarray(chi0, dtype=float)
    if chi0.ndim == 1:
        chi0 = chi0[:, None]
    val = float(np.sum(chi0 * (X @ chi0)))
    for t, Dj in zip(np.atleast_1d(tau), D):
        val += float(t) * float(np.sum(chi0 * (Dj @ chi0)))
    return val


@dataclass
class MinimaxDesign:
    Q: np.ndarray
    R: np.ndarray
    D: list
    tau: np.ndarray
    active: tuple
    X: np.ndarray
    gain: np.ndarray
    bound: float
    residual: float
    closed_loop_eigs: np.ndarray
    rho: np.ndarray
    chi0: np.ndarray = field(repr=False, default=None)

    @property
    def is_lqr(self):
        return len(self.active) == 0

    def to_dict(self):
        eig = np.sort_complex(self.closed_loop_eigs)
        return {
            "Q": self.Q.tolist(), "R": self.R.tolist(), "D": [d.tolist() for d in self.D],
            "tau": [float(t) for t in self.tau], "active": [k + 1 for k in self.active],
            "X": self.X.tolist(), "gain": self.gain.tolist(), "bound": float(self.bound),
            "residual": float(self.residual), "rho": self.rho.tolist(),
            "closed_loop_eigs": [[float(z.real), float(z.imag)] for z in eig],
            "chi0": None if self.chi0 is None else self.chi0.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        arr = lambda key: np.array(d[key], dtype=float)  # noqa: E731
        eig = np.array([complex(a, b) for a, b in d["closed_loop_eigs"]])
        return cls(arr("Q"), arr("R"), [np.array(x, dtype=float) for x in d["D"]],
                   arr("tau"), tuple(k - 1 for k in d["active"]), arr("X"), arr("gain"),
                   float(d["bound"]), float(d["residual"]), eig, arr("rho"),
                   None if d.get("chi0") is None else arr("chi0"))


def _default_D(model, D_scale):
    return [D_scale * np.eye(model.n_bar) for _ in model.active]


def design(model, Q, R, tau, D=None, chi0="unit-average", D_scale=1e-2):
    """Minimax design for fixed multipliers.

    Raises
    ------
    RiccatiError
        Infeasible multipliers or a closed loop that is not Hurwitz.
    """
    Q, R = np.asarray(Q, dtype=float), np.asarray(R, dtype=float)
    D = _default_D(model, D_scale) if D is None else [np.asarray(d, dtype=float) for d in D]
    tau = np.broadcast_to(np.asarray(tau, dtype=float), (len(model.active),)).copy()
    game = assemble_game(model, Q, R, tau)
    X, res = solve_game_riccati(game)
    Gt = gain(X, game)
    eig = np.linalg.eigvals(model.A - model.B @ Gt)
    if np.max(eig.real) >= 0:
        raise NoStabilizingSolution("A - B G is not Hurwitz")
    C0 = initial_states(model.n_bar, chi0)
    return MinimaxDesign(Q, R, D, tau, model.active, X, Gt, cost_bound(X, tau, D, C0),
                         res, eig, model.rho.copy(), C0)


def _bound_or_inf(model, Q, R, tau, D, chi0):
    try:
        return design(model, Q, R, tau, D, chi0).bound
    except (RiccatiError, np.linalg.LinAlgError):
        return np.inf


def optimize_tau(model, Q, R, D=None, chi0="unit-average", tau_init=1.0, D_scale=1e-2,
                 maxiter=None):
    """Multipliers minimizing the guaranteed cost bound.

    A joint sweep over 7 log-spaced scalings in ``TAU_RANGE`` (plus
    ``tau_init``) picks the start; log-space coordinate descent and a
    bounded Nelder-Mead search in ``log10(tau)`` follow. Infeasible
    multipliers score ``+inf``. The result never scores worse than
    ``tau_init``.

    Returns
    -------
    tau : ndarray
        One multiplier per active channel.
    bound : float

    Raises
    ------
    NoFeasibleTau
    """
    na = len(model.active)
    D = _default_D(model, D_scale) if D is None else D
    tau_init = np.broadcast_to(np.asarray(tau_init, dtype=float), (na,)).copy()
    if na == 0:
        return tau_init, _bound_or_inf(model, Q, R, tau_init, D, chi0)
    lo, hi = np.log10(TAU_RANGE[0]), np.log10(TAU_RANGE[1])
    cache = {}

    def f(logt):
        logt = np.clip(np.asarray(logt, dtype=float), lo, hi)
        key = tuple(np.round(logt, 12))
        if key not in cache:
            cache[key] = _bound_or_inf(model, Q, R, 10.0 ** logt, D, chi0)
        return cache[key]

    starts = [np.log10(tau_init)] + [np.full(na, s) for s in np.linspace(lo, hi, 7)]
    vals = [f(s) for s in starts]
    best_i = int(np.argmin(vals))
    if not np.isfinite(vals[best_i]):
        raise NoFeasibleTau(f"no feasible multipliers found in [{TAU_RANGE[0]:g}, "
                            f"{TAU_RANGE[1]:g}]")
    x, fx = np.clip(starts[best_i], lo, hi), vals[best_i]

    step = 1.0
    while step >= 1.0 / 64:
        improved = False
        for i in range(na):
            for sgn in (1.0, -1.0):
                y = x.copy()
                y[i] = np.clip(y[i] + sgn * step, lo, hi)
                fy = f(y)
                if fy < fx:
                    x, fx, improved = y, fy, True
                    break
        if not improved:
            step *= 0.5

    res = minimize(f, x, method="Nelder-Mead", bounds=[(lo, hi)] * na,
                   options={"maxiter": maxiter or 200 * na, "xatol": 1e-6, "fatol": 1e-10})
    if res.fun < fx:
        x, fx = np.clip(res.x, lo, hi), float(res.fun)
    x_init = np.log10(tau_init)
    if f(x_init) <= fx:
        x, fx = x_init, f(x_init)
    return 10.0 ** x, float(fx)


def robust_spot_check(model, design_, n=100, seed=0):
    """Hurwitz test of the perturbed closed loop under random static uncertainty.

    Draws ``Delta_k`` uniformly in ``[-1, 1]`` for every channel.

    Returns
    -------
    failures : int
    worst_abscissa : float
    """
    rng = np.random.default_rng(seed)
    failures, worst = 0, -np.inf
    for _ in range(n):
        delta = rng.uniform(-1.0, 1.0, model.n_bar)
        A, B = model.perturbed(delta)
        a = float(np.max(np.linalg.eigvals(A - B @ design_.gain).real))
        worst = max(worst, a)
        failures += a >= 0
    return int(failures), worst


def _fmt_matrix(M):
    return "\n".join("  " + " ".join(f"{float(v)!r:>24}" for v in row) for row in np.atleast_2d(M))


def design_report(d):
    """Fixed-format text design report."""
    lines = ["# minimax design"]
    if d.is_lqr:
        lines.append("# no active uncertainty channel: reduces to standard LQR")
    lines += ["Q:", _fmt_matrix(d.Q), "R:", _fmt_matrix(d.R),
              "active channels: " + (" ".join(str(k + 1) for k in d.active) or "none"),
              "tau: " + (" ".join(repr(float(t)) for t in d.tau) or "none"),
              "rho: " + " ".join(repr(float(r)) for r in d.rho),
              "gain:", _fmt_matrix(d.gain),
              "closed-loop eigenvalues:"]
    for z in np.sort_complex(d.closed_loop_eigs):
        lines.append(f"  {float(z.real)!r} {float(z.imag):+}j")
    lines += [f"bound: {float(d.bound)!r}", f"riccati residual: {float(d.residual):.3e}"]
    return "\n".join(lines) + "\n"
