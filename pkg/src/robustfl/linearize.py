"""Input-output feedback linearization of the nominal plant.

Builds output derivative chains from Lie derivatives, checks the vector
relative degree, and derives the linearizing law, the chain coordinates
(with one tracking-error integrator per output) and the Brunovsky pair.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.linalg import block_diag

from . import expr as ex
from .model import NominalSplit, split_nominal_uncertain

__all__ = [
    "RelativeDegreeError", "SingularDecouplingError", "DiffeomorphismError",
    "lie_derivative", "LieChain", "lie_chain", "relative_degree",
    "decoupling_matrix", "FeedbackLaw", "feedback_law", "Diffeomorphism",
    "diffeomorphism", "brunovsky", "controllability_rank", "chain_offsets",
]

SINGULAR_COND = 1e12


class RelativeDegreeError(ValueError):
    """Relative degree undefined, or the plant lacks full relative degree."""


class SingularDecouplingError(ArithmeticError):
    def __init__(self, message, state=None):
        super().__init__(message)
        self.state = None if state is None else np.array(state, dtype=float)


class DiffeomorphismError(ArithmeticError):
    pass


def lie_derivative(h, field, states):
    """``L_field h = (dh/dx) field``."""
    out = ex.ZERO
    for s, f in zip(states, field):
        if ex.is_zero(f):
            continue
        out = ex.add(out, ex.mul(ex.diff(h, s), f))
    return out


def chain_offsets(degrees):
    """Start index of each output block in the chain coordinates."""
    return np.concatenate([[0], np.cumsum([r + 1 for r in degrees])[:-1]]).astype(int)


@dataclass(frozen=True)
class LieChain:
    """Output derivative chains of the nominal plant.

    ``derivatives[i]`` holds ``[nu_i, L_f nu_i, ..., L_f^{r_i} nu_i]`` and
    ``decoupling[i][k]`` is ``L_{g_k} L_f^{r_i - 1} nu_i``.
    """

    split: NominalSplit
    degrees: tuple
    derivatives: tuple
    decoupling: tuple

    @property
    def system(self):
        return self.split.system

    @property
    def f_star(self):
        return tuple(d[-1] for d in self.derivatives)

    @property
    def n_bar(self):
        return sum(r + 1 for r in self.degrees)


def _sample_ball(x0, radius, count, seed):
    rng = np.random.default_rng(seed)
    scale = radius * (1.0 + np.abs(x0))
    return x0 + scale * rng.uniform(-1.0, 1.0, size=(count, x0.size))


def lie_chain(system, x0=None, tol=1e-9, n_ball=8, ball_radius=1e-3, seed=0):
    """Differentiate each output until an input appears.

    An input is taken to appear in ``L_{g_k} L_f^j nu_i`` when its value
    exceeds ``tol * (1 + |row|)`` at ``x0`` or at any of ``n_ball`` random
    points in a small ball around ``x0``.

    Raises
    ------
    RelativeDegreeError
        No input appears within ``n`` differentiations, or the degrees do
        not sum to the state dimension.
    """
    split = system if isinstance(system, NominalSplit) else split_nominal_uncertain(system)
    sys = split.system
    x0 = sys.x_trim if x0 is None else np.asarray(x0, dtype=float)
    xs = np.vstack([x0, _sample_ball(x0, ball_radius, n_ball, seed)])
    states = sys.state_symbols
    derivatives, decoupling, degrees = [], [], []
    for i, nu in enumerate(sys.outputs):
        chain = [nu]
        h = nu
        for j in range(sys.n):
            row = [lie_derivative(h, [g[k] for g in split.fields0], states)
                   for k in range(sys.m)]
            if _row_appears(row, states, xs, tol):
                degrees.append(j + 1)
                chain.append(lie_derivative(h, split.drift0, states))
                decoupling.append(tuple(row))
                break
            h = lie_derivative(h, split.drift0, states)
            chain.append(h)
        else:
            raise RelativeDegreeError(
                f"relative degree of output {sys.output_names[i]} is undefined "
                f"within {sys.n} differentiations")
        derivatives.append(tuple(chain))
    if sum(degrees) != sys.n:
        raise RelativeDegreeError(
            f"relative degrees {degrees} sum to {sum(degrees)}, not n = {sys.n}; "
            "the plant has zero dynamics (full relative degree required)")
    return LieChain(split, tuple(degrees), tuple(derivatives), tuple(decoupling))


def _row_appears(row, states, xs, tol):
    if all(ex.is_zero(e) for e in row):
        return False
    vals = ex.compile_exprs(row, states).vector(xs.T)
    for col in vals.T:
        if not np.all(np.isfinite(col)):
            continue
        if np.any(np.abs(col) > tol * (1.0 + np.linalg.norm(col))):
            return True
    return False


def relative_degree(system, x0=None, tol=1e-9, seed=0):
    """Vector relative degree of the nominal plant at ``x0`` (trim by default)."""
    return lie_chain(system, x0=x0, tol=tol, seed=seed).degrees


def decoupling_matrix(chain, x0=None):
    """Decoupling matrix expressions and its condition number at ``x0``.

    Raises SingularDecouplingError when the condition number exceeds 1e12.
    """
    sys = chain.system
    x0 = sys.x_trim if x0 is None else np.asarray(x0, dtype=float)
    flat = [e for row in chain.decoupling for e in row]
    vals = np.array(ex.compile_exprs(flat, sys.state_symbols).vector(x0[:, None])[:, 0])
    G = vals.reshape(sys.m, sys.m)
    cond = np.linalg.cond(G) if np.all(np.isfinite(G)) else np.inf
    if not cond <= SINGULAR_COND:
        raise SingularDecouplingError(
            f"decoupling matrix is singular at x0 (condition {cond:.3g})", x0)
    return chain.decoupling, float(cond)


class FeedbackLaw:
    """``u = g*(x)^-1 (v - f*(x))`` built from nominal parameters only."""

    def __init__(self, chain):
        self.chain = chain
        sys = chain.system
        self.n, self.m = sys.n, sys.m
        self._states = sys.state_symbols
        flat = list(chain.f_star) + [e for row in chain.decoupling for e in row]
        self._fg = ex.compile_exprs(flat, self._states)

    def terms(self, x):
        """``(f*(x), g*(x))`` at a single state."""
        vals = np.array(self._fg.scalar(list(map(float, x))), dtype=float)
        return vals[:self.m], vals[self.m:].reshape(self.m, self.m)

    def __call__(self, x, v):
        f, G = self.terms(x)
        return self._solve(G, np.asarray(v, dtype=float) - f, x)

    def _solve(self, G, rhs, x):
        if not np.all(np.isfinite(G)) or np.linalg.cond(G) > SINGULAR_COND:
            raise SingularDecouplingError("decoupling matrix singular along the trajectory", x)
        return np.linalg.solve(G, rhs)

    def batch_terms(self, X):
        vals = self._fg.vector(np.asarray(X, dtype=float).T)
        N = vals.shape[1]
        f = vals[:self.m].T
        G = vals[self.m:].T.reshape(N, self.m, self.m)
        return f, G

    def batch(self, X, V):
        """Vectorized law; rows of ``X`` and ``V`` are sample points."""
        f, G = self.batch_terms(X)
        return np.linalg.solve(G, (np.asarray(V, dtype=float) - f)[..., None])[..., 0]

    @cached_property
    def _jac(self):
        flat = []
        for e in self.chain.f_star:
            flat.extend(ex.diff(e, s) for s in self._states)
        for row in self.chain.decoupling:
            for e in row:
                flat.extend(ex.diff(e, s) for s in self._states)
        return ex.compile_exprs(flat, self._states)

    def batch_jacobians(self, X):
        """``df*/dx`` with shape (N, m, n) and ``dg*/dx`` with shape (N, m, m, n)."""
        vals = self._jac.vector(np.asarray(X, dtype=float).T)
        N = vals.shape[1]
        m, n = self.m, self.n
        dF = vals[:m * n].T.reshape(N, m, n)
        dG = vals[m * n:].T.reshape(N, m, m, n)
        return dF, dG

    def describe(self):
        """Readable ``f*`` and ``g*`` entries."""
        return {
            "f_star": [ex.to_string(e) for e in self.chain.f_star],
            "g_star": [[ex.to_string(e) for e in row] for row in self.chain.decoupling],
        }


def feedback_law(chain):
    return FeedbackLaw(chain)


class Diffeomorphism:
    """Chain coordinates ``chi = T(x, y_c)``.

    For output ``i`` the block is ``[int(y_i - y_ic), y_i - y_ic, y_i', ...,
    y_i^(r_i - 1)]`` where the derivatives are nominal Lie derivatives.
    Integral components are dynamic: they are not functions of ``x`` and
    are carried as extra simulator states.
    """

    def __init__(self, chain, commands=None):
        self.chain = chain
        sys = chain.system
        self.degrees = chain.degrees
        self.n_bar = chain.n_bar
        self.reference_symbols = tuple(ex.symbol(f"{name}_c", "reference")
                                       for name in sys.output_names)
        if commands is None:
            x0 = {s: v for s, v in zip(sys.state_symbols, sys.x_trim)}
            commands = [ex.evaluate(nu, x0) for nu in sys.outputs]
        self.commands = np.asarray(commands, dtype=float)
        self.offsets = chain_offsets(self.degrees)
        self.integral_index = tuple(int(o) for o in self.offsets)
        self.state_index = tuple(k for k in range(self.n_bar) if k not in self.integral_index)
        comps = []
        for i, d in enumerate(chain.derivatives):
            comps.append(None)
            comps.append(ex.sub(d[0], self.reference_symbols[i]))
            comps.extend(d[1:self.degrees[i]])
        self.components = tuple(comps)
        self.map_exprs = tuple(c for c in comps if c is not None)
        states = sys.state_symbols
        self.jacobian_exprs = tuple(tuple(ex.diff(c, s) for s in states) for c in self.map_exprs)
        self._syms = states + self.reference_symbols
        self._map = ex.compile_exprs(self.map_exprs, self._syms)
        self._jac = ex.compile_exprs([e for row in self.jacobian_exprs for e in row], states)
        self.n = sys.n
        self.x_trim = sys.x_trim

    def _yc(self, yc):
        return self.commands if yc is None else np.asarray(yc, dtype=float)

    def evaluate(self, x, yc=None):
        """Non-integral chain coordinates at a single state."""
        vals = list(map(float, x)) + list(map(float, self._yc(yc)))
        return np.array(self._map.scalar(vals), dtype=float)

    def chi(self, x, integrals, yc=None):
        """Full chain coordinates given the integrator states."""
        out = np.empty(self.n_bar)
        out[list(self.integral_index)] = integrals
        out[list(self.state_index)] = self.evaluate(x, yc)
        return out

    def batch_evaluate(self, X, yc=None):
        X = np.asarray(X, dtype=float)
        cols = list(X.T) + [np.full(X.shape[0], c) for c in self._yc(yc)]
        return self._map.vector(cols).T

    def batch_jacobian(self, X):
        X = np.asarray(X, dtype=float)
        vals = self._jac.vector(X.T)
        return vals.T.reshape(X.shape[0], self.n, self.n)

    def jacobian(self, x):
        return self.batch_jacobian(np.asarray(x, dtype=float)[None, :])[0]

    def batch_inverse(self, targets, yc=None, x_guess=None, tol=1e-10, maxiter=60):
        """Solve ``T(x) = target`` for each row of ``targets`` by Newton's method.

        Returns ``(X, ok)``; rows that hit a singular Jacobian or fail to
        converge have ``ok`` False.
        """
        targets = np.atleast_2d(np.asarray(targets, dtype=float))
        N = targets.shape[0]
        guess = self.x_trim if x_guess is None else np.asarray(x_guess, dtype=float)
        X = np.tile(guess, (N, 1)) if guess.ndim == 1 else guess.copy()
        ok = np.ones(N, dtype=bool)
        done = np.zeros(N, dtype=bool)
        scale = 1.0 + np.max(np.abs(targets), axis=1)
        for _ in range(maxiter):
            act = ~done & ok
            if not act.any():
                break
            Xa = X[act]
            r = self.batch_evaluate(Xa, yc) - targets[act]
            err = np.max(np.abs(r), axis=1)
            conv = err <= tol * scale[act]
            idx = np.flatnonzero(act)
            done[idx[conv]] = True
            live = ~conv
            if not live.any():
                break
            idx, Xa, r = idx[live], Xa[live], r[live]
            J = self.batch_jacobian(Xa)
            good = np.all(np.isfinite(J), axis=(1, 2)) & np.all(np.isfinite(r), axis=1)
            cond = np.full(len(idx), np.inf)
            if good.any():
                cond[good] = np.linalg.cond(J[good])
            good &= cond < SINGULAR_COND
            ok[idx[~good]] = False
            if good.any():
                step = np.linalg.solve(J[good], r[good][..., None])[..., 0]
                X[idx[good]] = Xa[good] - step
        ok &= done
        return X, ok

    def inverse(self, target, yc=None, x_guess=None, tol=1e-10, maxiter=60):
        X, ok = self.batch_inverse(np.asarray(target, dtype=float)[None, :], yc,
                                   x_guess, tol, maxiter)
        if not ok[0]:
            raise DiffeomorphismError("could not invert the chain coordinates "
                                      f"at {np.asarray(target).tolist()}")
        return X[0]

    def describe(self):
        names = []
        for c in self.components:
            names.append("integral" if c is None else ex.to_string(c))
        return names


def diffeomorphism(chain, commands=None):
    return Diffeomorphism(chain, commands)


def brunovsky(degrees):
    """Block integrator chains of sizes ``r_i + 1`` (one extra integrator each)."""
    blocks_a = [np.eye(r + 1, k=1) for r in degrees]
    blocks_b = [np.eye(r + 1)[:, -1:] for r in degrees]
    return block_diag(*blocks_a), block_diag(*blocks_b)


def controllability_rank(A, B):
    n = A.shape[0]
    cols = [B]
    for _ in range(n - 1):
        cols.append(A @ cols[-1])
    return int(np.linalg.matrix_rank(np.hstack(cols)))
