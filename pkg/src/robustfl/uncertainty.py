"""Structured linearized uncertainty model.

The mismatch between the true and the nominal chain dynamics is collected
per chain row, re-expressed in chain coordinates, and bounded over the
operating box and the parameter set by the mean value theorem: each row
``w_k`` satisfies ``|w_k| <= rho_k * ||[chi; v]||_1`` when ``rho_k`` bounds
the infinity norm of its gradient and ``w_k`` vanishes at the origin.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.optimize import minimize

from . import expr as ex
from .linearize import SINGULAR_COND, brunovsky, chain_offsets, lie_derivative
from .model import corner_points, grid_points, lhs_points, uniform_points

__all__ = [
    "BoundError", "AnchorViolation", "ExpressionBlowupError", "UncertaintyStack",
    "build_uncertainty_stack", "ChiTransform", "transform_to_chi", "ChannelBound",
    "BoundResult", "bound_rho", "grid_oracle", "coverage_check", "bound_report",
    "LinearizedUncertainModel", "assemble_structured_model", "MAX_NODES",
]

log = logging.getLogger(__name__)

MAX_NODES = 10**6


class BoundError(RuntimeError):
    """Bounding failed: singular point in the box or too many skipped samples."""


class AnchorViolation(BoundError):
    """The uncertainty does not vanish at the origin of the chain coordinates."""


class ExpressionBlowupError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# Symbolic stack
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class UncertaintyStack:
    """Chain-derivative mismatch, one expression per chain row.

    ``entries[i][j - 1]`` is the mismatch in the derivative of chain
    coordinate ``y_i^(j-1)``:

        L_{df} L_f^{j-1} nu_i + sum_k L_{dg_k} L_f^{j-1} nu_i * u_k

    It is a function of the states, the inputs and the parameter deviations
    and vanishes identically when all deviations are zero. Row ``j`` of
    output ``i`` lands in chain coordinate ``offset_i + j`` (0-based, the
    integrator sits at ``offset_i``).
    """

    chain: object
    entries: tuple

    @property
    def split(self):
        return self.chain.split

    @property
    def system(self):
        return self.chain.system

    @property
    def degrees(self):
        return self.chain.degrees

    @property
    def n_bar(self):
        return self.chain.n_bar

    @property
    def symbols(self):
        sys = self.system
        return sys.state_symbols + sys.input_symbols + tuple(self.split.delta_symbols)

    def rows(self):
        """``(chain index, expression)`` pairs in chain order."""
        out = []
        for off, block in zip(chain_offsets(self.degrees), self.entries):
            for j, e in enumerate(block, start=1):
                out.append((int(off) + j, e))
        return out

    def row_exprs(self):
        """Length-``n_bar`` list; integrator rows hold zero."""
        exprs = [ex.ZERO] * self.n_bar
        for k, e in self.rows():
            exprs[k] = e
        return exprs

    def nonzero_rows(self):
        return tuple(k for k, e in self.rows() if not ex.is_zero(e))

    def input_rows(self):
        """Rows whose mismatch depends on an input."""
        inputs = set(self.system.input_symbols)
        return tuple(k for k, e in self.rows()
                     if inputs & set(ex.free_symbols(e, kind="input")))

    def chain_tops(self):
        return tuple(int(o) + r for o, r in zip(chain_offsets(self.degrees), self.degrees))

    @cached_property
    def _compiled(self):
        return ex.compile_exprs(self.row_exprs(), self.symbols)

    def values(self, X, U, DP):
        """Row values at sample points; returns shape (N, n_bar)."""
        cols = np.hstack([np.atleast_2d(X), np.atleast_2d(U), np.atleast_2d(DP)]).T
        with np.errstate(all="ignore"):
            return self._compiled.vector(cols).T

    def condition_report(self, dp=None):
        """Mismatch row values at trim with the given deviations (upper bounds by default).

        Reported for inspection only; zero entries are not an error.
        """
        sys, split = self.system, self.split
        dp = split.delta_bounds if dp is None else np.asarray(dp, dtype=float)
        vals = self.values(sys.x_trim[None, :], sys.u_trim[None, :], dp[None, :])[0]
        return {k: float(vals[k]) for k, _ in self.rows()}


def build_uncertainty_stack(chain, max_nodes=MAX_NODES):
    """Symbolic mismatch rows for every chain coordinate.

    Raises
    ------
    ExpressionBlowupError
        An entry exceeds ``max_nodes`` distinct nodes.
    """
    split = chain.split
    sys = split.system
    states, inputs = sys.state_symbols, sys.input_symbols
    dfields = [[row[k] for row in split.dfields] for k in range(sys.m)]
    entries = []
    for i, derivs in enumerate(chain.derivatives):
        block = []
        for j in range(1, chain.degrees[i] + 1):
            h = derivs[j - 1]
            e = lie_derivative(h, split.ddrift, states)
            for k in range(sys.m):
                e = ex.add(e, ex.mul(lie_derivative(h, dfields[k], states), inputs[k]))
            e = ex.simplify(e)
            size = ex.count_nodes(e)
            if size > max_nodes:
                raise ExpressionBlowupError(
                    f"uncertainty entry for output {sys.output_names[i]}, level {j} has "
                    f"{size} nodes (limit {max_nodes}); introduce intermediate "
                    "definitions or reduce the number of uncertain parameters")
            block.append(e)
        entries.append(tuple(block))
    return UncertaintyStack(chain, tuple(entries))


# ---------------------------------------------------------------------------
# Gradients in chain coordinates
# ---------------------------------------------------------------------------

class ChiTransform:
    """Mismatch rows and their gradients as functions of ``(chi, v, dp)``.

    The state is recovered from the non-integral chain coordinates by
    Newton's method, the input from the feedback law, and gradients follow
    from the chain rule

        dw/dx_total = dw/dx + dw/du du/dx,   du/dx = -g*^-1 [(dg*/dx) u + df*/dx]
        dw/dchi     = dw/dx_total (dT/dx)^-1,  dw/dv = dw/du g*^-1

    Integrator coordinates have zero gradient.
    """

    def __init__(self, stack, diffeo, law):
        self.stack, self.diffeo, self.law = stack, diffeo, law
        sys = stack.system
        self.n, self.m, self.n_bar = sys.n, sys.m, stack.n_bar
        self.channels = stack.nonzero_rows()
        exprs = [stack.row_exprs()[k] for k in self.channels]
        flat = []
        for e in exprs:
            flat.extend(ex.gradient(e, sys.state_symbols + sys.input_symbols))
        self._w = ex.compile_exprs(exprs, stack.symbols)
        self._dw = ex.compile_exprs(flat, stack.symbols)
        self.state_index = np.array(diffeo.state_index, dtype=int)
        self.n_delta = len(stack.split.delta_symbols)

    def states(self, chi, x_guess=None):
        """States for rows of ``chi`` (full chain coordinates); returns ``(X, ok)``."""
        chi = np.atleast_2d(chi)
        return self.diffeo.batch_inverse(chi[:, self.state_index], x_guess=x_guess)

    def evaluate(self, chi, v, dp, with_gradient=True, x_guess=None):
        """Channel values and gradients at sample points.

        Returns
        -------
        w : ndarray (N, n_channels)
        grad : ndarray (N, n_channels, n_bar + m) or None
        ok : ndarray (N,) bool
            False where the chain coordinates could not be inverted or the
            law is singular.
        X : ndarray (N, n)
        """
        chi, v, dp = np.atleast_2d(chi), np.atleast_2d(v), np.atleast_2d(dp)
        N, c = chi.shape[0], len(self.channels)
        X, ok = self.states(chi, x_guess)
        w = np.zeros((N, c))
        grad = np.zeros((N, c, self.n_bar + self.m)) if with_gradient else None
        if c == 0:
            return w, grad, ok, X
        with np.errstate(all="ignore"):
            f, G = self.law.batch_terms(X)
            condG = np.full(N, np.inf)
            good = np.all(np.isfinite(G), axis=(1, 2))
            condG[good] = np.linalg.cond(G[good])
            ok &= condG < SINGULAR_COND
            idx = np.flatnonzero(ok)
            if idx.size == 0:
                return w, grad, ok, X
            Xo, Go = X[idx], G[idx]
            U = np.linalg.solve(Go, (v[idx] - f[idx])[..., None])[..., 0]
            cols = np.hstack([Xo, U, dp[idx]]).T
            w[idx] = self._w.vector(cols).T
            if not with_gradient:
                return w, grad, ok, X
            n, m = self.n, self.m
            dw = self._dw.vector(cols).T.reshape(idx.size, c, n + m)
            dwdx, dwdu = dw[..., :n], dw[..., n:]
            beta = np.linalg.inv(Go)
            dF, dG = self.law.batch_jacobians(Xo)
            dudx = -np.einsum("nab,nbj->naj", beta, np.einsum("nbkj,nk->nbj", dG, U) + dF)
            dtot = dwdx + np.einsum("nca,naj->ncj", dwdu, dudx)
            J = self.diffeo.batch_jacobian(Xo)
            # dw/dchi J = dtot  =>  J^T (dw/dchi)^T = dtot^T
            gchi = np.linalg.solve(np.transpose(J, (0, 2, 1)),
                                   np.transpose(dtot, (0, 2, 1)))
            gchi = np.transpose(gchi, (0, 2, 1))
            gv = np.einsum("nca,nab->ncb", dwdu, beta)
            full = np.zeros((idx.size, c, self.n_bar + self.m))
            full[..., self.state_index] = gchi
            full[..., self.n_bar:] = gv
            grad[idx] = full
        return w, grad, ok, X


def transform_to_chi(stack, diffeo, law):
    return ChiTransform(stack, diffeo, law)


# ---------------------------------------------------------------------------
# Gradient bounds
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ChannelBound:
    channel: int            # 0-based chain index
    rho: float              # after safety factor
    rho_raw: float          # before safety factor
    rho_grid: float         # best coarse-sample value
    argmax: tuple           # (chi..., v..., dp...)
    samples: int


@dataclass
class BoundResult:
    bounds: list
    n_bar: int
    m: int
    norm: str
    safety: float
    scheme: str
    samples: int
    skipped: int
    anchor_max: float
    delta_names: tuple = ()
    warnings: list = field(default_factory=list)

    @property
    def rho(self):
        out = np.zeros(self.n_bar)
        for b in self.bounds:
            out[b.channel] = b.rho
        return out

    @property
    def rho_raw(self):
        out = np.zeros(self.n_bar)
        for b in self.bounds:
            out[b.channel] = b.rho_raw
        return out

    def to_dict(self):
        return {
            "n_bar": self.n_bar, "m": self.m, "norm": self.norm, "safety": self.safety,
            "scheme": self.scheme, "samples": self.samples, "skipped": self.skipped,
            "anchor_max": self.anchor_max, "delta_names": list(self.delta_names),
            "warnings": list(self.warnings),
            "channels": [{"k": b.channel + 1, "rho": b.rho, "rho_raw": b.rho_raw,
                          "rho_grid": b.rho_grid, "argmax": list(b.argmax),
                          "samples": b.samples} for b in self.bounds],
        }

    @classmethod
    def from_dict(cls, d):
        bounds = [ChannelBound(c["k"] - 1, c["rho"], c["rho_raw"], c["rho_grid"],
                               tuple(c["argmax"]), c["samples"]) for c in d["channels"]]
        return cls(bounds, d["n_bar"], d["m"], d["norm"], d["safety"], d["scheme"],
                   d["samples"], d["skipped"], d["anchor_max"], tuple(d["delta_names"]),
                   list(d["warnings"]))


def _norm(grad, kind):
    if kind == "inf":
        return np.max(np.abs(grad), axis=-1)
    if kind == "2":
        return np.linalg.norm(grad, axis=-1)
    raise ValueError(f"unknown gradient norm {kind!r}")


class _Sampler:
    """Maps reduced coordinates (non-integral chi, v, dp) to full samples."""

    def __init__(self, transform, box, delta_bounds):
        self.t = transform
        self.box = box
        si = transform.state_index
        self.lower = np.concatenate([box.chi_lower[si], box.v_lower, -delta_bounds])
        self.upper = np.concatenate([box.chi_upper[si], box.v_upper, delta_bounds])
        self.n_chi = si.size
        self.m = box.n_v

    @property
    def dim(self):
        return self.lower.size

    def split(self, Z):
        Z = np.atleast_2d(Z)
        chi = np.zeros((Z.shape[0], self.t.n_bar))
        chi[:, self.t.state_index] = Z[:, :self.n_chi]
        v = Z[:, self.n_chi:self.n_chi + self.m]
        dp = Z[:, self.n_chi + self.m:]
        return chi, v, dp

    def full_point(self, z):
        chi, v, dp = self.split(z)
        return tuple(float(a) for a in np.concatenate([chi[0], v[0], dp[0]]))


def _anchor_check(transform, split, n_chi, m, mode, seed):
    """Largest ``|w|`` at ``chi = 0, v = 0`` over corners and random points of Theta."""
    hw = split.delta_bounds
    if hw.size == 0 or not transform.channels:
        return 0.0
    if hw.size <= 10:
        P = corner_points(-hw, hw)
    else:
        P = np.zeros((1, hw.size))
    P = np.vstack([P, uniform_points(-hw, hw, 64, seed)])
    chi = np.zeros((P.shape[0], n_chi))
    v = np.zeros((P.shape[0], m))
    w, _, ok, _ = transform.evaluate(chi, v, P, with_gradient=False)
    worst = float(np.max(np.abs(w[ok]))) if ok.any() else 0.0
    if worst > 1e-6:
        msg = (f"uncertainty does not vanish at the origin of the chain coordinates "
               f"(max |w| = {worst:.3e} over the parameter set); the gradient bound "
               "then covers increments from the origin only")
        if mode == "error":
            raise AnchorViolation(msg)
        log.warning(msg)
    return worst


def bound_rho(transform, box, config=None, seed=0):
    """Bound the gradient norm of every mismatch channel over ``box x Theta``.

    Parameters
    ----------
    transform : ChiTransform
    box : OperatingBox
    config : dict, optional
        Keys as in the ``solver.bound`` section of a model file:
        ``grid_points``, ``max_grid``, ``lhs_samples``, ``polish_starts``,
        ``polish_maxiter``, ``safety``, ``norm`` (``"inf"`` or ``"2"``),
        ``anchor`` (``"error"`` or ``"warn"``), ``max_skip_fraction``.
    seed : int

    Returns
    -------
    BoundResult
    """
    from .modelfile import DEFAULT_SOLVER
    cfg = dict(DEFAULT_SOLVER["bound"])
    cfg.update(config or {})
    split = transform.stack.split
    sampler = _Sampler(transform, box, split.delta_bounds)
    anchor = _anchor_check(transform, split, transform.n_bar, transform.m,
                           cfg["anchor"], seed)
    warnings = []
    if anchor > 1e-6:
        warnings.append(f"anchor |w| = {anchor:.6e}")

    k = int(cfg["grid_points"])
    if k ** sampler.dim <= int(cfg["max_grid"]):
        Z = grid_points(sampler.lower, sampler.upper, k)
        scheme = f"grid({k})"
    else:
        Z = lhs_points(sampler.lower, sampler.upper, int(cfg["lhs_samples"]), seed)
        Z = np.vstack([np.zeros((1, sampler.dim)), Z])
        scheme = f"lhs({int(cfg['lhs_samples'])})"
        # gradient norms of mismatches affine in the parameters often peak at
        # vertices, which random designs almost never hit in high dimension
        if 2 ** sampler.dim <= int(cfg["max_grid"]):
            Z = np.vstack([Z, grid_points(sampler.lower, sampler.upper, 2)])
            scheme += "+vertices"
    n_ch = len(transform.channels)
    if n_ch == 0:
        return BoundResult([], transform.n_bar, transform.m, cfg["norm"], float(cfg["safety"]),
                           scheme, 0, 0, anchor, _delta_names(split), warnings)

    chi, v, dp = sampler.split(Z)
    _, grad, ok, _ = transform.evaluate(chi, v, dp)
    skipped = int(np.count_nonzero(~ok))
    if skipped > cfg["max_skip_fraction"] * Z.shape[0]:
        raise BoundError(f"{skipped} of {Z.shape[0]} samples could not be mapped back to "
                         "states (singular coordinates or law); shrink the operating box")
    norms = _norm(grad, cfg["norm"])
    bad = ok & ~np.all(np.isfinite(norms), axis=1)
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise BoundError("non-finite gradient inside the operating box at "
                         f"{list(sampler.full_point(Z[i]))}")
    norms[~ok] = -np.inf

    bounds = []
    for c, ch in enumerate(transform.channels):
        col = norms[:, c]
        order = np.argsort(-col, kind="stable")
        best = int(order[0])
        grid_max = float(max(col[best], 0.0))
        best_val, best_z = grid_max, Z[best]
        for s in order[:int(cfg["polish_starts"])]:
            if not np.isfinite(col[s]):
                break
            zval, z = _polish(transform, sampler, c, Z[s], cfg)
            if zval > best_val:
                best_val, best_z = zval, z
        raw = float(max(best_val, 0.0))
        bounds.append(ChannelBound(int(ch), float(cfg["safety"]) * raw, raw,
                                   max(grid_max, 0.0),
                                   sampler.full_point(best_z), int(Z.shape[0])))
    return BoundResult(bounds, transform.n_bar, transform.m, cfg["norm"], float(cfg["safety"]),
                       scheme, int(Z.shape[0]), skipped, anchor, _delta_names(split), warnings)


def _delta_names(split):
    return tuple(s.name for s in split.delta_symbols)


def _polish(transform, sampler, c, z0, cfg):
    """Nelder-Mead ascent of one channel's gradient norm inside the box."""
    lo, hi = sampler.lower, sampler.upper
    width = hi - lo
    free = width > 0
    if not free.any():
        return -np.inf, z0

    warm = [None]

    def value(zf):
        z = z0.copy()
        z[free] = np.clip(zf, lo[free], hi[free])
        chi, v, dp = sampler.split(z)
        _, g, ok, X = transform.evaluate(chi, v, dp, x_guess=warm[0])
        if not ok[0]:
            return np.inf
        warm[0] = X[0]
        val = _norm(g[0, c], cfg["norm"])
        return -val if np.isfinite(val) else np.inf

    x0 = z0[free]
    d = x0.size
    simplex = np.tile(x0, (d + 1, 1))
    for i in range(d):
        step = 0.1 * width[free][i]
        simplex[i + 1, i] = x0[i] + step if x0[i] + step <= hi[free][i] else x0[i] - step
    res = minimize(value, x0, method="Nelder-Mead", bounds=list(zip(lo[free], hi[free])),
                   options={"initial_simplex": simplex, "maxiter": int(cfg["polish_maxiter"]),
                            "xatol": 1e-9, "fatol": 1e-12})
    z = z0.copy()
    z[free] = np.clip(res.x, lo[free], hi[free])
    val = -value(z[free])
    return (val if np.isfinite(val) else -np.inf), z


def grid_oracle(transform, box, points=10**4, norm="inf"):
    """Plain dense-grid maximum of each channel's gradient norm (no polish, no safety)."""
    split = transform.stack.split
    sampler = _Sampler(transform, box, split.delta_bounds)
    k = max(2, int(np.floor(points ** (1.0 / max(sampler.dim, 1)) + 1e-9)))
    Z = grid_points(sampler.lower, sampler.upper, k)
    chi, v, dp = sampler.split(Z)
    _, grad, ok, _ = transform.evaluate(chi, v, dp)
    norms = _norm(grad[ok], norm)
    out = np.zeros(transform.n_bar)
    for c, ch in enumerate(transform.channels):
        out[ch] = float(np.max(norms[:, c])) if norms.size else 0.0
    return out


def coverage_check(transform, box, rho, n=10**4, seed=12345, norm="inf"):
    """Count samples violating ``|w_k| <= rho_k * ||[chi; v]||``.

    Samples are drawn uniformly from the full box (integrator coordinates
    included) and the parameter set, independently of the bounding grid.
    The vector norm is the dual of ``norm`` (1-norm for ``"inf"``).

    Returns
    -------
    violations : ndarray (n_bar,) int
    worst_ratio : ndarray (n_bar,)
        Largest ``|w_k| / ||[chi; v]||`` seen per channel.
    """
    split = transform.stack.split
    hw = split.delta_bounds
    lo = np.concatenate([box.lower, -hw])
    hi = np.concatenate([box.upper, hw])
    Z = uniform_points(lo, hi, n, seed)
    nb = transform.n_bar
    chi, v, dp = Z[:, :nb], Z[:, nb:nb + transform.m], Z[:, nb + transform.m:]
    w, _, ok, _ = transform.evaluate(chi, v, dp, with_gradient=False)
    cv = np.hstack([chi, v])[ok]
    size = np.sum(np.abs(cv), axis=1) if norm == "inf" else np.linalg.norm(cv, axis=1)
    rho = np.asarray(rho, dtype=float)
    violations = np.zeros(nb, dtype=int)
    worst = np.zeros(nb)
    for c, ch in enumerate(transform.channels):
        a = np.abs(w[ok, c])
        violations[ch] = int(np.count_nonzero(a > rho[ch] * size * (1 + 1e-12) + 1e-14))
        with np.errstate(divide="ignore", invalid="ignore"):
            r = np.where(size > 0, a / size, 0.0)
        worst[ch] = float(np.max(r)) if r.size else 0.0
    return violations, worst


def bound_report(result):
    """Fixed-format text table of the channel bounds."""
    names = list(result.delta_names)
    lines = [
        "# gradient bounds per uncertainty channel",
        f"# norm={result.norm} safety={result.safety!r} scheme={result.scheme} "
        f"samples={result.samples} skipped={result.skipped}",
        f"# anchor_max={result.anchor_max!r}",
        f"# argmax coordinates: chi1..chi{result.n_bar}, v1..v{result.m}"
        + (", " + ", ".join("d_" + n for n in names) if names else ""),
        f"{'k':>3}  {'rho':>24}  {'rho_raw':>24}  {'samples':>8}  argmax",
    ]
    by_k = {b.channel: b for b in result.bounds}
    for k in range(result.n_bar):
        b = by_k.get(k)
        if b is None:
            lines.append(f"{k + 1:>3}  {0.0!r:>24}  {0.0!r:>24}  {0:>8}  -")
        else:
            arg = " ".join(repr(float(a)) for a in b.argmax)
            lines.append(f"{k + 1:>3}  {b.rho!r:>24}  {b.rho_raw!r:>24}  {b.samples:>8}  {arg}")
    for w in result.warnings:
        lines.append(f"# warning: {w}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Structured model
# ---------------------------------------------------------------------------

@dataclass
class LinearizedUncertainModel:
    """Brunovsky pair with one structured uncertainty channel per chain row.

    Channel ``k`` enters as ``C_k zeta_k`` with ``zeta_k = Delta_k z_k``,
    ``z_k = K_k chi + G_k v`` and ``|Delta_k| <= 1``. ``C`` holds the
    columns ``C_k``, ``K`` the rows ``K_k`` and ``G`` the rows ``G_k``.
    """

    A: np.ndarray
    B: np.ndarray
    degrees: tuple
    rho: np.ndarray
    C: np.ndarray
    K: np.ndarray
    G: np.ndarray
    convention: str = "dense"

    @classmethod
    def exact(cls, A, B):
        """Model of a known linear system ``(A, B)`` with no uncertainty channels."""
        A, B = np.atleast_2d(np.asarray(A, dtype=float)), np.asarray(B, dtype=float)
        B = B.reshape(A.shape[0], -1)
        n, m = B.shape
        return cls(A, B, (), np.zeros(n), np.zeros((n, n)), np.zeros((n, n)),
                   np.zeros((n, m)))

    @property
    def n_bar(self):
        return self.A.shape[0]

    @property
    def m(self):
        return self.B.shape[1]

    @property
    def active(self):
        """0-based indices of channels with a nonzero bound."""
        return tuple(int(k) for k in np.flatnonzero(self.rho > 0))

    def channel(self, k):
        return self.C[:, k:k + 1], self.K[k:k + 1, :], self.G[k:k + 1, :]

    def perturbed(self, delta):
        """``(A + sum C_k d_k K_k, B + sum C_k d_k G_k)`` for a static realization."""
        delta = np.asarray(delta, dtype=float)
        D = np.diag(delta)
        return self.A + self.C @ D @ self.K, self.B + self.C @ D @ self.G

    def to_dict(self):
        return {"A": self.A.tolist(), "B": self.B.tolist(), "degrees": list(self.degrees),
                "rho": self.rho.tolist(), "C": self.C.tolist(), "K": self.K.tolist(),
                "G": self.G.tolist(), "convention": self.convention}

    @classmethod
    def from_dict(cls, d):
        arr = lambda key: np.array(d[key], dtype=float)  # noqa: E731
        return cls(arr("A"), arr("B"), tuple(d["degrees"]), arr("rho"), arr("C"),
                   arr("K"), arr("G"), d.get("convention", "dense"))


def assemble_structured_model(degrees, rho, convention="dense", input_channels=None):
    """Structured uncertain model from chain degrees and channel bounds.

    ``C_k`` is the unit vector ``e_k`` for channels with ``rho_k > 0`` and
    zero otherwise. ``K_k`` has every entry equal to ``rho_k`` (``"dense"``)
    or only entry ``k`` (``"sparse"``). ``G_k`` is ``rho_k`` in every
    column for channels at a chain top (the last coordinate of each block,
    integrator included) and zero elsewhere. ``input_channels`` restricts
    ``G`` further to the chain tops whose mismatch actually depends on the
    input (``UncertaintyStack.input_rows``); by default every chain top
    counts.
    """
    A, B = brunovsky(degrees)
    n_bar, m = B.shape
    rho = np.asarray(rho, dtype=float).copy()
    if rho.shape != (n_bar,):
        raise ValueError(f"expected {n_bar} bounds, got shape {rho.shape}")
    if np.any(rho < 0):
        raise ValueError("bounds must be nonnegative")
    if convention not in ("dense", "sparse"):
        raise ValueError(f"unknown convention {convention!r}")
    C = np.zeros((n_bar, n_bar))
    K = np.zeros((n_bar, n_bar))
    G = np.zeros((n_bar, m))
    tops = {int(o) + r for o, r in zip(chain_offsets(degrees), degrees)}
    if input_channels is not None:
        tops &= {int(k) for k in input_channels}
    for k in range(n_bar):
        if rho[k] == 0:
            continue
        C[k, k] = 1.0
        if convention == "dense":
            K[k, :] = rho[k]
        else:
            K[k, k] = rho[k]
        if k in tops:
            G[k, :] = rho[k]
    return LinearizedUncertainModel(A, B, tuple(degrees), rho, C, K, G, convention)
