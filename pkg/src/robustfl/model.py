"""Uncertain input-affine plants, parameter boxes and operating boxes."""

from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.stats import qmc

from . import expr as ex

__all__ = [
    "ModelError", "TrimWarning", "ParameterSpec", "OperatingBox",
    "UncertainSystem", "NominalSplit", "split_nominal_uncertain",
    "BoxSamples", "sample_box", "grid_points", "corner_points",
    "uniform_points", "lhs_points", "DELTA_PREFIX",
]

DELTA_PREFIX = "delta_"
MAX_CORNER_DIM = 20


class ModelError(ValueError):
    """The plant description violates a structural requirement."""


class TrimWarning(UserWarning):
    """The declared trim point is not an equilibrium to tolerance."""


@dataclass(frozen=True)
class ParameterSpec:
    """Uncertain parameter ``nominal +/- half_width``.

    Parameters with zero half-width are treated as known constants.
    """

    name: str
    nominal: float
    half_width: float = 0.0

    def __post_init__(self):
        if not np.isfinite(self.nominal):
            raise ModelError(f"parameter value missing: {self.name}")
        if not self.half_width >= 0:
            raise ModelError(f"parameter {self.name}: bound must be >= 0")

    @property
    def lower(self):
        return self.nominal - self.half_width

    @property
    def upper(self):
        return self.nominal + self.half_width

    @property
    def uncertain(self):
        return self.half_width > 0

    @property
    def symbol(self):
        return ex.symbol(self.name, "parameter")

    @property
    def delta_symbol(self):
        return ex.symbol(DELTA_PREFIX + self.name, "parameter")

    def contains(self, value, tol=0.0):
        return abs(value - self.nominal) <= self.half_width + tol


@dataclass(frozen=True)
class OperatingBox:
    """Hyper-rectangle over the chain coordinates and the new inputs."""

    chi_lower: np.ndarray
    chi_upper: np.ndarray
    v_lower: np.ndarray
    v_upper: np.ndarray

    def __post_init__(self):
        for name in ("chi_lower", "chi_upper", "v_lower", "v_upper"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        if self.chi_lower.shape != self.chi_upper.shape or \
                self.v_lower.shape != self.v_upper.shape:
            raise ModelError("box bounds have inconsistent shapes")
        if np.any(self.lower > self.upper):
            raise ModelError("box lower bound exceeds upper bound")
        if np.any(self.lower > 0) or np.any(self.upper < 0):
            raise ModelError("operating box must contain the origin")

    @classmethod
    def symmetric(cls, chi_half, v_half):
        chi_half = np.asarray(chi_half, dtype=float)
        v_half = np.asarray(v_half, dtype=float)
        return cls(-chi_half, chi_half, -v_half, v_half)

    @property
    def n_chi(self):
        return self.chi_lower.size

    @property
    def n_v(self):
        return self.v_lower.size

    @property
    def lower(self):
        return np.concatenate([self.chi_lower, self.v_lower])

    @property
    def upper(self):
        return np.concatenate([self.chi_upper, self.v_upper])

    def contains(self, chi, v, tol=1e-12):
        z = np.concatenate([np.atleast_1d(chi), np.atleast_1d(v)])
        return bool(np.all(z >= self.lower - tol) and np.all(z <= self.upper + tol))

    def scaled(self, factor):
        return OperatingBox(self.chi_lower * factor, self.chi_upper * factor,
                            self.v_lower * factor, self.v_upper * factor)


@dataclass(frozen=True)
class UncertainSystem:
    """Square input-affine plant ``x' = f(x, p) + sum_k g_k(x, p) u_k``.

    Attributes
    ----------
    states, inputs : tuple of str
    parameters : tuple of ParameterSpec
    drift : tuple of Expr
        ``f`` entries, functions of states and parameters.
    input_fields : tuple of tuple of Expr
        ``n x m`` matrix whose column ``k`` is ``g_k``.
    outputs : tuple of Expr
        Regulated outputs, functions of the states only.
    x_trim, u_trim : ndarray
    """

    states: tuple
    inputs: tuple
    parameters: tuple
    drift: tuple
    input_fields: tuple
    outputs: tuple
    x_trim: np.ndarray
    u_trim: np.ndarray
    output_names: tuple = ()
    name: str = "plant"
    trim_tol: float = 1e-6

    def __post_init__(self):
        object.__setattr__(self, "x_trim", np.asarray(self.x_trim, dtype=float))
        object.__setattr__(self, "u_trim", np.asarray(self.u_trim, dtype=float))
        if not self.output_names:
            object.__setattr__(self, "output_names",
                               tuple(f"y{i + 1}" for i in range(len(self.outputs))))
        self._validate()

    @classmethod
    def from_dynamics(cls, states, inputs, parameters, dynamics, outputs,
                      x_trim, u_trim, **kwargs):
        """Split full right-hand sides into drift and input fields.

        ``dynamics[s]`` may contain the inputs; it must be affine in them.
        """
        if len(dynamics) != len(states):
            raise ModelError(f"expected {len(states)} dynamics rows, got {len(dynamics)}")
        usyms = [ex.symbol(u, "input") for u in inputs]
        zero_u = {u: 0.0 for u in usyms}
        drift, fields = [], []
        for s, rhs in zip(states, dynamics):
            row = []
            for u in usyms:
                g = ex.diff(rhs, u)
                for u2 in usyms:
                    if not _vanishes(ex.diff(g, u2)):
                        raise ModelError(f"dynamics of '{s}' are not affine in '{u.name}'")
                row.append(ex.substitute(g, zero_u))
            drift.append(ex.substitute(rhs, zero_u))
            fields.append(tuple(row))
        return cls(tuple(states), tuple(inputs), tuple(parameters), tuple(drift),
                   tuple(fields), tuple(outputs), x_trim, u_trim, **kwargs)

    def _validate(self):
        n, m = len(self.states), len(self.inputs)
        if len(self.outputs) != m:
            raise ModelError(f"system not square: {len(self.outputs)} outputs, {m} inputs")
        if len(self.drift) != n or len(self.input_fields) != n or \
                any(len(row) != m for row in self.input_fields):
            raise ModelError("vector field dimensions do not match the state/input counts")
        if self.x_trim.shape != (n,) or self.u_trim.shape != (m,):
            raise ModelError("trim vectors do not match the state/input counts")
        names = [p.name for p in self.parameters]
        if len(set(names)) != len(names):
            raise ModelError("duplicate parameter names")
        for p in self.parameters:
            if DELTA_PREFIX + p.name in names:
                raise ModelError(f"parameter name '{DELTA_PREFIX + p.name}' is reserved")
        declared = set(self.state_symbols) | set(self.param_symbols)
        for e in itertools.chain(self.drift, *self.input_fields):
            for s in ex.free_symbols(e):
                if s not in declared:
                    raise ModelError(f"undeclared symbol '{s.name}' ({s.kind}) in vector field")
        for i, y in enumerate(self.outputs):
            for s in ex.free_symbols(y):
                if s.kind != "state" or s not in declared:
                    raise ModelError(
                        f"output {self.output_names[i]} depends on non-state symbol '{s.name}'")
        res = self.trim_residual()
        if res > self.trim_tol * (1.0 + np.max(np.abs(self.x_trim), initial=0.0)):
            warnings.warn(f"{self.name}: trim residual {res:.3g} exceeds tolerance; "
                          "the trim point is not an exact equilibrium", TrimWarning,
                          stacklevel=3)

    @property
    def n(self):
        return len(self.states)

    @property
    def m(self):
        return len(self.inputs)

    @property
    def state_symbols(self):
        return tuple(ex.symbol(s, "state") for s in self.states)

    @property
    def input_symbols(self):
        return tuple(ex.symbol(u, "input") for u in self.inputs)

    @property
    def param_symbols(self):
        return tuple(p.symbol for p in self.parameters)

    @property
    def p_nominal(self):
        return np.array([p.nominal for p in self.parameters])

    @property
    def uncertain_parameters(self):
        return tuple(p for p in self.parameters if p.uncertain)

    def parameter(self, name):
        for p in self.parameters:
            if p.name == name:
                return p
        raise KeyError(name)

    def rhs(self):
        """Full right-hand side expressions ``f + g u``."""
        u = self.input_symbols
        out = []
        for f, row in zip(self.drift, self.input_fields):
            e = f
            for g, uk in zip(row, u):
                e = ex.add(e, ex.mul(g, uk))
            out.append(e)
        return tuple(out)

    def compile_rhs(self):
        """Compiled ``x' = F(x, u, p)`` over (states, inputs, parameters)."""
        return ex.compile_exprs(self.rhs(),
                                self.state_symbols + self.input_symbols + self.param_symbols)

    def trim_residual(self, p=None):
        """Infinity norm of ``f(x0, p) + g(x0, p) u0`` (nominal ``p`` by default)."""
        p = self.p_nominal if p is None else np.asarray(p, dtype=float)
        vals = np.concatenate([self.x_trim, self.u_trim, p])
        xdot = np.array(self.compile_rhs().scalar(list(vals)), dtype=float)
        return float(np.max(np.abs(xdot), initial=0.0))

    def with_parameters(self, parameters):
        """Copy of the plant with a different parameter set."""
        return UncertainSystem(self.states, self.inputs, tuple(parameters), self.drift,
                               self.input_fields, self.outputs, self.x_trim, self.u_trim,
                               self.output_names, self.name, self.trim_tol)


def _vanishes(e, trials=6, seed=0):
    e = ex.simplify(e)
    if ex.is_zero(e):
        return True
    syms = ex.free_symbols(e)
    rng = np.random.default_rng(seed)
    f = ex.compile_exprs([e], syms)
    vals = f.vector(rng.uniform(-1.5, 1.5, size=(len(syms), trials)))
    return bool(np.all(np.abs(vals) < 1e-12))


@dataclass(frozen=True)
class NominalSplit:
    """Nominal fields (parameters fixed at nominal values) and uncertain parts.

    The uncertain parts are expressions in the states and the deviation
    symbols ``delta_<name>`` of the uncertain parameters.
    """

    system: UncertainSystem
    drift0: tuple
    fields0: tuple
    ddrift: tuple
    dfields: tuple
    delta_symbols: tuple
    delta_bounds: np.ndarray = field(repr=False)

    @property
    def has_uncertainty(self):
        return len(self.delta_symbols) > 0


def split_nominal_uncertain(system):
    """Nominal/uncertain decomposition of the plant vector fields.

    ``delta f = f(x, p0 + dp) - f(x, p0)``, formed by substitution. Known
    parameters (zero half-width) are replaced by their values throughout.
    """
    declared = set(system.param_symbols)
    for e in itertools.chain(system.drift, *system.input_fields):
        for s in ex.free_symbols(e, kind="parameter"):
            if s not in declared:
                raise ModelError(f"undeclared parameter '{s.name}' in vector field")
    nominal = {p.symbol: ex.const(p.nominal) for p in system.parameters}
    perturbed = {p.symbol: (ex.add(ex.const(p.nominal), p.delta_symbol) if p.uncertain
                            else ex.const(p.nominal))
                 for p in system.parameters}

    def split(e):
        e0 = ex.substitute(e, nominal)
        return e0, ex.simplify(ex.sub(ex.substitute(e, perturbed), e0))

    drift0, ddrift = zip(*(split(f) for f in system.drift)) if system.n else ((), ())
    fields0, dfields = [], []
    for row in system.input_fields:
        pairs = [split(g) for g in row]
        fields0.append(tuple(a for a, _ in pairs))
        dfields.append(tuple(b for _, b in pairs))
    unc = system.uncertain_parameters
    return NominalSplit(system, tuple(drift0), tuple(fields0), tuple(ddrift), tuple(dfields),
                        tuple(p.delta_symbol for p in unc),
                        np.array([p.half_width for p in unc], dtype=float))


# ---------------------------------------------------------------------------
# Sampling
# ---------------------------------------------------------------------------

def grid_points(lower, upper, k):
    """Full tensor grid with ``k`` points per axis (``k >= 1``)."""
    lower, upper = np.asarray(lower, float), np.asarray(upper, float)
    if k == 1:
        axes = [np.array([0.5 * (a + b)]) for a, b in zip(lower, upper)]
    else:
        axes = [np.linspace(a, b, k) for a, b in zip(lower, upper)]
    if not axes:
        return np.zeros((1, 0))
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def corner_points(lower, upper, center=True):
    lower, upper = np.asarray(lower, float), np.asarray(upper, float)
    d = lower.size
    if d > MAX_CORNER_DIM:
        raise ModelError(f"{d} dimensions is too many for exhaustive corners "
                         f"(limit {MAX_CORNER_DIM})")
    bits = np.array(list(itertools.product((0, 1), repeat=d)), dtype=float).reshape(-1, d)
    pts = lower + bits * (upper - lower)
    if center:
        pts = np.vstack([pts, 0.5 * (lower + upper)])
    return pts


def uniform_points(lower, upper, n, seed=0):
    rng = np.random.default_rng(seed)
    lower, upper = np.asarray(lower, float), np.asarray(upper, float)
    return lower + rng.random((n, lower.size)) * (upper - lower)


def lhs_points(lower, upper, n, seed=0):
    lower, upper = np.asarray(lower, float), np.asarray(upper, float)
    if lower.size == 0:
        return np.zeros((n, 0))
    unit = qmc.LatinHypercube(d=lower.size, seed=seed).random(n)
    return lower + unit * (upper - lower)


class BoxSamples(NamedTuple):
    chi: np.ndarray
    v: np.ndarray
    p: np.ndarray


def sample_box(box, parameters, scheme="grid", *, k=5, n=1000, seed=0):
    """Sample ``box x Theta``.

    Parameters
    ----------
    box : OperatingBox
    parameters : sequence of ParameterSpec
    scheme : {"grid", "uniform", "corners"}
        ``grid`` uses ``k`` points per axis, ``uniform`` draws ``n`` points
        with the given seed, ``corners`` returns all vertices plus the center.

    Returns
    -------
    BoxSamples
        Arrays of shape (N, n_chi), (N, n_v) and (N, n_params).
    """
    lo = np.concatenate([box.lower, [p.lower for p in parameters]])
    hi = np.concatenate([box.upper, [p.upper for p in parameters]])
    if scheme == "grid":
        pts = grid_points(lo, hi, k)
    elif scheme == "uniform":
        pts = uniform_points(lo, hi, n, seed)
    elif scheme == "corners":
        pts = corner_points(lo, hi)
    else:
        raise ValueError(f"unknown sampling scheme {scheme!r}")
    nc, nv = box.n_chi, box.n_v
    return BoxSamples(pts[:, :nc], pts[:, nc:nc + nv], pts[:, nc + nv:])
