"""Shared fixtures: random expressions and cached pipelines for the shipped models."""

import numpy as np
import pytest

from robustfl import expr as ex
from robustfl import pipeline as pl
from robustfl.modelfile import load_model, shipped_model

SYMS = tuple(ex.symbol(n) for n in ("x", "y", "z"))


def random_expr(rng, depth=4, syms=SYMS):
    """Random expression that is finite and smooth for arguments in [-2, 2].

    Partial functions are guarded (``ln(2 + sin e)``, ``sqrt(1 + e^2)``,
    ``e / (2 + cos e)``, ``exp(sin e)``) so every sample binding is valid.
    """
    if depth == 0 or rng.random() < 0.15:
        if rng.random() < 0.7:
            return syms[rng.integers(len(syms))]
        return ex.const(float(np.round(rng.uniform(-3, 3), 3)))
    kind = rng.integers(11)
    a = random_expr(rng, depth - 1, syms)
    if kind == 0:
        return a + random_expr(rng, depth - 1, syms)
    if kind == 1:
        return a - random_expr(rng, depth - 1, syms)
    if kind in (2, 3):
        return a * random_expr(rng, depth - 1, syms)
    if kind == 4:
        return a / (2.0 + ex.apply("cos", random_expr(rng, depth - 1, syms)))
    if kind == 5:
        return ex.apply("sin", a)
    if kind == 6:
        return ex.apply("cos", a)
    if kind == 7:
        return ex.apply("exp", ex.apply("sin", a))
    if kind == 8:
        return ex.apply("ln", 2.0 + ex.apply("sin", a))
    if kind == 9:
        return ex.apply("sqrt", 1.0 + a ** 2)
    return ex.power(ex.apply("sin", a), float(rng.integers(2, 4)))


def central_difference(e, binding, s, h=1e-3):
    """Fourth-order central difference of ``e`` along symbol ``s``."""
    def f(dx):
        b = dict(binding)
        b[s] = binding[s] + dx
        return ex.evaluate(e, b)
    return (8 * (f(h) - f(-h)) - (f(2 * h) - f(-2 * h))) / (12 * h)


class ModelRun:
    """Lazily computed pipeline stages for one shipped model."""

    def __init__(self, name):
        self.mf = load_model(shipped_model(name))
        self._lin = self._bounds = self._design = None

    @property
    def lin(self):
        if self._lin is None:
            self._lin = pl.linearize_model(self.mf)
        return self._lin

    @property
    def bounds(self):
        if self._bounds is None:
            self._bounds = pl.compute_bounds(self.mf, self.lin)
        return self._bounds

    @property
    def design(self):
        if self._design is None:
            self._design = pl.synthesize(self.mf, self.bounds[1])
        return self._design


_RUNS = {}


def model_run(name):
    if name not in _RUNS:
        _RUNS[name] = ModelRun(name)
    return _RUNS[name]


@pytest.fixture(scope="session")
def pendulum():
    return model_run("pendulum")


@pytest.fixture(scope="session")
def double_integrator():
    return model_run("double_integrator")


@pytest.fixture(scope="session")
def first_order():
    return model_run("first_order")


@pytest.fixture(scope="session")
def ahfv():
    return model_run("ahfv")


ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        status, title, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:>2}: {status}  {title}  [{detail}]")
