"""YAML model files.

A model file declares the plant, its uncertain parameters, the operating
box, design weights, reference schedules and solver settings. See
``src/robustfl/models/pendulum.yaml`` for an annotated example.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import expr as ex
from .model import ModelError, OperatingBox, ParameterSpec, UncertainSystem

__all__ = ["FORMAT_VERSION", "ModelFileError", "ModelFile", "load_model",
           "loads_model", "shipped_model", "DEFAULT_SOLVER"]

FORMAT_VERSION = 1
MODELS_DIR = Path(__file__).parent / "models"

DEFAULT_SOLVER = {
    "seed": 0,
    "trim_tol": 1e-6,
    "relative_degree_tol": 1e-9,
    "bound": {
        "grid_points": 5,
        "max_grid": 100000,
        "lhs_samples": 20000,
        "polish_starts": 10,
        "polish_maxiter": 400,
        "safety": 1.1,
        "norm": "inf",
        "anchor": "error",
        "max_skip_fraction": 0.05,
    },
}

DEFAULT_SYNTHESIS = {
    "tau_init": 1.0,
    "D_scale": 1e-2,
    "chi0": "unit-average",
    "optimize_tau": True,
    "k_convention": "dense",
}


class ModelFileError(ModelError):
    """Invalid model file; the message names the offending location."""


@dataclass
class ModelFile:
    system: UncertainSystem
    box: OperatingBox | None
    Q: np.ndarray | None
    R: np.ndarray | None
    references: dict
    simulation: dict
    synthesis: dict
    solver: dict
    definitions: dict = field(default_factory=dict)
    path: Path | None = None
    description: str = ""

    @property
    def name(self):
        return self.system.name

    def reference_schedule(self):
        """Per-output list of ``(t_switch, value)`` steps, sorted by time."""
        sys = self.system
        x0 = {s: v for s, v in zip(sys.state_symbols, sys.x_trim)}
        out = []
        for name, nu in zip(sys.output_names, sys.outputs):
            steps = self.references.get(name)
            if steps is None:
                steps = [[0.0, ex.evaluate(nu, x0)]]
            out.append(sorted((float(t), float(v)) for t, v in steps))
        return out


def _err(where, message):
    return ModelFileError(f"{where}: {message}")


def _named_list(section, data, value_key):
    if data is None:
        raise _err(section, "section missing")
    out = []
    for i, item in enumerate(data):
        if isinstance(item, dict):
            name, value = item.get("name"), item.get(value_key, 0.0)
        elif isinstance(item, (list, tuple)) and len(item) == 2:
            name, value = item
        else:
            raise _err(f"{section}[{i}]", "expected {name: ..., %s: ...}" % value_key)
        if not isinstance(name, str) or not name.isidentifier():
            raise _err(f"{section}[{i}]", f"invalid name {name!r}")
        out.append((name, float(value)))
    return out


def _parameters(data):
    if data is None:
        return []
    out = []
    for i, item in enumerate(data):
        where = f"parameters[{i}]"
        if not isinstance(item, dict) or "name" not in item:
            raise _err(where, "expected a mapping with 'name'")
        name = item["name"]
        nominal = item.get("nominal")
        if nominal is None:
            raise ModelFileError(f"parameter value missing: {name}")
        nominal = float(nominal)
        if "rel_bound" in item:
            half = abs(nominal) * float(item["rel_bound"])
        else:
            half = float(item.get("bound", 0.0))
        try:
            out.append(ParameterSpec(name, nominal, half))
        except ModelError as err:
            raise _err(where, str(err)) from None
    return out


def _parse(text, symbols, where):
    try:
        return ex.parse(str(text), symbols=symbols)
    except ex.ExprSyntaxError as err:
        raise _err(where, str(err)) from None


def _matrix(data, size, where):
    if data is None:
        return None
    arr = np.array(data, dtype=float)
    if arr.ndim == 1:
        arr = np.diag(arr)
    if arr.shape != (size, size):
        raise _err(where, f"expected {size} diagonal entries or a {size}x{size} matrix")
    if not np.allclose(arr, arr.T):
        raise _err(where, "matrix must be symmetric")
    return arr


def _intervals(data, size, where):
    arr = np.array(data, dtype=float)
    if arr.ndim == 1:
        arr = np.stack([-np.abs(arr), np.abs(arr)], axis=1)
    if arr.shape != (size, 2):
        raise _err(where, f"expected {size} intervals [lower, upper] or half-widths")
    return arr


def _merge(default, given):
    out = copy.deepcopy(default)
    for k, v in (given or {}).items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def loads_model(text, path=None):
    """Parse model-file text."""
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as err:
        raise ModelFileError(f"invalid YAML: {err}") from None
    if not isinstance(doc, dict):
        raise ModelFileError("model file must be a mapping")
    version = doc.get("format_version", FORMAT_VERSION)
    if version != FORMAT_VERSION:
        raise ModelFileError(f"unsupported format_version {version}")

    states = _named_list("states", doc.get("states"), "trim")
    inputs = _named_list("inputs", doc.get("inputs"), "trim")
    params = _parameters(doc.get("parameters"))
    names = [n for n, _ in states] + [n for n, _ in inputs] + [p.name for p in params]
    dup = {n for n in names if names.count(n) > 1}
    if dup:
        raise ModelFileError(f"duplicate declarations: {sorted(dup)}")

    symbols = {n: "state" for n, _ in states}
    symbols.update({n: "input" for n, _ in inputs})
    symbols.update({p.name: "parameter" for p in params})

    definitions = {}
    for name, text_ in (doc.get("definitions") or {}).items():
        if name in symbols:
            raise _err(f"definitions.{name}", "name already declared")
        e = _parse(text_, symbols, f"definitions.{name}")
        definitions[name] = e
        symbols[name] = e

    dyn = doc.get("dynamics")
    if not isinstance(dyn, dict):
        raise ModelFileError("dynamics: section missing")
    missing = [n for n, _ in states if n not in dyn]
    extra = [k for k in dyn if k not in dict(states)]
    if missing or extra:
        raise ModelFileError(f"dynamics: expected one row per state; missing {missing}, "
                             f"unknown {extra}")
    dynamics = [_parse(dyn[n], symbols, f"dynamics.{n}") for n, _ in states]

    outs = doc.get("outputs")
    if not isinstance(outs, dict) or not outs:
        raise ModelFileError("outputs: section missing")
    output_names = tuple(outs)
    outputs = [_parse(outs[k], symbols, f"outputs.{k}") for k in output_names]
    if len(outputs) != len(inputs):
        raise ModelFileError(f"system not square: {len(outputs)} outputs, "
                             f"{len(inputs)} inputs")

    solver = _merge(DEFAULT_SOLVER, doc.get("solver"))
    try:
        system = UncertainSystem.from_dynamics(
            [n for n, _ in states], [n for n, _ in inputs], params, dynamics, outputs,
            [v for _, v in states], [v for _, v in inputs],
            output_names=output_names, name=str(doc.get("name", "plant")),
            trim_tol=float(solver["trim_tol"]))
    except ModelFileError:
        raise
    except ModelError as err:
        raise ModelFileError(str(err)) from None

    n_bar = len(states) + len(inputs)
    box = None
    if doc.get("box") is not None:
        b = doc["box"]
        chi = _intervals(b.get("chi"), n_bar, "box.chi")
        v = _intervals(b.get("v"), len(inputs), "box.v")
        try:
            box = OperatingBox(chi[:, 0], chi[:, 1], v[:, 0], v[:, 1])
        except ModelError as err:
            raise _err("box", str(err)) from None

    weights = doc.get("weights") or {}
    Q = _matrix(weights.get("Q"), n_bar, "weights.Q")
    R = _matrix(weights.get("R"), len(inputs), "weights.R")
    if R is not None and np.min(np.linalg.eigvalsh(R)) <= 0:
        raise ModelFileError("weights.R: must be positive definite")
    if Q is not None and np.min(np.linalg.eigvalsh(Q)) < -1e-12:
        raise ModelFileError("weights.Q: must be positive semidefinite")

    refs = doc.get("references") or {}
    for k in refs:
        if k not in output_names:
            raise _err(f"references.{k}", "not a declared output")

    return ModelFile(system=system, box=box, Q=Q, R=R, references=refs,
                     simulation=dict(doc.get("simulation") or {}),
                     synthesis=_merge(DEFAULT_SYNTHESIS, doc.get("synthesis")),
                     solver=solver, definitions=definitions,
                     path=None if path is None else Path(path),
                     description=str(doc.get("description", "")))


def load_model(path):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as err:
        raise ModelFileError(f"cannot read model file: {err}") from None
    return loads_model(text, path)


def shipped_model(name):
    """Path of a model file shipped with the package (``pendulum``, ``ahfv``, ...)."""
    path = MODELS_DIR / f"{name}.yaml"
    if not path.exists():
        raise FileNotFoundError(path)
    return path
