"""End-to-end design pipeline for a loaded model file.

Each stage returns plain Python objects plus a JSON-ready artifact dict;
the command-line driver persists the artifacts and reloads them so that
later stages can resume without recomputation.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

import numpy as np

from . import expr as ex
from .linearize import (brunovsky, controllability_rank, decoupling_matrix, diffeomorphism,
                        feedback_law, lie_chain)
from .sim import run_cases
from .synthesis import design, optimize_tau, robust_spot_check
from .uncertainty import (BoundResult, LinearizedUncertainModel, assemble_structured_model,
                          bound_rho, build_uncertainty_stack, transform_to_chi)

__all__ = ["ARTIFACT_VERSION", "Linearization", "linearize_model", "compute_bounds",
           "synthesize", "simulate_cases", "model_digest", "dump_artifact", "load_artifact",
           "ArtifactError"]

ARTIFACT_VERSION = 1


class ArtifactError(ValueError):
    pass


def model_digest(mf):
    """SHA-256 of the model file text (or of the system description)."""
    if mf.path is not None:
        data = mf.path.read_bytes()
    else:
        data = repr((mf.system.states, mf.system.inputs,
                     [ex.to_string(e) for e in mf.system.rhs()])).encode()
    return hashlib.sha256(data).hexdigest()


def dump_artifact(obj, path):
    text = json.dumps(obj, sort_keys=True, indent=1, allow_nan=False)
    path.write_text(text + "\n")


def load_artifact(path, stage, digest=None):
    try:
        obj = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as err:
        raise ArtifactError(f"cannot read {path}: {err}") from None
    if obj.get("format_version") != ARTIFACT_VERSION or obj.get("stage") != stage:
        raise ArtifactError(f"{path} is not a version-{ARTIFACT_VERSION} {stage} artifact")
    if digest is not None and obj.get("model_sha256") != digest:
        raise ArtifactError(f"{path} was produced from a different model file")
    return obj


@dataclass
class Linearization:
    chain: object
    diffeo: object
    law: object
    stack: object
    cond: float

    @property
    def degrees(self):
        return self.chain.degrees

    def transform(self):
        return transform_to_chi(self.stack, self.diffeo, self.law)


def linearize_model(mf):
    """Lie chains, law, chain coordinates and the symbolic uncertainty rows."""
    sys = mf.system
    tol = float(mf.solver.get("relative_degree_tol", 1e-9))
    chain = lie_chain(sys, tol=tol)
    _, cond = decoupling_matrix(chain)
    diffeo = diffeomorphism(chain)
    law = feedback_law(chain)
    stack = build_uncertainty_stack(chain)
    return Linearization(chain, diffeo, law, stack, cond)


def linearize_artifact(mf, lin):
    sys = mf.system
    A, B = brunovsky(lin.degrees)
    return {
        "format_version": ARTIFACT_VERSION, "stage": "linearize", "model": sys.name,
        "model_sha256": model_digest(mf),
        "degrees": list(lin.degrees), "n": sys.n, "m": sys.m, "n_bar": lin.chain.n_bar,
        "decoupling_condition": lin.cond,
        "controllability_rank": controllability_rank(A, B),
        "law": lin.law.describe(),
        "coordinates": lin.diffeo.describe(),
        "uncertain_rows": [k + 1 for k in lin.stack.nonzero_rows()],
        "input_rows": [k + 1 for k in lin.stack.input_rows()],
        "mismatch_at_trim": {str(k + 1): v for k, v in lin.stack.condition_report().items()},
    }


def compute_bounds(mf, lin, seed=None):
    """Gradient bounds and the structured model; returns ``(BoundResult, model)``."""
    seed = int(mf.solver.get("seed", 0) if seed is None else seed)
    if mf.box is None:
        raise ValueError("model file has no operating box")
    result = bound_rho(lin.transform(), mf.box, mf.solver["bound"], seed=seed)
    model = assemble_structured_model(lin.degrees, result.rho,
                                      convention=mf.synthesis.get("k_convention", "dense"),
                                      input_channels=lin.stack.input_rows())
    return result, model


def bound_artifact(mf, result, model, seed):
    return {"format_version": ARTIFACT_VERSION, "stage": "bound", "model": mf.system.name,
            "model_sha256": model_digest(mf), "seed": int(seed), "bounds": result.to_dict(),
            "structured_model": model.to_dict()}


def bounds_from_artifact(obj):
    return BoundResult.from_dict(obj["bounds"]), \
        LinearizedUncertainModel.from_dict(obj["structured_model"])


def _weights(mf, model):
    Q = np.eye(model.n_bar) if mf.Q is None else mf.Q
    R = np.eye(model.m) if mf.R is None else mf.R
    return Q, R


def synthesize(mf, model):
    """Minimax design with multipliers chosen per the model file's synthesis settings."""
    Q, R = _weights(mf, model)
    cfg = mf.synthesis
    na = len(model.active)
    tau_init = np.asarray(cfg.get("tau_init", 1.0), dtype=float)
    if tau_init.size not in (1, na):
        tau_init = np.ones(1)
    tau_init = np.broadcast_to(tau_init, (na,)).copy()
    chi0 = cfg.get("chi0", "unit-average")
    D_scale = float(cfg.get("D_scale", 1e-2))
    if na and cfg.get("optimize_tau", True):
        tau, _ = optimize_tau(model, Q, R, chi0=chi0, tau_init=tau_init, D_scale=D_scale)
    else:
        tau = tau_init
    return design(model, Q, R, tau, chi0=chi0, D_scale=D_scale)


def design_artifact(mf, d, model, spot):
    return {"format_version": ARTIFACT_VERSION, "stage": "synth", "model": mf.system.name,
            "model_sha256": model_digest(mf), "design": d.to_dict(),
            "structured_model": model.to_dict(),
            "robust_spot_check": {"samples": 100, "failures": spot[0],
                                  "worst_abscissa": spot[1]},
            "reduces_to_lqr": d.is_lqr}


def spot_check(model, d, seed=0):
    return robust_spot_check(model, d, n=100, seed=seed)


def simulate_cases(mf, lin, d, model, cases=(1, 2, 3), horizon=None, step=None):
    sim = mf.simulation
    horizon = float(sim.get("horizon", 10.0) if horizon is None else horizon)
    step = float(sim.get("step", 1e-3) if step is None else step)
    return run_cases(mf.system, lin.law, lin.diffeo, d.gain, mf.reference_schedule(),
                     horizon, step, cases=cases, Q=d.Q, R=d.R, model=model, stack=lin.stack)
