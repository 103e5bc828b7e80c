"""Command-line driver: ``robustfl <stage> --model FILE --out DIR``.

Stages run in order ``check -> linearize -> bound -> synth -> sim -> plot``.
Each writes a versioned artifact into the output directory; a stage reuses
the artifacts of earlier stages when they exist and match the model file,
and recomputes them otherwise.

Exit codes: 0 success, 1 unexpected error, 2 model/parse error,
3 relative-degree or decoupling failure, 4 bounding failure,
5 Riccati/synthesis failure, 6 simulation failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
import warnings
from pathlib import Path

import numpy as np

from . import expr as ex
from . import pipeline as pl
from .linearize import DiffeomorphismError, RelativeDegreeError, SingularDecouplingError
from .model import ModelError, TrimWarning
from .modelfile import MODELS_DIR, load_model
from .sim import CASE_FACTORS, SimulationError, iqc_monitor, read_csv
from .synthesis import RiccatiError, cost_bound, design_report
from .uncertainty import BoundError, ExpressionBlowupError, bound_report

__all__ = ["main", "build_parser", "EXIT_CODES"]

EXIT_CODES = {"parse": 2, "degree": 3, "bound": 4, "riccati": 5, "sim": 6}

log = logging.getLogger("robustfl")


class StageError(Exception):
    def __init__(self, kind, message):
        super().__init__(message)
        self.code = EXIT_CODES[kind]


def _resolve_model(arg):
    p = Path(arg)
    if p.exists():
        return p
    shipped = MODELS_DIR / f"{arg}.yaml"
    if shipped.exists():
        return shipped
    raise StageError("parse", f"model file not found: {arg}")


class Session:
    """Lazily computed pipeline state backed by the artifact directory."""

    def __init__(self, args):
        self.args = args
        self.out = Path(args.out)
        self.out.mkdir(parents=True, exist_ok=True)
        path = _resolve_model(args.model)
        try:
            with warnings.catch_warnings(record=True) as caught:
                warnings.simplefilter("always", TrimWarning)
                self.mf = load_model(path)
        except (ModelError, ex.ExprError) as err:
            raise StageError("parse", str(err)) from None
        self.trim_warnings = [str(w.message) for w in caught
                              if issubclass(w.category, TrimWarning)]
        self.digest = pl.model_digest(self.mf)
        seed = args.seed if args.seed is not None else self.mf.solver.get("seed", 0)
        self.seed = int(seed)
        self._lin = self._bounds = self._design = None

    def _artifact(self, name, stage):
        path = self.out / name
        if not path.exists():
            return None
        try:
            return pl.load_artifact(path, stage, self.digest)
        except pl.ArtifactError as err:
            log.info("recomputing %s: %s", stage, err)
            return None

    # stages -------------------------------------------------------------

    def linearization(self):
        if self._lin is None:
            try:
                self._lin = pl.linearize_model(self.mf)
            except (RelativeDegreeError, SingularDecouplingError) as err:
                raise StageError("degree", str(err)) from None
            except ExpressionBlowupError as err:
                raise StageError("bound", str(err)) from None
        return self._lin

    def bounds(self, recompute=False):
        if self._bounds is None:
            obj = None if recompute else self._artifact("bound.json", "bound")
            if obj is not None and obj.get("seed") == self.seed:
                self._bounds = pl.bounds_from_artifact(obj)
            else:
                lin = self.linearization()
                try:
                    result, model = pl.compute_bounds(self.mf, lin, self.seed)
                except (BoundError, DiffeomorphismError, ValueError) as err:
                    raise StageError("bound", str(err)) from None
                self._bounds = (result, model)
                pl.dump_artifact(pl.bound_artifact(self.mf, result, model, self.seed),
                                 self.out / "bound.json")
                (self.out / "bound_report.txt").write_text(bound_report(result))
        return self._bounds

    def design(self, recompute=False):
        if self._design is None:
            obj = None if recompute else self._artifact("design.json", "synth")
            if obj is not None:
                from .synthesis import MinimaxDesign
                from .uncertainty import LinearizedUncertainModel
                self._design = (MinimaxDesign.from_dict(obj["design"]),
                                LinearizedUncertainModel.from_dict(obj["structured_model"]),
                                (obj["robust_spot_check"]["failures"],
                                 obj["robust_spot_check"]["worst_abscissa"]))
            else:
                _, model = self.bounds()
                try:
                    d = pl.synthesize(self.mf, model)
                except (RiccatiError, np.linalg.LinAlgError) as err:
                    raise StageError("riccati", str(err)) from None
                spot = pl.spot_check(model, d, seed=self.seed)
                self._design = (d, model, spot)
                pl.dump_artifact(pl.design_artifact(self.mf, d, model, spot),
                                 self.out / "design.json")
                (self.out / "design_report.txt").write_text(design_report(d))
        return self._design


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_check(s):
    mf, sys_ = s.mf, s.mf.system
    lines = [f"model: {sys_.name} ({mf.path})",
             f"states: {sys_.n}  inputs: {sys_.m}  outputs: {len(sys_.outputs)}  "
             f"parameters: {len(sys_.parameters)} ({len(sys_.uncertain_parameters)} uncertain)",
             "square system: ok"]
    res = sys_.trim_residual()
    tol = sys_.trim_tol * (1.0 + np.max(np.abs(sys_.x_trim), initial=0.0))
    lines.append(f"trim residual: {res:.3e} (tolerance {tol:.3e}) "
                 + ("ok" if res <= tol else "WARNING"))
    for p in sys_.uncertain_parameters:
        lines.append(f"  {p.name}: {p.nominal!r} +/- {p.half_width!r}")
    if mf.box is None:
        lines.append("operating box: missing (required for bound)")
    else:
        lines.append(f"operating box: {mf.box.n_chi} chain coordinates, {mf.box.n_v} inputs, "
                     "contains origin")
    if mf.Q is None or mf.R is None:
        lines.append("weights: identity defaults")
    lines.append("check passed")
    print("\n".join(lines))
    return 0


def cmd_linearize(s):
    lin = s.linearization()
    art = pl.linearize_artifact(s.mf, lin)
    pl.dump_artifact(art, s.out / "linearize.json")
    print(f"relative degrees r={list(lin.degrees)}, n={art['n']}, n_bar={art['n_bar']}")
    print(f"decoupling matrix condition at trim: {lin.cond:.3e}")
    print("uncertain chain rows: " + (" ".join(map(str, art["uncertain_rows"])) or "none"))
    print("rows depending on the input: " + (" ".join(map(str, art["input_rows"])) or "none"))
    if s.args.verbose:
        for k, c in enumerate(art["coordinates"], start=1):
            print(f"  chi{k} = {c[:100]}")
    return 0


def cmd_bound(s):
    result, model = s.bounds(recompute=True)
    print(bound_report(result), end="")
    print("active channels: " + (" ".join(str(k + 1) for k in model.active) or "none"))
    return 0


def cmd_synth(s):
    d, model, spot = s.design(recompute=True)
    print(design_report(d), end="")
    print(f"robust spot check: {spot[0]} failures in 100 static realizations")
    return 0


def _parse_cases(text):
    try:
        cases = tuple(int(c) for c in text.split(","))
    except ValueError:
        raise StageError("sim", f"bad case list {text!r}") from None
    if any(c not in (1, 2, 3) for c in cases):
        raise StageError("sim", "cases must be drawn from 1, 2, 3")
    return cases


def cmd_sim(s):
    d, model, _ = s.design()
    lin = s.linearization()
    cases = _parse_cases(s.args.cases)
    try:
        trajs = pl.simulate_cases(s.mf, lin, d, model, cases, s.args.horizon, s.args.step)
    except (SimulationError, SingularDecouplingError) as err:
        raise StageError("sim", str(err)) from None
    names = s.mf.system.output_names
    head = f"{'case':>4}  {'p-scale':>7}  " + "  ".join(f"{'|e_' + n + '(T)|':>14}" for n in names)
    head += f"  {'cost':>12}  {'bound':>12}  iqc"
    rows = [head]
    for c, tr in zip(cases, trajs):
        tr.to_csv(s.out / f"case{c}.csv")
        err = np.abs(tr.tracking_error[-1]) if len(tr) else np.full(len(names), np.nan)
        # cost and bound are taken from the last reference switch onward
        t0 = max([t for t in tr.scenario.switch_times() if t <= tr.t[-1]], default=0.0) \
            if len(tr) else 0.0
        i0 = int(np.searchsorted(tr.t, t0 - 1e-12))
        bnd = cost_bound(d.X, d.tau, d.D, tr.chi[i0]) if len(tr) else np.nan
        if model.active:
            reps, exit_msg = iqc_monitor(tr, model, d.D, s.mf.box)
            iqc = "held" if all(r.satisfied for r in reps) else "violated"
            if exit_msg:
                iqc += f"; {exit_msg}"
        else:
            iqc = "n/a"
        if tr.diverged:
            iqc += f"; {tr.diagnostic}"
        scale = CASE_FACTORS[c]
        cost = tr.cost[-1] - tr.cost[i0] if len(tr) else np.nan
        rows.append(f"{c:>4}  {scale:>7.2f}  " + "  ".join(f"{e:>14.6e}" for e in err)
                    + f"  {cost:>12.6e}  {bnd:>12.6e}  {iqc}")
    table = "\n".join(rows) + "\n"
    (s.out / "sim_summary.txt").write_text(table)
    print(table, end="")
    return 0


def cmd_plot(s):
    from .plotting import plot_all
    trajs = []
    for c in (1, 2, 3):
        path = s.out / f"case{c}.csv"
        if path.exists():
            trajs.append(read_csv(path, label=f"case{c}"))
    if not trajs:
        raise StageError("sim", f"no trajectory CSVs in {s.out}; run 'sim' first")
    for p in plot_all(trajs, s.out, s.mf.system):
        print(p)
    return 0


COMMANDS = {"check": cmd_check, "linearize": cmd_linearize, "bound": cmd_bound,
            "synth": cmd_synth, "sim": cmd_sim, "plot": cmd_plot}


def _global_flags(p, suppress):
    d = argparse.SUPPRESS if suppress else None
    p.add_argument("--model", default=d, help="model file path or shipped model name")
    p.add_argument("--out", default=d if suppress else "robustfl-out",
                   help="artifact directory (default: robustfl-out)")
    p.add_argument("--seed", type=int, default=d, help="random seed (u64)")
    p.add_argument("--verbose", action="store_true", default=d if suppress else False)


def build_parser():
    parser = argparse.ArgumentParser(prog="robustfl", description=__doc__.splitlines()[0])
    _global_flags(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        _global_flags(sp, suppress=True)
        if name == "sim":
            sp.add_argument("--cases", default="1,2,3", help="comma-separated case list")
            sp.add_argument("--horizon", type=float, default=None)
            sp.add_argument("--step", type=float, default=None)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    if args.model is None:
        print("error: --model is required", file=sys.stderr)
        return EXIT_CODES["parse"]
    if args.seed is not None and not 0 <= args.seed < 2**64:
        print("error: --seed must be an unsigned 64-bit integer", file=sys.stderr)
        return EXIT_CODES["parse"]
    try:
        session = Session(args)
        for w in session.trim_warnings:
            log.warning(w)
        return COMMANDS[args.command](session)
    except StageError as err:
        print(f"error: {err}", file=sys.stderr)
        return err.code


if __name__ == "__main__":
    sys.exit(main())
