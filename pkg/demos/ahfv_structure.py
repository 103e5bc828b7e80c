"""Inspect the structure the hypersonic vehicle model induces.

Shows the relative degrees of velocity and altitude, where the parameter
mismatch enters the chain coordinates, which channels see the input, and
the resulting bounds. Run with ``python3 demos/ahfv_structure.py``
(about 20 s, dominated by the gradient bounds).
"""

import numpy as np

from robustfl import pipeline as pl
from robustfl.modelfile import load_model, shipped_model


def main():
    mf = load_model(shipped_model("ahfv"))
    sys = mf.system
    lin = pl.linearize_model(mf)
    print(f"states {list(sys.states)}")
    print(f"outputs {list(sys.output_names)}: relative degrees {lin.degrees}")
    print(f"n={sys.n}, extended chain dimension n_bar={lin.chain.n_bar}, "
          f"decoupling condition number {lin.cond:.3g}")
    # per output: integral of the error, the error, then its derivatives
    k = 1
    for name, r in zip(sys.output_names, lin.degrees):
        labels = [f"integral of {name} error", f"{name} - {name}_c"]
        labels += [f"d^{j} {name}/dt^{j}" for j in range(1, r)]
        for label in labels:
            print(f"  chi{k}: {label}")
            k += 1

    stack = lin.stack
    print(f"mismatch rows {[k + 1 for k in stack.nonzero_rows()]}, "
          f"input-dependent rows {[k + 1 for k in stack.input_rows()]}")

    result, model = pl.compute_bounds(mf, lin)
    for b in result.bounds:
        print(f"  channel {b.channel + 1}: rho={b.rho:.4g} (raw {b.rho_raw:.4g})")
    print(f"input gain perturbation rows {[int(k) + 1 for k in np.flatnonzero(model.G.any(axis=1))]}")


if __name__ == "__main__":
    main()
