"""Compiled vs numpy forward-backward kernels.

Times one pass of each kernel over simulated panels of increasing size and
checks that the two agree, then times a complete fit under each backend in a
fresh interpreter (the backend is fixed at import).

    python3 benchmarks/bench_kernels.py [--subjects 250 1000 4000] [--k 3 5] [--repeat 5]
"""

from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys
import time

import numpy as np

from lmpanel import backend
from lmpanel.likelihood import model_arrays
from lmpanel.model import SHARED_UPDOWN, Layout, ModelConfig, Parameters, build_design
from lmpanel.simulate import SimDesign, simulate_panel

FIT_SNIPPET = """
import json
import sys
import time
from lmpanel import BACKEND, FitSettings, SimDesign, fit, simulate_panel
design = SimDesign.from_dict(json.loads(sys.argv[1]))
panel, _ = simulate_panel(design)
t = time.perf_counter()
res = fit(panel, design.config, FitSettings(n_starts=int(sys.argv[2]), seed=1))
print(BACKEND, time.perf_counter() - t, res.n_iter, res.loglik)
"""


def design_for(n: int, k: int, T: int = 8, J: int = 9, H: int = 5) -> SimDesign:
    cfg = ModelConfig(k, SHARED_UPDOWN)
    layout = Layout(cfg, J, H)
    rng = np.random.default_rng(k)
    beta = np.zeros(layout.n_beta)
    beta[: layout.n_cuts] = -np.cumsum(np.full(layout.n_cuts, 0.8))
    cols = layout.init_columns
    beta[layout.n_cuts + cols.index("age")] = 0.02
    for h in range(H):
        beta[layout.n_cuts + cols.index(f"facility_{h + 1}")] = -1.5 + 0.2 * h
    gamma = np.zeros(layout.gamma_shape)
    for h in range(H):
        gamma[:, layout.trans_columns.index(f"facility_{h + 1}")] = -2.5 + rng.normal(0, 0.3, 2)
    lam = np.sort(rng.uniform(0.05, 0.95, (J, k)), axis=1)
    return SimDesign(n, H, J, cfg, Parameters(beta, gamma, lam), n_occasions=T, seed=7)


def time_kernel(kernel, args, repeat: int) -> float:
    best = np.inf
    for _ in range(repeat):
        t = time.perf_counter()
        kernel(*args)
        best = min(best, time.perf_counter() - t)
    return best


def kernel_table(subjects, ks, repeat):
    print(f"{'n':>7} {'k':>3} {'occasions':>10} {'numpy ms':>10} {'compiled ms':>12} {'speedup':>8} {'max diff':>9}")
    for k in ks:
        for n in subjects:
            design = design_for(n, k)
            panel, _ = simulate_panel(design)
            d = build_design(panel, design.config)
            pi, trans, log_m = model_arrays(design.params, panel, d)
            args = (np.ascontiguousarray(log_m), np.ascontiguousarray(pi), np.ascontiguousarray(trans),
                    panel.arrays.offsets)
            t_py = time_kernel(backend.python_forward_backward, args, repeat)
            ref = backend.python_forward_backward(*args)
            if backend.compiled_forward_backward is None:
                print(f"{n:>7} {k:>3} {log_m.shape[0]:>10} {1e3 * t_py:>10.2f} {'-':>12} {'-':>8} {'-':>9}")
                continue
            t_c = time_kernel(backend.compiled_forward_backward, args, repeat)
            out = backend.compiled_forward_backward(*args)
            diff = max(float(np.max(np.abs(a - b))) for a, b in zip(ref, out))
            print(f"{n:>7} {k:>3} {log_m.shape[0]:>10} {1e3 * t_py:>10.2f} {1e3 * t_c:>12.2f} "
                  f"{t_py / t_c:>8.1f} {diff:>9.1e}")


def fit_table(n, k, starts):
    design = json.dumps(design_for(n, k).to_dict())
    print(f"\nfull fit, n={n}, k={k}, {starts} random starts")
    for choice in ("python", "cython"):
        env = dict(os.environ, LMPANEL_BACKEND=choice)
        out = subprocess.run([sys.executable, "-c", FIT_SNIPPET, design, str(starts)], env=env,
                             capture_output=True, text=True, check=True).stdout.split()
        print(f"  backend {out[0]:<7} {float(out[1]):8.2f} s  iterations {out[2]:>5}  loglik {float(out[3]):.6f}")


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--subjects", type=int, nargs="+", default=[250, 1000, 4000])
    p.add_argument("--k", type=int, nargs="+", default=[3, 5])
    p.add_argument("--repeat", type=int, default=5)
    p.add_argument("--fit-subjects", type=int, default=1000)
    p.add_argument("--fit-starts", type=int, default=5)
    p.add_argument("--skip-fit", action="store_true")
    args = p.parse_args(argv)
    print(f"active backend: {backend.BACKEND}")
    kernel_table(args.subjects, args.k, args.repeat)
    if not args.skip_fit:
        fit_table(args.fit_subjects, 3, args.fit_starts)


if __name__ == "__main__":
    main()
