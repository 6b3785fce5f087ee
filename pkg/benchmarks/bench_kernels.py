"""Compare the numba kernels with their numpy twins.

    python benchmarks/bench_kernels.py [--repeat 5]

Prints best-of-N wall time per kernel and backend, plus the largest
absolute difference between the two outputs.
"""

import argparse
import time

import numpy as np

from dp_ipw import _kernels
from dp_ipw.propensity import auto_step
from dp_ipw.rng import RngStream
from dp_ipw.synthgen import SynthConfig, generate


def best_of(fn, repeat):
    best = np.inf
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--m", type=int, default=2500)
    ap.add_argument("--d", type=int, default=50)
    ap.add_argument("--draws", type=int, default=200_000)
    args = ap.parse_args()

    if _kernels.numba_impl is None:
        raise SystemExit("numba is not importable; nothing to compare")

    data, _ = generate(SynthConfig(n_units=args.m, d=args.d), RngStream(1))
    x, t, y = data.covariates, data.treatments, data.outcomes
    w0 = np.zeros(args.d)
    small, _ = generate(SynthConfig(n_units=10, d=5), RngStream(2))
    z = 0.2 * RngStream(3).generator().standard_normal((args.draws, 5))
    margins = small.covariates @ np.full(5, 0.3)

    cases = {
        "logistic_gd lr=1.0": lambda impl: impl.logistic_gd(x, t, w0, 0.1, 1.0, 1e-8, 100_000)[0],
        "logistic_gd lr=auto": lambda impl: impl.logistic_gd(
            x, t, w0, 0.1, auto_step(x, 0.1), 1e-8, 100_000
        )[0],
        f"partial_ate_draws x{args.draws}": lambda impl: impl.partial_ate_draws(
            small.covariates, small.treatments, small.outcomes, margins, z, 0.0
        ),
    }

    # warm-up compiles the numba kernels
    for fn in cases.values():
        fn(_kernels.numba_impl)

    print(f"{'kernel':32s} {'numpy [s]':>10s} {'numba [s]':>10s} {'speedup':>8s} {'max |diff|':>11s}")
    for name, fn in cases.items():
        t_np, out_np = best_of(lambda: fn(_kernels.numpy_impl), args.repeat)
        t_nb, out_nb = best_of(lambda: fn(_kernels.numba_impl), args.repeat)
        diff = float(np.max(np.abs(out_np - out_nb)))
        print(f"{name:32s} {t_np:10.4f} {t_nb:10.4f} {t_np / t_nb:8.2f} {diff:11.2e}")


if __name__ == "__main__":
    main()
