"""Time the numba and numpy variants of each hot kernel.

    python benchmarks/bench_kernels.py [--repeat 5] [--quick]

Compilation happens in a warm-up call and is not timed. Each variant is
also checked against the other on the same input.
"""

import argparse
import time

import numpy as np

from gammacas import kernels
from gammacas.growth import QuadratureConfig, quadrature_nodes
from gammacas.pointprocess import HawkesParams, simulate_hawkes


def _cases(quick):
    rng = np.random.default_rng(0)
    B = 64 if quick else 256
    t, w = quadrature_nodes(np.array([12.0, 18, 24, 36, 48, 72, 120, 240, 360]),
                            QuadratureConfig())
    A = rng.uniform(1, 30, B)
    g = rng.uniform(0.5, 2, B)
    lam = rng.uniform(0.2, 1.5, B)
    events = simulate_hawkes(HawkesParams(0.2, 0.8, 1.0), 2000.0 if quick else 20000.0, seed=1)
    ranks = rng.integers(0, 500, 20_000 if quick else 200_000).astype(np.float64)
    s = rng.uniform(0.1, 5, 2000)
    x = rng.uniform(0, 20, 2000)

    def gamma_loop(fn):
        return sum(fn(a, b) for a, b in zip(s, x))

    return {
        "lower_gamma (2000 calls)": (gamma_loop, "lower_gamma"),
        f"rate_integral (B={B}, 9 horizons)": (lambda fn: fn(A, g, lam, t, w), "rate_integral"),
        f"hawkes_loglik ({events.size} events)":
            (lambda fn: fn(events, float(events[-1]) + 1, 0.2, 0.8, 1.0), "hawkes_loglik"),
        f"count_inversions (n={ranks.size})": (lambda fn: fn(ranks), "count_inversions"),
    }


def _best(call, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = call()
        times.append(time.perf_counter() - t0)
    return min(times), out


def _close(a, b):
    a = a if isinstance(a, tuple) else (a,)
    b = b if isinstance(b, tuple) else (b,)
    return all(np.allclose(x, y, rtol=1e-9, atol=1e-12) for x, y in zip(a, b))


def run(repeat=5, quick=False):
    results = []
    for label, (runner, key) in _cases(quick).items():
        nb_fn, np_fn = kernels.VARIANTS[key]
        runner(nb_fn)  # compile
        t_nb, out_nb = _best(lambda: runner(nb_fn), repeat)
        t_np, out_np = _best(lambda: runner(np_fn), repeat)
        results.append((label, t_nb, t_np, _close(out_nb, out_np)))
    return results


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--quick", action="store_true")
    args = ap.parse_args()
    print(f"{'kernel':40s} {'numba ms':>10s} {'numpy ms':>10s} {'speedup':>8s}  agree")
    for label, t_nb, t_np, ok in run(args.repeat, args.quick):
        print(f"{label:40s} {1e3 * t_nb:10.3f} {1e3 * t_np:10.3f} {t_np / t_nb:8.1f}x  {ok}")


if __name__ == "__main__":
    main()
