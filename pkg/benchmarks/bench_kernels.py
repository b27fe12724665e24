"""Compare the compiled and numpy backends of the hot loops.

    python3 benchmarks/bench_kernels.py [--repeat 3]

Prints one line per (kernel, backend, workload) with the best wall time
and the maximum difference between backends.
"""
import argparse
import time

import numpy as np

from gravcollapse import kernels
from gravcollapse.master import Grid1D, KineticOperator
from gravcollapse.rates import DecoherenceKernel
from gravcollapse.sse import build_noise_covariance


def _best(fn, repeat):
    best = np.inf
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def bench_sse(repeat, batch, steps, kinetic):
    import warnings
    grid = Grid1D(16, 1.25)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        noise = build_noise_covariance(DecoherenceKernel("dp", 1.0, 1.0), grid)
    rng = np.random.default_rng(0)
    psi0 = rng.normal(size=(batch, 16)) + 1j * rng.normal(size=(batch, 16))
    psi0 /= np.linalg.norm(psi0, axis=1)[:, None]
    xi = rng.normal(size=(batch, steps, 16))
    U = np.ascontiguousarray(KineticOperator(1.0).unitary(grid, 1e-3)) if kinetic else None
    results = {}
    for name, impl in kernels.BACKENDS.items():
        t, (psi, _) = _best(lambda: impl.sse_chunk(psi0.copy(), xi, noise.factor,
                                                   noise.covariance, U, 1e-3), repeat)
        results[name] = (t, psi)
    return results


def bench_relax(repeat, particles, jumps):
    rng = np.random.default_rng(1)
    p0 = rng.normal(size=(particles, 3))
    times = np.cumsum(rng.exponential(size=(particles, jumps)), axis=1)
    rnd = np.empty((particles, jumps, 3))
    rnd[..., :2] = rng.random((particles, jumps, 2))
    rnd[..., 2] = rng.normal(size=(particles, jumps))
    ck = np.linspace(0.0, times[:, -1].min(), 32)
    results = {}
    for name, impl in kernels.BACKENDS.items():
        t, (p, e) = _best(lambda: impl.relax_block(p0.copy(), times, rnd, 0.35, 1.0, ck, 0.5),
                          repeat)
        results[name] = (t, e)
    return results


def _report(label, results):
    ref = results.get("python")
    for name, (t, val) in results.items():
        diff = float(np.max(np.abs(val - ref[1]))) if ref is not None else 0.0
        print(f"{label:<34} {name:<7} {t * 1e3:9.2f} ms   max|diff| {diff:.2e}")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    print(f"active backend: {kernels.BACKEND}; available: {sorted(kernels.BACKENDS)}")
    for batch in (1, 64, 1000):
        _report(f"sse_chunk H=0 batch={batch} x256", bench_sse(args.repeat, batch, 256, False))
        _report(f"sse_chunk H!=0 batch={batch} x256", bench_sse(args.repeat, batch, 256, True))
    for particles, jumps in ((100, 1000), (2000, 50), (2000, 800)):
        _report(f"relax_block {particles}x{jumps}", bench_relax(args.repeat, particles, jumps))


if __name__ == "__main__":
    main()
