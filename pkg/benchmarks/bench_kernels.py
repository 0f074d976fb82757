"""Compare the compiled simulation kernels against the pure-numpy fallback.

Usage:
    python3 benchmarks/bench_kernels.py [--steps N] [--repeats R]

Times simulate_path and quantize_batch on the bundled 6-state example
loop, reports steps/second per backend, and cross-checks that both
produce bit-identical trajectories (they must: the fallback mirrors the
compiled arithmetic operation for operation).
"""

import argparse
import time

import numpy as np

from quantaw import examples, kernels, loop


def _setup(steps):
    pf = examples.load_example("example1")
    cl = pf.assemble()
    E = np.zeros((cl.n_controller, cl.n_inputs))
    B_comp = cl.input_matrix(E)
    x0 = np.asarray(pf.simulation.x0, dtype=float)
    active = np.ones(steps, dtype=np.uint8)
    return (cl.A, B_comp, cl.B, cl.H, cl.quantizer.theta, x0, active)


def _time(fn, args, repeats):
    best = np.inf
    out = None
    for _ in range(repeats):
        t0 = time.perf_counter()
        out = fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best, out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--steps", type=int, default=200_000)
    ap.add_argument("--repeats", type=int, default=3)
    args = ap.parse_args()

    names = kernels.available_backends()
    print(f"backends: {', '.join(names)} (selected: {kernels.BACKEND})")
    sim_args = _setup(args.steps)

    results = {}
    for name in names:
        backend = kernels.load_backend(name)
        dt, out = _time(backend.simulate_path, sim_args, args.repeats)
        results[name] = out
        print(f"simulate_path[{name:8s}]: {args.steps} steps in {dt:.4f}s "
              f"({args.steps / dt / 1e6:.2f} M steps/s)")

    if len(results) == 2:
        a, b = results.values()
        identical = all(np.array_equal(x, y) for x, y in zip(a, b))
        print(f"trajectories bit-identical across backends: {identical}")
        if not identical:
            raise SystemExit("backend mismatch -- this is a bug")

    rng = np.random.default_rng(0)
    u = rng.normal(0.0, 5.0, (args.steps, 3))
    theta = np.array([0.5, 0.0035, 2.0])
    for name in names:
        backend = kernels.load_backend(name)
        dt, _ = _time(backend.quantize_batch, (u, theta), args.repeats)
        print(f"quantize_batch[{name:8s}]: {u.size} values in {dt:.4f}s "
              f"({u.size / dt / 1e6:.2f} M values/s)")


if __name__ == "__main__":
    main()
