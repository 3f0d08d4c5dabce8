"""Compare the compiled and NumPy rod kernels.

Times one energy/gradient evaluation per backend at several rod sizes, then a
full 50 g cantilever run to rest with each backend active.

    python benchmarks/bench_backends.py [--repeat 200] [--sizes 10 40 160]
"""

from __future__ import annotations

import argparse
import time
import timeit

import numpy as np

from cathrod import kernels, rod
from cathrod.stepper import IntegratorConfig, run_to_equilibrium


def perturbed_rod(n: int, seed: int = 0):
    params = rod.RodParameters(5.9e6, 11040.0, 0.006, 0.12, n)
    state = rod.make_rod(params, base_orientation=rod.orientation_quaternion([1, 0, 0],
                                                                             [0, 1, 0]))
    rng = np.random.default_rng(seed)
    points = state.points + 1e-3 * rng.standard_normal(state.points.shape)
    quats = state.quaternions + 0.05 * rng.standard_normal(state.quaternions.shape)
    return params, points, quats


def time_kernel(fn, params, points, quats, repeat: int) -> float:
    args = (points, quats, params.rest_lengths, params.stretch_stiffness,
            params.stiffness_tensor, params.penalty_constant,
            np.asarray(params.intrinsic_curvature), params.quaternion_norm_penalty, None)
    fn(*args)
    return min(timeit.repeat(lambda: fn(*args), number=repeat, repeat=3)) / repeat


def time_equilibrium(fn) -> tuple[float, int]:
    params = rod.RodParameters(5.9e6, 11040.0, 0.006, 0.12, 40)
    state = rod.make_rod(params, base_orientation=rod.orientation_quaternion([1, 0, 0],
                                                                             [0, 1, 0]))
    bc = rod.BoundaryConditions(point_loads=[(39, (0.0, -0.05 * 9.80665, 0.0))])
    saved = kernels._impl
    kernels._impl = fn
    try:
        t0 = time.perf_counter()
        _, result = run_to_equilibrium(state, params, bc, IntegratorConfig())
        return time.perf_counter() - t0, result.steps
    finally:
        kernels._impl = saved


def main(argv=None) -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=200)
    parser.add_argument("--sizes", type=int, nargs="+", default=[10, 40, 160])
    args = parser.parse_args(argv)
    backends = kernels.available_backends()
    print(f"active backend: {kernels.BACKEND}; available: {', '.join(backends)}")
    print(f"{'N':>6} " + " ".join(f"{name + ' [us]':>14}" for name in backends) + "  speedup")
    for n in args.sizes:
        params, points, quats = perturbed_rod(n)
        times = {name: time_kernel(fn, params, points, quats, args.repeat)
                 for name, fn in backends.items()}
        row = " ".join(f"{1e6 * t:14.1f}" for t in times.values())
        speedup = times["python"] / times["cython"] if "cython" in times else float("nan")
        print(f"{n:6d} {row}  {speedup:7.1f}x")
    print("50 g cantilever, N=40, run to rest:")
    for name, fn in backends.items():
        wall, steps = time_equilibrium(fn)
        print(f"  {name:>8}: {wall:.3f} s ({steps} steps)")


if __name__ == "__main__":
    main()
