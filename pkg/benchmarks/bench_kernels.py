"""Timing comparison of the numba and numpy kernel variants.

Run as `python3 benchmarks/bench_kernels.py`. Needs numba installed and
the default backend active (do not set PINLAB_NO_NUMBA); both variants
are called directly so one process covers the comparison. Workloads are
sized like the acceptance suite: a 65536-point force evaluation over a
Poisson field, and reachability closure on a 200 x 64 lattice.
"""

import time

import numpy as np

from pinlab import kernels
from pinlab._backend import USE_NUMBA
from pinlab.flat_percolation import GrowthFunction, sample_lattice
from pinlab.random_media import BumpProfile, PointMass, Window, sample_obstacles


def timed(fn, *args, repeats=20):
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        out = fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best, out


def bench_force_sum():
    bump = BumpProfile(1.0, 1.5)
    fld = sample_obstacles(0.05, Window(0.0, 437.0, 1.5, 24.0),
                           PointMass(1.0), bump, seed=3)
    qx = np.linspace(0.0, 437.0, 65536)
    qy = np.full(65536, 8.0) + 0.3 * np.sin(qx)
    ox, oy, ss = fld._xs, fld._ys, fld._ss
    args = (qx, qy, ox, oy, ss, bump.inner, bump.r1, bump.coeffs,
            np.polyder(bump.coeffs), True)

    kernels._force_sum_numba(*args)  # jit warmup
    t_nb, (f_nb, d_nb) = timed(kernels._force_sum_numba, *args)
    t_np, (f_np, d_np) = timed(kernels._force_sum_numpy, *args)
    assert np.allclose(f_nb, f_np, atol=1e-12) and np.allclose(d_nb, d_np, atol=1e-12)
    return "force_sum 65536q/%do" % ox.size, t_np, t_nb


def bench_lattice_reach():
    lat = sample_lattice(1, 200, 64, 0.97, seed=0)
    H = GrowthFunction(0.5)
    m_max = 1
    while H(m_max + 1) <= 64:
        m_max += 1
    heights = np.array([H(m) for m in range(1, m_max + 1)], dtype=np.int64)
    closed = np.ascontiguousarray(~lat.open)

    kernels._reach_numba(closed, heights)  # jit warmup
    t_nb, r_nb = timed(kernels._reach_numba, closed, heights)
    t_np, r_np = timed(kernels._reach_numpy, closed, heights)
    assert np.array_equal(r_nb, r_np)
    return "lattice_reach 200x64", t_np, t_nb


def main():
    if not USE_NUMBA:
        raise SystemExit("numba backend inactive (missing or PINLAB_NO_NUMBA=1); "
                         "nothing to compare")
    print(f"{'kernel':<28}{'numpy':>12}{'numba':>12}{'speedup':>10}")
    for name, t_np, t_nb in (bench_force_sum(), bench_lattice_reach()):
        print(f"{name:<28}{t_np * 1e3:>10.2f}ms{t_nb * 1e3:>10.2f}ms"
              f"{t_np / t_nb:>9.1f}x")


if __name__ == "__main__":
    main()
