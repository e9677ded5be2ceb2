"""Hot numerical kernels, each in a numba and a pure-numpy variant.

The active variant is chosen once at import via pinlab._backend.USE_NUMBA
(see the PINLAB_NO_NUMBA environment flag). Both variants implement the
same contract and are exercised against each other in the test suite and
in benchmarks/bench_kernels.py.

Kernel inventory:
  force_sum          obstacle force (and optional d/dy) along sorted queries
  lattice_reach      worklist closure of the percolation reachability set
"""

from math import comb, hypot

import numpy as np

from ._backend import USE_NUMBA, njit

__all__ = ["smoothstep_coeffs", "smoothstep_radial", "force_sum", "lattice_reach"]


def smoothstep_coeffs(order):
    """Polynomial coefficients (highest degree first) of the smoothstep.

    Order must be odd and >= 7; the polynomial S maps [0,1] to [0,1] with
    S(0)=0, S(1)=1 and (order-1)/2 vanishing derivatives at both ends.
    """
    if order % 2 == 0 or order < 7:
        raise ValueError("smoothstep order must be odd and >= 7")
    k = (order - 1) // 2
    coeffs = np.zeros(order + 1)
    for n in range(k + 1):
        # coefficient of x^(k+1+n)
        coeffs[order - (k + 1 + n)] = (
            (-1.0) ** n * comb(k + n, n) * comb(2 * k + 1, k - n)
        )
    return coeffs


def _horner(coeffs, t):
    acc = np.zeros_like(t)
    for c in coeffs:
        acc = acc * t + c
    return acc


def smoothstep_radial(rho, inner, outer, coeffs):
    """Radial profile: 1 for rho <= inner, 0 for rho >= outer, smoothstep between."""
    rho = np.asarray(rho, dtype=float)
    t = np.clip((outer - rho) / (outer - inner), 0.0, 1.0)
    return _horner(coeffs, t)


# --- obstacle force --------------------------------------------------------

def _force_sum_numpy(qx, qy, ox, oy, os_, inner, outer, coeffs, dcoeffs, want_dy):
    force = np.zeros_like(qx)
    dforce = np.zeros_like(qx) if want_dy else None
    slope = -1.0 / (outer - inner)
    for k in range(ox.size):
        lo = np.searchsorted(qx, ox[k] - outer)
        hi = np.searchsorted(qx, ox[k] + outer)
        if lo == hi:
            continue
        dx = qx[lo:hi] - ox[k]
        dy = qy[lo:hi] - oy[k]
        rho = np.hypot(dx, dy)
        near = rho < outer
        if not np.any(near):
            continue
        t = np.clip((outer - rho[near]) / (outer - inner), 0.0, 1.0)
        phi = _horner(coeffs, t)
        force[lo:hi][near] += os_[k] * phi
        if want_dy:
            mid = (rho[near] > inner) & (rho[near] > 0.0)
            dphi = np.zeros_like(t)
            dphi[mid] = (
                _horner(dcoeffs, t[mid]) * slope * dy[near][mid] / rho[near][mid]
            )
            dforce[lo:hi][near] += os_[k] * dphi
    if want_dy:
        return force, dforce
    return force, np.zeros(0)


if USE_NUMBA:

    @njit(cache=True)
    def _force_sum_numba(qx, qy, ox, oy, os_, inner, outer, coeffs, dcoeffs, want_dy):
        n = qx.size
        force = np.zeros(n)
        dforce = np.zeros(n if want_dy else 0)
        slope = -1.0 / (outer - inner)
        for j in range(n):
            lo = np.searchsorted(ox, qx[j] - outer)
            hi = np.searchsorted(ox, qx[j] + outer)
            acc = 0.0
            dacc = 0.0
            for k in range(lo, hi):
                dy = qy[j] - oy[k]
                if dy >= outer or -dy >= outer:
                    continue
                dx = qx[j] - ox[k]
                rho = hypot(dx, dy)
                if rho >= outer:
                    continue
                if rho <= inner:
                    acc += os_[k]
                    continue
                t = (outer - rho) / (outer - inner)
                p = 0.0
                for c in coeffs:
                    p = p * t + c
                acc += os_[k] * p
                if want_dy and rho > 0.0:
                    dp = 0.0
                    for c in dcoeffs:
                        dp = dp * t + c
                    dacc += os_[k] * dp * slope * dy / rho
            force[j] = acc
            if want_dy:
                dforce[j] = dacc
        return force, dforce


def force_sum(qx, qy, ox, oy, os_, inner, outer, coeffs, want_dy=False):
    """Sum of obstacle bumps at query points (qx sorted ascending).

    Returns (force, dforce_dy); the derivative slot is empty unless requested.
    ox must be sorted ascending; inner/outer are the radial profile radii.
    """
    dcoeffs = np.polyder(coeffs)
    if USE_NUMBA:
        return _force_sum_numba(
            qx, qy, ox, oy, os_, inner, outer, coeffs, dcoeffs, want_dy
        )
    return _force_sum_numpy(
        qx, qy, ox, oy, os_, inner, outer, coeffs, dcoeffs, want_dy
    )


# --- percolation reachability ----------------------------------------------

def _reach_numpy(closed, heights):
    """Alternating full up-sweeps and down-sweeps until a fixed point.

    One ascending pass closes arbitrary chains of up-steps; one descending
    pass closes arbitrary chains of down-jumps (targets lie below their
    sources, so they are revisited later in the same pass). Alternation
    count equals the up/down alternation depth of the witness paths.
    """
    width, levels = closed.shape
    reach = np.zeros_like(closed)
    reach[:, 0] = True
    max_m = heights.size
    while True:
        before = int(reach.sum())
        for j in range(levels - 1):
            reach[:, j + 1] |= reach[:, j] & closed[:, j + 1]
        for j in range(levels - 1, 0, -1):
            src = reach[:, j]
            if not src.any():
                continue
            for m in range(1, max_m + 1):
                drop = heights[m - 1]
                if drop > j:
                    break
                tgt = reach[:, j - drop]
                tgt[:-m] |= src[m:]
                tgt[m:] |= src[:-m]
        if int(reach.sum()) == before:
            return reach


if USE_NUMBA:

    @njit(cache=True)
    def _reach_numba(closed, heights):
        width, levels = closed.shape
        reach = np.zeros((width, levels), dtype=np.bool_)
        stack_x = np.empty(width * levels, dtype=np.int64)
        stack_j = np.empty(width * levels, dtype=np.int64)
        top = 0
        for x in range(width):
            reach[x, 0] = True
            stack_x[top] = x
            stack_j[top] = 0
            top += 1
        max_m = heights.size
        while top > 0:
            top -= 1
            x = stack_x[top]
            j = stack_j[top]
            # up-step requires the target site to be closed
            if j + 1 < levels and closed[x, j + 1] and not reach[x, j + 1]:
                reach[x, j + 1] = True
                stack_x[top] = x
                stack_j[top] = j + 1
                top += 1
            # down-jumps are unconditional
            for m in range(1, max_m + 1):
                drop = heights[m - 1]
                if drop > j:
                    break
                for nx in (x - m, x + m):
                    if 0 <= nx < width and not reach[nx, j - drop]:
                        reach[nx, j - drop] = True
                        stack_x[top] = nx
                        stack_j[top] = j - drop
                        top += 1
        return reach


def lattice_reach(closed, heights):
    """Reachable sites of the percolation dynamics on a closed-site window.

    closed: (width, levels) boolean array, True = closed site.
    heights: heights[m-1] = H(m) = level drop of a horizontal jump of size m,
             nondecreasing; jumps larger than heights.size are never taken
             (callers size the array so H(max_m) exceeds the window height).
    Every level-0 site is a start. Up-steps (x, j)->(x, j+1) need the target
    closed; down-jumps (x, j)->(x +- m, j - H(m)) are unconditional.
    """
    closed = np.ascontiguousarray(closed, dtype=bool)
    heights = np.ascontiguousarray(heights, dtype=np.int64)
    if heights.size and np.any(np.diff(heights) < 0):
        raise ValueError("heights must be nondecreasing")
    if USE_NUMBA:
        return _reach_numba(closed, heights)
    return _reach_numpy(closed, heights)
