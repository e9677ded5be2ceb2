"""Finite-window site percolation and the blocking surface over it.

Sites (x, j) on integer columns x levels are open with probability p. An
admissible path starts on any (x, 0), moves up one level only into closed
sites, and may drop H(m) levels on a horizontal jump of size m at any
time. The surface

    lambda(x) = 1 + max admissible height reachable at column x

is certified on windows where no path touches the top level: openness of
(x, lambda(x)) holds because a closed site there would extend a maximal
path, and the growth bound |lambda(x)-lambda(y)| <= H(|x-y|) holds because
a single down-jump transports any witness path between columns. Both
certificates are exhaustive over the window, no boundary margin needed
(down-jumps and up-steps used in the arguments stay inside the window).

The counting side bounds the expected number of admissible paths and yields
a sufficient closed-site probability q_max below which large windows
certify with high probability.
"""

import io
from dataclasses import dataclass, field

import numpy as np

from .kernels import lattice_reach

__all__ = [
    "CONSTRUCTED",
    "OVERFLOW",
    "GrowthFunction",
    "SiteLattice",
    "LambdaField",
    "LambdaReport",
    "CountingBound",
    "BoxEmbedding",
    "sample_lattice",
    "build_lambda",
    "verify_lambda",
    "counting_bound",
    "embed_obstacle_lattice",
    "lattice_to_csv",
    "lambda_to_csv",
]

CONSTRUCTED = "constructed"
OVERFLOW = "overflow"

_INCREMENT_CHECK_MAX = 10 ** 6


@dataclass(frozen=True)
class GrowthFunction:
    """Level drop H(k) = floor(k^alpha) for a horizontal jump of size k.

    Only the power-law family is accepted: it guarantees H(0)=0, H(1)=1,
    monotonicity, unit increments, and logarithmic lower growth. The
    increment property is re-verified numerically up to 10^6 at
    construction (glibc pow is correctly rounded, so floor is exact away
    from representability edge cases; the sweep would catch a platform
    where that fails).
    """

    alpha: float

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")
        k = np.arange(1, _INCREMENT_CHECK_MAX + 1)
        h = np.floor(k ** self.alpha).astype(np.int64)
        d = np.diff(h)
        if h[0] < 1 or np.any(d < 0) or np.any(d > 1):
            raise ValueError("growth function failed H(k+1) <= H(k)+1 sweep")

    def __call__(self, k):
        k = np.asarray(k)
        if np.any(k < 0):
            raise ValueError("jump size must be nonnegative")
        out = np.floor(np.asarray(k, dtype=float) ** self.alpha).astype(np.int64)
        return out if out.ndim else int(out)

    def plateau_end(self, j):
        """Largest k with H(k) = j, i.e. ceil((j+1)^(1/alpha)) - 1."""
        j = int(j)
        if j < 0:
            raise ValueError("level must be nonnegative")
        r = int(np.ceil((j + 1) ** (1.0 / self.alpha))) - 1
        # float guard: the candidate must straddle the plateau boundary
        while self(r) > j:
            r -= 1
        while self(r + 1) <= j:
            r += 1
        return r


@dataclass(frozen=True)
class SiteLattice:
    n: int
    width: int
    height: int
    open: np.ndarray = field(repr=False)  # (width, height), True = open
    p: float
    seed: int

    def __post_init__(self):
        if self.open.shape != (self.width, self.height):
            raise ValueError("site array shape mismatch")


def sample_lattice(n, width, height, p, seed):
    """iid Bernoulli(p) open states on a width x height window.

    States derive from one shared uniform draw per site, so lattices with
    the same seed and increasing p have pointwise nondecreasing open sets
    (monotone coupling).
    """
    if n != 1:
        raise ValueError("only n=1 windows are implemented")
    if not (0.0 <= p <= 1.0):
        raise ValueError("p must lie in [0, 1]")
    if width < 1 or height < 2:
        raise ValueError("window must be at least 1 x 2")
    rng = np.random.default_rng(np.uint64(seed))
    uniform = rng.random((width, height))
    return SiteLattice(1, width, height, uniform < p, float(p), int(seed))


@dataclass(frozen=True)
class LambdaField:
    lattice: SiteLattice
    H: GrowthFunction
    lam: np.ndarray = field(repr=False)  # per-column surface height
    status: str


def _jump_drops(H, width, height):
    # H values for every jump size that could ever fire in this window:
    # drops larger than the top level are never taken
    m_cap = min(width - 1, H.plateau_end(height - 1) + 1)
    if m_cap < 1:
        return np.zeros(0, dtype=np.int64)
    return np.asarray(H(np.arange(1, m_cap + 1)), dtype=np.int64)


def build_lambda(lattice, H):
    """Maximal admissible heights by monotone closure; lambda = 1 + height.

    Status is OVERFLOW when some path touches the top level: the surface
    openness certificate needs one spare level above every maximum, so
    such windows certify nothing and callers should retry taller.
    """
    closed = ~lattice.open
    reach = lattice_reach(closed, _jump_drops(H, lattice.width, lattice.height))
    if np.any(reach[:, -1]):
        status = OVERFLOW
    else:
        status = CONSTRUCTED
    h_max = (lattice.height - 1) - np.argmax(reach[:, ::-1], axis=1)
    return LambdaField(lattice, H, (h_max + 1).astype(np.int64), status)


@dataclass(frozen=True)
class LambdaReport:
    passed: bool
    failure: str | None
    pairs_checked: int
    sites_checked: int


def verify_lambda(fld, margin=0):
    """Exhaustive certificate audit of a constructed surface.

    Checks, over all column pairs at least `margin` away from the window
    edges, the growth bound |lambda(x)-lambda(y)| <= H(|x-y|), and at
    every audited column the openness of (x, lambda(x)). Margin 0 is
    sound here (see module docstring); the parameter exists to study
    boundary sensitivity.
    """
    if fld.status != CONSTRUCTED:
        raise ValueError("verify_lambda needs a constructed field")
    lat = fld.lattice
    lo, hi = margin, lat.width - margin
    lam = fld.lam[lo:hi]
    w = lam.size
    if w < 1:
        raise ValueError("margin leaves no columns to audit")
    pairs = 0
    for m in range(1, w):
        gap = np.abs(lam[m:] - lam[:-m])
        pairs += gap.size
        worst = int(np.max(gap))
        if worst > fld.H(m):
            x = lo + int(np.argmax(gap))
            return LambdaReport(
                False,
                f"growth bound failed at columns {x} and {x + m}: "
                f"|{fld.lam[x + m]} - {fld.lam[x]}| > H({m}) = {fld.H(m)}",
                pairs,
                0,
            )
    cols = np.arange(lo, hi)
    open_at_lambda = lat.open[cols, fld.lam[cols]]
    if not np.all(open_at_lambda):
        x = int(np.argmin(open_at_lambda))
        return LambdaReport(
            False, f"site at column {cols[x]} height {fld.lam[cols[x]]} is closed",
            pairs, int(np.sum(open_at_lambda)),
        )
    return LambdaReport(True, None, pairs, w)


# --- counting side -----------------------------------------------------------

@dataclass(frozen=True)
class CountingBound:
    H: GrowthFunction
    n: int
    gamma: float
    C: float
    K: float
    K_tilde: float
    beta: float
    q_max: float

    def expected_paths(self, q, h, N):
        """Bound on the expected count of admissible paths from a column at
        distance N to height h: (2q)^h (q beta)^H(N) / (1 - q beta)."""
        if not 0.0 < q * self.beta < 1.0:
            raise ValueError("q beta must lie in (0, 1)")
        return (
            (2.0 * q) ** h
            * (q * self.beta) ** int(self.H(N))
            / (1.0 - q * self.beta)
        )


def _ball_counts(n, k_max):
    # lattice point counts of L1 balls/spheres in Z^n by convolution
    sphere = np.zeros(k_max + 1, dtype=np.int64)
    sphere[0] = 1
    if k_max >= 1:
        sphere[1:] = 2
    for _ in range(n - 1):
        line = np.zeros(k_max + 1, dtype=np.int64)
        line[0] = 1
        if k_max >= 1:
            line[1:] = 2
        sphere = np.convolve(sphere, line)[: k_max + 1]
    return np.cumsum(sphere), sphere


def counting_bound(H, n, j_max=60):
    """Constants of the expected-path bound and a sufficient threshold.

    (C, gamma) minimize beta over a gamma grid subject to R(j) <= C e^(gamma j)
    for all j <= j_max, with R the exact plateau ends of H. K and K_tilde
    come from L1 ball/sphere counts (their k-normalized ratios decrease, so
    the scan maximum is global). q_max is the largest q, found by bisection,
    whose grouped path-count series is certified convergent by a geometric
    majorant.
    """
    if n < 1 or n > 3:
        raise ValueError("counting constants implemented for n in {1, 2, 3}")
    j = np.arange(j_max + 1)
    R = np.array([H.plateau_end(int(v)) for v in j], dtype=float)

    gammas = np.linspace(1e-3, 3.0, 1200)
    # C(gamma) = max_j R(j) e^(-gamma j); pick gamma minimizing beta
    Cs = np.max(R[None, :] * np.exp(-np.outer(gammas, j)), axis=1)
    k_max = 10_000
    ball, sphere = _ball_counts(n, k_max)
    ks = np.arange(1, k_max + 1, dtype=float)
    ratios_ball = ball[1:] / ks ** n
    ratios_sphere = sphere[1:] / np.maximum(ks ** (n - 1), 1.0)
    if ratios_ball[-1] > ratios_ball[-2] or ratios_sphere[-1] > ratios_sphere[-2]:
        raise ValueError("ball-count ratio not settled within scan range")
    K = float(np.max(ratios_ball))
    K_tilde = float(np.max(ratios_sphere))

    betas = 16.0 * np.exp(gammas * n) * np.maximum(2.0 * K * Cs ** n, 1.0)
    i = int(np.argmin(betas))
    gamma, C, beta = float(gammas[i]), float(Cs[i]), float(betas[i])

    def certified(q):
        x = q * beta
        if not (x < 1.0 and 2.0 * q < 1.0):
            return False
        # grouped over H-plateaus the series is dominated head-to-tail by
        # m_j = K~ (j+1)^(n/alpha) x^j (since R(j) <= (j+1)^(1/alpha)),
        # whose term ratio x ((j+2)/(j+1))^(n/alpha) decreases in j; a
        # ratio below 1 at j_max certifies a geometric tail
        tail_ratio = x * ((j_max + 2.0) / (j_max + 1.0)) ** (n / H.alpha)
        return tail_ratio < 1.0

    lo, hi = 0.0, min(0.5, 1.0 / beta)
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if certified(mid):
            lo = mid
        else:
            hi = mid
    q_max = lo
    if q_max <= 0.0:
        raise ValueError(f"no certified q within j_max={j_max}")
    return CountingBound(H, n, gamma, C, K, K_tilde, beta, q_max)


# --- obstacle embedding ------------------------------------------------------

@dataclass(frozen=True)
class BoxEmbedding:
    lattice: SiteLattice
    # per-site index into the field's x-sorted arrays; -1 where closed
    obstacle_slot: np.ndarray = field(repr=False)
    k_lo: int  # box index of lattice column 0


def embed_obstacle_lattice(fld, layout, q):
    """Site lattice over the box grid: (k, j) is open iff the shrunken box
    cell Q~_(k,j) holds an obstacle of strength >= q.

    Cells are [c_k - l/2 + r1, c_k + l/2 - r1] x [r1 + j h, r1 + (j+1) h)
    with centers c_k = origin + k (l+d), area V = (l - 2 r1) h; as disjoint
    regions of a Poisson field their states are iid with open probability
    1 - exp(-intensity V P{f >= q}). Each open site records one qualifying
    obstacle (leftmost, then lowest).
    """
    l, d, h, r1 = layout.l, layout.d, layout.h, layout.r1
    win = fld.window
    pitch = l + d
    k_lo = int(np.ceil((win.x_lo + l / 2.0 - layout.origin) / pitch))
    k_hi = int(np.floor((win.x_hi - l / 2.0 - layout.origin) / pitch))
    height = int(np.floor((win.y_hi - r1) / h))
    if k_hi - k_lo + 1 < 1 or height < 2:
        raise ValueError("layout does not fit inside the obstacle window")
    if win.y_lo > r1:
        raise ValueError("window floor sits above the first box row")
    width = k_hi - k_lo + 1

    open_ = np.zeros((width, height), dtype=bool)
    chosen = np.full((width, height), -1, dtype=np.int64)
    p_open = 1.0 - np.exp(
        -fld.intensity * (l - 2.0 * r1) * h * fld.strength_law.tail_prob(q)
    )
    for idx in np.lexsort((fld._ys, fld._xs)):
        if fld._ss[idx] < q:
            continue
        x, y = fld._xs[idx], fld._ys[idx]
        k = int(np.round((x - layout.origin) / pitch))
        if not (k_lo <= k <= k_hi):
            continue
        if abs(x - layout.origin - k * pitch) > l / 2.0 - r1:
            continue
        j = int(np.floor((y - r1) / h))
        if not (0 <= j < height):
            continue
        if chosen[k - k_lo, j] < 0:
            chosen[k - k_lo, j] = idx
            open_[k - k_lo, j] = True
    lattice = SiteLattice(1, width, height, open_, float(p_open), fld.seed)
    return BoxEmbedding(lattice, chosen, k_lo)


def lattice_to_csv(lattice):
    buf = io.StringIO()
    buf.write("k,j,open\n")
    for k in range(lattice.width):
        for j in range(lattice.height):
            buf.write(f"{k},{j},{int(lattice.open[k, j])}\n")
    return buf.getvalue()


def lambda_to_csv(fld):
    buf = io.StringIO()
    buf.write("k,lambda\n")
    for k in range(fld.lattice.width):
        buf.write(f"{k},{fld.lam[k]}\n")
    return buf.getvalue()
