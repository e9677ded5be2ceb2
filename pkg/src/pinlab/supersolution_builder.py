"""Stationary supersolution assembly over a pinned obstacle selection.

The construction stacks three layers.  A periodic cell profile v rides on
every selected obstacle; the pointwise minimum of the shifted copies
(``build_u_flat``) is a supersolution between obstacles because every switch
between copies is a concave kink.  Mollifying at a radius below a quarter of
the obstacle core turns it into a classical one (``build_smooth``) whose
forcing floor g_smooth stays dominated by the true obstacle force, since the
floor's support was inset far enough to survive the smearing.  The percolation
surface heights enter through a mollified staircase (``build_u_step``) whose
curvature and nonlocal tail are budgeted by the box scalings
(``choose_params``).

``compose_and_verify`` periodizes all three layers over a window that is
commensurate with both the box pitch and the cell period, so every shifted
profile copy is exactly periodic there and the spectral operator on the
verification grid is exact for the composed candidate.  The reported residual

    r(x) = A u(x) - f(x, u(x)) + F*

is then a genuine certificate for the periodized medium up to the stated
tolerance: r <= 0 everywhere means the interface cannot advance past u under
the driving force F*.
"""

import functools
import io
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize_scalar

from .flat_percolation import (
    CONSTRUCTED,
    GrowthFunction,
    build_lambda,
    counting_bound,
    embed_obstacle_lattice,
    verify_lambda,
)
from .frac_operators import (
    FractionalOrder,
    GridFunction,
    Mollifier,
    NumericsError,
    PeriodicGrid,
    apply_spectral,
)
from .kernels import force_sum
from .periodic_cell import build_v_profile, linf_bound, make_cell_params
from .random_media import BumpProfile, PointMass, Window, sample_obstacles
from .special import zeta_real

__all__ = [
    "BoxLayout",
    "ScalingParams",
    "PinnedSelection",
    "PlateauForce",
    "ResidualReport",
    "SupersolutionBundle",
    "step_constant",
    "choose_params",
    "select_pinned",
    "build_u_flat",
    "intersection_gaps",
    "build_g_flat",
    "build_smooth",
    "eval_staircase",
    "build_u_step",
    "pinning_intensity",
    "plan_medium",
    "compose_and_verify",
    "bundle_to_csv",
    "bundle_summary",
]

# verification grid resolution: points per cell period 2a
_POINTS_PER_PERIOD = 2 ** 14


@functools.lru_cache(maxsize=64)
def _mollifier(radius):
    return Mollifier(radius)


def _fold_period(t, half_period):
    # reduce to [-half_period, half_period)
    return np.mod(np.asarray(t, dtype=float) + half_period, 2.0 * half_period) - half_period


@functools.lru_cache(maxsize=1)
def step_constant():
    """Curvature constant of the mollified staircase: 8 sup|eta_1'|.

    A height-J jump mollified at radius r has second derivative J * eta_r',
    whose sup is J sup|eta_1'| / r^2.  Staircase jumps are at most 2h, the
    radius is d/2, and neighbouring jump supports never overlap (edges sit
    l + d apart, beyond the support width d), so the staircase satisfies
    ||u_step''|| <= C0 h / d^2 with C0 = 8 sup|eta_1'|.
    """
    eta = Mollifier(1.0)
    res = minimize_scalar(
        lambda t: -abs(float(eta.derivative(t))),
        bounds=(0.0, 1.0),
        method="bounded",
        options={"xatol": 1e-10},
    )
    return 8.0 * abs(float(eta.derivative(res.x)))


# ---------------------------------------------------------------------------
# layout and scalings
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BoxLayout:
    """Equispaced pinning boxes Q_k = [c_k - l/2, c_k + l/2], c_k = origin + k(l+d).

    The gap equals the box width (d = l); shrinking each box by the obstacle
    radius r1 leaves the cells of area (l - 2 r1) h that the Poisson counts
    live on.
    """

    l: float
    d: float
    h: float
    r1: float
    origin: float = 0.0

    def __post_init__(self):
        if not self.r1 > 0.0:
            raise ValueError("r1 > 0 violated")
        if not self.l > 2.0 * self.r1:
            raise ValueError("l > 2 r1 violated")
        if self.d != self.l:
            raise ValueError("d = l violated")
        if not self.h > 0.0:
            raise ValueError("h > 0 violated")

    @property
    def pitch(self):
        return self.l + self.d

    @property
    def cell_volume(self):
        return (self.l - 2.0 * self.r1) * self.h

    def center(self, k):
        return self.origin + np.asarray(k, dtype=float) * self.pitch

    def box_index(self, x):
        off = (np.asarray(x, dtype=float) - self.origin) / self.pitch
        idx = np.rint(off).astype(np.int64)
        return idx if np.ndim(x) else int(idx)


@dataclass(frozen=True)
class ScalingParams:
    """Frozen output of ``choose_params``; every concluding inequality holds."""

    s: FractionalOrder
    r0: float
    r1: float
    q: float
    V: float
    F2: float
    C_a: float
    C_delta: float
    C_infinity: float
    C0: float
    C1: float
    C2: float
    alpha: float
    l: float
    d: float
    a: float
    b: float
    delta: float
    h: float
    epsilon: float
    F_star: float

    def cell(self):
        """Cell geometry implied by these scalings."""
        return make_cell_params(self.a, self.b, self.delta, self.F2, self.s)

    def layout(self, origin=0.0):
        return BoxLayout(self.l, self.d, self.h, self.r1, origin)


def _conclude_below(tag, lhs_name, lhs, rhs_name, rhs):
    if not lhs < rhs:
        raise RuntimeError(
            f"scaling conclusion {tag} failed: {lhs_name} = {lhs:.9e} "
            f"is not below {rhs_name} = {rhs:.9e}"
        )


def _conclude_at_least(tag, lhs_name, lhs, rhs_name, rhs):
    if not lhs >= rhs:
        raise RuntimeError(
            f"scaling conclusion {tag} failed: {lhs_name} = {lhs:.9e} "
            f"is below {rhs_name} = {rhs:.9e}"
        )


def choose_params(
    s,
    r0,
    r1,
    q,
    V,
    F2,
    C_a=6.0,
    C_delta=0.5,
    *,
    alpha=0.5,
    a_factor=1.5,
    l_override=None,
    l_margin=1.05,
    points_per_period=_POINTS_PER_PERIOD,
):
    """Box, cell and force scalings that make the composed candidate work.

    The box width l is the binding scale.  It must clear every lower bound
    below (kink spacing, the staircase budget against both the force gap
    q - F2 and the cell trough depth, and the profile sup bound); everything
    else (a, b, delta, h, epsilon, F*) then follows in closed form.  All
    concluding inequalities are re-verified numerically on the way out, so a
    returned object is usable as-is; a failure raises naming the inequality.

    l_override pins l explicitly (it still must clear every lower bound);
    a_factor widens the cell period from its 3l/2 default toward the C_a l
    ceiling.  Smaller a gives a deeper trough floor and hence a larger F*,
    which is why 3/2 is the default.
    """
    order = s if isinstance(s, FractionalOrder) else FractionalOrder(s)
    ss = order.s
    if not order.in_pinning_range:
        raise ValueError("s in [1/2, 1) violated")
    if not r0 > 0.0:
        raise ValueError("r0 > 0 violated")
    if not r1 > math.sqrt(2.0) * r0:
        raise ValueError("r1 > sqrt(2) r0 violated")
    if not 0.0 < F2 < q:
        raise ValueError("0 < F2 < q violated")
    if not V > 0.0:
        raise ValueError("V > 0 violated")
    if not C_a > 5.0:
        raise ValueError("C_a > 5 violated")
    if not 0.0 < C_delta < 1.0:
        raise ValueError("0 < C_delta < 1 violated")
    if not 0.0 < alpha < 1.0:
        raise ValueError("0 < alpha < 1 violated")
    if not alpha < 2.0 * ss:
        raise ValueError("alpha < 2s violated")
    if not 1.5 <= a_factor <= C_a:
        raise ValueError("3/2 <= a_factor <= C_a violated")
    if not l_margin > 1.0:
        raise ValueError("l_margin > 1 violated")
    points_per_period = int(points_per_period)
    if points_per_period < 1024 or points_per_period % 2:
        raise ValueError("points_per_period must be even and at least 1024")

    # the zeta-form profile constant diverges at s = 1/2, where the log-form
    # sup bound replaces it
    c_inf = (
        2.0 * zeta_real(2.0 * ss) / np.pi ** (2.0 * ss) if ss > 0.5 else math.inf
    )
    c0 = step_constant()
    c1 = 3.0 ** (2.0 - 2.0 * ss) / (2.0 - 2.0 * ss) * c0
    c2 = 12.0 / (2.0 * ss - alpha) * 3.0 ** (2.0 * ss - alpha) / 2.0 ** alpha
    c12 = c1 + c2

    c_rho = None
    if ss > 0.5:
        lower = (
            4.0 * r1,
            (c12 * V / (r1 * (q - F2))) ** (1.0 / (2.0 * ss)),
            (12.0 * c12 * V * r0) ** (1.0 / (2.0 * ss)),
            (
                1.0
                + 2.0 * F2 * r0 * r1
                + 12.0 * F2 * c12 * V * c_inf * C_a ** (2.0 * ss)
            )
            / (F2 * r0),
            (c_inf * (2.0 / 3.0) ** (2.0 * ss - 1.0) * F2) ** (-1.0 / (2.0 * ss - 1.0)),
        )
    else:
        c_rho = 0.5 * math.sqrt(
            np.pi
            * r0 ** 3
            / (48.0 * np.e ** 2 * (36.0 * F2 / (17.0 * np.pi)) ** 3 * C_a ** 3)
        )
        lower = (
            c12 * V / (r1 * (q - F2)),
            (2.0 * V * c12 / (F2 * c_rho)) ** 2 + 4.0 * r1,
            12.0 * c12 * C_a * V / (F2 * r0) + 2.0 * r1,
        )

    l = l_margin * max(lower) if l_override is None else float(l_override)
    for bound in lower:
        if not l > bound:
            raise ValueError(
                f"l = {l:.9g} does not clear the lower bound {bound:.9g}"
            )

    d = l
    a = a_factor * l
    if ss > 0.5:
        b = a * r0 / (6.0 * (c_inf * F2 * a ** (2.0 * ss) + r0))
        floor = r0 * F2 / (
            6.0 * (c_inf * C_a ** (2.0 * ss) * F2 * l ** (2.0 * ss) + r0)
        )
    else:
        root = math.sqrt(
            np.pi * r0 ** 3 / (48.0 * np.e ** 2 * (36.0 * F2 / (17.0 * np.pi)) ** 3)
        )
        b = 0.5 * min(root / math.sqrt(a), r0 / 3.0)
        floor = F2 * min(c_rho / l ** 1.5, r0 / (6.0 * C_a * l))
    delta = C_delta * b / 2.0
    h = V / (l - 2.0 * r1)
    f_star = 0.5 * min(q - F2, floor)

    # epsilon: the largest grid multiple strictly inside both core margins
    dx = 2.0 * a / points_per_period
    cap = min(r0 / 4.0, 0.5 * (r0 - (b + delta)))
    k = int(math.floor(cap / dx))
    if k * dx >= cap:
        k -= 1
    if k < 1:
        raise ValueError("grid too coarse to fit a smoothing radius under r0/4")
    epsilon = k * dx

    cell = make_cell_params(a, b, delta, F2, order)
    step_lhs = c12 * V / (l ** (2.0 * ss) * (l - 2.0 * r1))
    sup_v = linf_bound(cell)
    if ss > 0.5:
        _conclude_below("(i)", "rho = b + delta/2", cell.rho, "r0/3", r0 / 3.0)
        _conclude_below("(i)", "r0/3", r0 / 3.0, "a/18", a / 18.0)
        _conclude_below(
            "(ii)", "(C1+C2) V / (l^2s (l-2r1))", step_lhs, "(q-F2)/2", 0.5 * (q - F2)
        )
        _conclude_below(
            "(iii)", "(C1+C2) V / (l^2s (l-2r1))", step_lhs,
            "trough floor / 2", 0.5 * floor,
        )
        _conclude_below("(iv)", "sup|v| bound", sup_v, "r0/2", 0.5 * r0)
        _conclude_at_least("(v)", "F1", cell.F1, "trough floor", floor)
    else:
        _conclude_at_least("(i)", "l", l, "4 r1", 4.0 * r1)
        _conclude_below("(ii)", "rho = b + delta/2", cell.rho, "b + delta", b + delta)
        _conclude_below("(ii)", "b + delta", b + delta, "r0/3", r0 / 3.0)
        _conclude_below("(ii)", "r0/3", r0 / 3.0, "a/18", a / 18.0)
        _conclude_below(
            "(iii)", "(C1+C2) V / (l (l-2r1))", step_lhs, "(q-F2)/2", 0.5 * (q - F2)
        )
        _conclude_below(
            "(iv)", "(C1+C2) V / (l (l-2r1))", step_lhs,
            "F2 min{C_rho/l^3/2, r0/(6 C_a l)} / 2", 0.5 * floor,
        )
        _conclude_below("(v)", "sup|v| bound", sup_v, "r0/2", 0.5 * r0)
        _conclude_at_least("(vi)", "F1", cell.F1, "trough floor", floor)

    return ScalingParams(
        order, float(r0), float(r1), float(q), float(V), float(F2),
        float(C_a), float(C_delta), float(c_inf), float(c0), float(c1), float(c2),
        float(alpha), float(l), float(d), float(a), float(b), float(delta),
        float(h), float(epsilon), float(f_star),
    )


# ---------------------------------------------------------------------------
# pinned selection
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PinnedSelection:
    """One pinning obstacle per box: the owner of the surface cell (k, lambda(k)).

    ``levels`` holds lambda(k), so the raw staircase target over box k is
    levels[k] * h above the floor; ``ys`` are the true obstacle heights inside
    those cells, which the composed staircase anchors to exactly.
    """

    boxes: np.ndarray
    ids: np.ndarray
    xs: np.ndarray = field(repr=False)
    ys: np.ndarray = field(repr=False)
    levels: np.ndarray = field(repr=False)
    strengths: np.ndarray = field(repr=False)
    q: float
    r0: float

    def __post_init__(self):
        for name in ("boxes", "ids", "levels"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=int))
        for name in ("xs", "ys", "strengths"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        n = len(self.boxes)
        for name in ("ids", "xs", "ys", "levels", "strengths"):
            if len(getattr(self, name)) != n:
                raise ValueError("selection arrays must share one length")
        if n > 1 and np.any(np.diff(self.boxes) <= 0):
            raise ValueError("one selection per box, in box order")
        if n > 1 and np.any(np.diff(self.xs) <= 0.0):
            raise ValueError("selection centers must increase with the box index")
        if n and np.any(self.strengths < self.q):
            raise ValueError("selection strength >= q violated")

    def __len__(self):
        return len(self.boxes)


def select_pinned(embedding, surface, fld, layout, q):
    """Pick the recorded obstacle of every surface cell (k, lambda(k)).

    Requires a constructed surface whose openness audit passed: each audited
    cell then holds at least one obstacle of strength >= q, and the embedding
    recorded which one.
    """
    if surface.status != CONSTRUCTED:
        raise ValueError("selection needs a constructed surface")
    lat = surface.lattice
    cols = np.arange(lat.width)
    slots = embedding.obstacle_slot[cols, surface.lam[cols]]
    if np.any(slots < 0):
        k = int(np.argmax(slots < 0))
        raise RuntimeError(
            f"surface cell (column {k}, level {surface.lam[k]}) holds no obstacle; "
            "audit the surface before selecting"
        )
    xs = fld._xs[slots]
    ys = fld._ys[slots]
    strengths = fld._ss[slots]
    order = np.argsort(np.array([ob.x for ob in fld.obstacles]), kind="stable")
    ids = np.array([ob.id for ob in fld.obstacles])[order][slots]
    boxes = embedding.k_lo + cols
    off = np.abs(xs - layout.center(boxes))
    if np.any(off > 0.5 * layout.l - layout.r1 + 1e-12):
        k = int(np.argmax(off))
        raise RuntimeError(
            f"selected obstacle {ids[k]} sits outside its shrunken box {boxes[k]}"
        )
    return PinnedSelection(
        boxes, ids, xs, ys, surface.lam[cols].copy(), strengths,
        float(q), fld.bump.r0,
    )


# ---------------------------------------------------------------------------
# flat minimum of profile copies
# ---------------------------------------------------------------------------

def build_u_flat(selection, cell, layout, *, chunk=1024):
    """Pointwise minimum of the shifted cell profiles, one per selected box.

    Each copy competes only on its own patch [x_i - w, x_i + w] with
    w = l + d/2 <= a, where the profile rises monotonically from its trough,
    so the copy of the nearest obstacle always wins and switches happen at
    obstacle midpoints with concave kinks.  Past the outermost patches the
    nearest profile extends periodically, which keeps the callable total and
    continuous.
    """
    if len(selection) == 0:
        raise ValueError("empty selection")
    p = cell.params
    if not 2.0 * p.a >= layout.d + 2.0 * layout.l:
        raise ValueError("2a >= d + 2l violated")
    w = layout.l + 0.5 * layout.d
    xs = np.array(selection.xs, dtype=float)

    def u_flat(x):
        scalar = np.ndim(x) == 0
        xv = np.atleast_1d(np.asarray(x, dtype=float)).ravel()
        out = np.empty(xv.size)
        for lo in range(0, xv.size, chunk):
            blk = xv[lo:lo + chunk]
            j0 = np.searchsorted(xs, blk - w)
            j1 = np.searchsorted(xs, blk + w)
            best = np.full(blk.size, np.inf)
            for off in range(int(np.max(j1 - j0, initial=0))):
                j = j0 + off
                ok = j < j1
                if not np.any(ok):
                    break
                best[ok] = np.minimum(best[ok], cell.eval_v(blk[ok] - xs[j[ok]]))
            bare = ~np.isfinite(best)
            if np.any(bare):
                ii = np.searchsorted(xs, blk[bare])
                left = np.clip(ii - 1, 0, xs.size - 1)
                right = np.clip(ii, 0, xs.size - 1)
                pick = np.where(
                    np.abs(blk[bare] - xs[left]) <= np.abs(xs[right] - blk[bare]),
                    left,
                    right,
                )
                best[bare] = cell.eval_v(blk[bare] - xs[pick])
            out[lo:lo + chunk] = best
        return float(out[0]) if scalar else out

    return u_flat


def intersection_gaps(selection, cell, layout, xi, *, scan_per_a=4096):
    """Maximal intervals left of xi where the minimum runs strictly below
    the periodic profile of xi's owner.

    These intervals carry the mass of the nonlocal comparison: each is at
    least a cell half-period a wide, and consecutive ones are separated by at
    most a.  The cell profile is even and strictly monotone between trough
    and crest (the monotonicity certificate), so "minimum below copy i0"
    reduces to comparing folded distances, and each boundary crossing is a
    zero of a continuous gap function.  Crossings are seeded by a dense scan
    and bisected to 1e-10 * a; only complete crossing pairs are returned, so
    an interval clipped by the scan edge is dropped.  Identical phase
    alignment (a single obstacle, or spacing in exact cell periods) yields no
    crossings at all.
    """
    if len(selection) == 0:
        raise ValueError("empty selection")
    a = cell.params.a
    w = layout.l + 0.5 * layout.d
    xs = np.array(selection.xs, dtype=float)
    x_lo = xs[0] - w
    if not xi > x_lo:
        return []
    i0 = int(np.argmin(np.abs(xs - xi)))
    pred_tol = 1e-12 * a

    def gap(x):
        x = np.asarray(x, dtype=float)
        ii = np.searchsorted(xs, x)
        left = np.clip(ii - 1, 0, xs.size - 1)
        right = np.clip(ii, 0, xs.size - 1)
        dl = np.abs(x - xs[left])
        dr = np.abs(xs[right] - x)
        near = np.minimum(dl, dr)
        # beyond every patch the nearest copy extends periodically
        folded = np.abs(_fold_period(x - xs[np.where(dl <= dr, left, right)], a))
        owner = np.where(near <= w, near, folded)
        return np.abs(_fold_period(x - xs[i0], a)) - owner - pred_tol

    step = a / scan_per_a
    n = int(np.ceil((xi - x_lo) / step)) + 2
    grid = np.linspace(x_lo, xi, n)
    sign = gap(grid) > 0.0
    flips = np.nonzero(sign[:-1] != sign[1:])[0]
    if flips.size == 0:
        return []
    lo = grid[flips].copy()
    hi = grid[flips + 1].copy()
    state = sign[flips]
    for _ in range(64):
        mid = 0.5 * (lo + hi)
        same = (gap(mid) > 0.0) == state
        lo = np.where(same, mid, lo)
        hi = np.where(same, hi, mid)
        if float(np.max(hi - lo)) < 1e-10 * a:
            break
    cross = 0.5 * (lo + hi)
    first = 1 if sign[0] else 0  # a leading exit closes a clipped interval
    return [
        (float(cross[i]), float(cross[i + 1]))
        for i in range(first, cross.size - 1, 2)
    ]


# ---------------------------------------------------------------------------
# forcing floor and mollification
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PlateauForce:
    """q on [x_i - r0 + 3 eps/2, x_i + r0 - 3 eps/2] around each selected center.

    The inset leaves eps/2 of slack after an eps-mollification, so the
    smoothed floor is supported strictly inside the obstacle cores where the
    true force is at least q.  ``smoothed`` is the exact convolution, a
    difference of kernel CDFs per plateau.
    """

    centers: np.ndarray = field(repr=False)
    half: float
    q: float
    epsilon: float

    def __call__(self, x):
        scalar = np.ndim(x) == 0
        xv = np.atleast_1d(np.asarray(x, dtype=float))
        ii = np.searchsorted(self.centers, xv)
        left = np.clip(ii - 1, 0, self.centers.size - 1)
        right = np.clip(ii, 0, self.centers.size - 1)
        near = np.minimum(np.abs(xv - self.centers[left]),
                          np.abs(self.centers[right] - xv))
        out = np.where(near <= self.half, self.q, 0.0)
        return float(out[0]) if scalar else out

    def smoothed(self, x, period=None):
        """Exact eps-mollification; ``period`` adds wrapped plateau images."""
        scalar = np.ndim(x) == 0
        xv = np.atleast_1d(np.asarray(x, dtype=float))
        cdf = _mollifier(self.epsilon).cdf
        centers = self.centers
        if period is not None:
            centers = np.concatenate(
                [centers - period, centers, centers + period]
            )
        out = np.zeros(xv.size)
        for c in centers:
            m = np.abs(xv - c) < self.half + self.epsilon
            if np.any(m):
                out[m] += self.q * (
                    cdf(xv[m] - (c - self.half)) - cdf(xv[m] - (c + self.half))
                )
        return out if not scalar else float(out[0])


def build_g_flat(selection, layout, q, epsilon):
    """Forcing floor: q on the eps-inset obstacle cores of the selection."""
    if len(selection) == 0:
        raise ValueError("empty selection")
    r0 = selection.r0
    if not q > 0.0:
        raise ValueError("q > 0 violated")
    if not (0.0 < epsilon < r0 / 4.0):
        raise ValueError("0 < epsilon < r0/4 violated")
    if not q <= float(np.min(selection.strengths)):
        raise ValueError("selection strengths must dominate the floor level q")
    off = np.abs(selection.xs - layout.center(selection.boxes))
    if np.any(off > 0.5 * layout.l - layout.r1 + 1e-12):
        raise ValueError("selection centers must sit inside their shrunken boxes")
    half = r0 - 1.5 * epsilon
    xs = np.array(selection.xs, dtype=float)
    if xs.size > 1 and float(np.min(np.diff(xs))) <= 2.0 * half:
        raise ValueError("plateaus overlap; selection spacing below 2 r0")
    return PlateauForce(xs, float(half), float(q), float(epsilon))


def _mollify_band(values, grid, radius):
    # exact convolution of the band-limited interpolant: multiply by the symbol
    freqs = np.fft.rfftfreq(grid.n_points, d=grid.spacing)
    sym = _mollifier(radius).fourier_symbol(freqs)
    return np.fft.irfft(np.fft.rfft(values) * sym, n=grid.n_points)


def build_smooth(u_flat, g_flat, epsilon, grid, x0=0.0):
    """Sample and eps-mollify the flat pair on a periodic grid.

    u_flat must wrap around the grid window (the commensurate torus assembly
    guarantees this; other windows are rejected), so convolving its
    band-limited interpolant against the kernel symbol is exact.  When g_flat
    carries the plateau closed form it is used directly; sampling an indicator
    and convolving on the grid would leave O(dx) edge error, far above the
    certificate tolerance.
    """
    if not isinstance(grid, PeriodicGrid):
        raise TypeError("build_smooth expects a PeriodicGrid")
    if not epsilon > 0.0:
        raise ValueError("epsilon > 0 violated")
    if not epsilon < grid.period / 2.0:
        raise ValueError("epsilon must be below half the grid period")
    x = x0 + grid.points
    u_vals = np.asarray(u_flat(x), dtype=float)
    scale = max(1.0, float(np.max(np.abs(u_vals))))
    if abs(float(u_flat(x0)) - float(u_flat(x0 + grid.period))) > 1e-9 * scale:
        raise ValueError(
            "u_flat does not wrap around this grid; build it on a commensurate window"
        )
    u_smooth = GridFunction(grid, _mollify_band(u_vals, grid, epsilon))
    if hasattr(g_flat, "smoothed"):
        g_vals = np.asarray(g_flat.smoothed(x, period=grid.period), dtype=float)
    else:
        g_vals = _mollify_band(np.asarray(g_flat(x), dtype=float), grid, epsilon)
    return u_smooth, GridFunction(grid, g_vals)


# ---------------------------------------------------------------------------
# percolation staircase
# ---------------------------------------------------------------------------

def eval_staircase(heights, layout, period, x):
    """Mollified periodic staircase: heights[k] on cell k, blended at radius d/2.

    Cells are [origin + (k - 1/2) pitch, origin + (k + 1/2) pitch); the kernel
    CDF saturates exactly outside its support, so the cell partition of unity
    is exact and each plateau value is hit exactly outside the d/2 edge bands,
    in particular on all of Q_k.
    """
    heights = np.asarray(heights, dtype=float)
    n = heights.size
    if n < 1:
        raise ValueError("at least one cell height required")
    pitch = layout.pitch
    if abs(n * pitch - period) > 1e-9 * period:
        raise ValueError("period must equal n_cells * pitch")
    scalar = np.ndim(x) == 0
    xv = np.atleast_1d(np.asarray(x, dtype=float))
    cdf = _mollifier(0.5 * layout.d).cdf
    r = 0.5 * layout.d
    lefts = layout.origin - 0.5 * pitch + pitch * np.arange(n)
    out = np.zeros(xv.size)
    for shift in (-period, 0.0, period):
        for k in range(n):
            lo = lefts[k] + shift
            m = (xv > lo - r) & (xv < lo + pitch + r)
            if np.any(m):
                out[m] += heights[k] * (cdf(xv[m] - lo) - cdf(xv[m] - lo - pitch))
    return out if not scalar else float(out[0])


def build_u_step(surface, layout, *, points_per_box=512):
    """Mollified staircase of the raw surface targets lambda(k) * h.

    The growth premise |lambda(k1) - lambda(k2)| <= 2 |k1 - k2|^alpha is
    checked over all column pairs first; it is what the curvature and tail
    budget of the scalings assumes.  Samples live on the torus of all lattice
    columns, and their spectral second derivative is audited against
    C0 h / d^2.
    """
    lam = np.asarray(surface.lam, dtype=np.int64)
    n = lam.size
    if n < 2:
        raise ValueError("at least two surface columns required")
    alpha = surface.H.alpha
    for m in range(1, n):
        worst = int(np.max(np.abs(lam[m:] - lam[:-m])))
        if worst > 2.0 * m ** alpha:
            raise ValueError(
                f"growth bound violated at lag {m}: |d lambda| = {worst} "
                f"exceeds 2 m^alpha = {2.0 * m ** alpha:.6g}"
            )
    period = n * layout.pitch
    grid = PeriodicGrid(period, int(points_per_box) * n)
    x = layout.origin - 0.5 * layout.pitch + grid.points
    vals = eval_staircase(lam * layout.h, layout, period, x)
    freq = 2.0 * np.pi * np.fft.rfftfreq(grid.n_points, d=grid.spacing)
    curv = np.fft.irfft(np.fft.rfft(vals) * (-(freq ** 2)), n=grid.n_points)
    limit = step_constant() * layout.h / layout.d ** 2
    worst = float(np.max(np.abs(curv)))
    if worst > limit * (1.0 + 1e-6):
        raise NumericsError("staircase curvature exceeds C0 h / d^2", worst, limit)
    return GridFunction(grid, vals)


# ---------------------------------------------------------------------------
# medium planning
# ---------------------------------------------------------------------------

def pinning_intensity(params, strength_law=None, safety=1.1):
    """Smallest Poisson intensity certifying the closed-cell bound, padded.

    A cell of volume V holds a strong obstacle with probability
    1 - exp(-intensity V tail), so keeping the closed probability under the
    admissible-path threshold q_max needs
    intensity >= log(1/q_max) / (V tail).
    """
    law = PointMass(params.q) if strength_law is None else strength_law
    tail = law.tail_prob(params.q)
    if not tail > 0.0:
        raise ValueError("strength law never reaches the pinning threshold q")
    bound = counting_bound(GrowthFunction(params.alpha), 1)
    if not safety >= 1.0:
        raise ValueError("safety factor must be at least 1")
    return safety * math.log(1.0 / bound.q_max) / (params.V * tail)


def plan_medium(params, n_boxes, seed, *, intensity=None, strength_law=None,
                height=24, origin=0.0):
    """Obstacle field and layout on a window commensurate with everything.

    The window spans exactly n_boxes pitches (box columns 0 .. n_boxes - 1)
    and ``height`` surface levels above the floor r1.  n_boxes must make the
    torus length a whole number of cell periods: a multiple of 3 for the
    default a = 3l/2.
    """
    layout = params.layout(origin)
    pitch = layout.pitch
    n_per = n_boxes * pitch / (2.0 * params.a)
    if n_boxes < 2 or abs(n_per - round(n_per)) > 1e-9 or round(n_per) < 1:
        raise ValueError(
            "n_boxes * (l + d) must be a whole positive multiple of the cell period 2a"
        )
    if height < 2:
        raise ValueError("at least 2 surface levels required")
    law = PointMass(params.q) if strength_law is None else strength_law
    rate = pinning_intensity(params, law) if intensity is None else float(intensity)
    window = Window(
        origin - 0.5 * pitch,
        origin + (n_boxes - 0.5) * pitch,
        params.r1,
        params.r1 + height * params.h,
    )
    bump = BumpProfile(params.r0, params.r1)
    return sample_obstacles(rate, window, law, bump, seed), layout


# ---------------------------------------------------------------------------
# composition and verification
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ResidualReport:
    passed: bool
    max_residual: float
    worst_x: float
    tol: float
    corollary_max: float  # max of A u_smooth - g_smooth + min{q - F2, F1}
    step_max: float       # observed max |A u_step|
    step_bound: float     # budgeted staircase bound (C1 + C2) h / l^(2s)
    force_margin: float   # min of f - g_smooth over the floor support
    u_total_min: float
    n_grid: int


@dataclass(frozen=True)
class SupersolutionBundle:
    """Immutable certificate: the composed candidate and its residual audit."""

    params: ScalingParams
    layout: BoxLayout
    selection: PinnedSelection
    cell: object           # FourierProfile of the periodic cell
    surface: object        # LambdaField over the box lattice
    grid: PeriodicGrid
    x0: float              # window edge; absolute x = x0 + grid.points
    u_flat: object         # callable, periodic across the window
    u_flat_grid: GridFunction
    u_smooth: GridFunction
    u_step: GridFunction
    u_total: GridFunction
    g_smooth: GridFunction
    residual: GridFunction
    F_star: float
    seed: int
    verification: ResidualReport


def _flat_min_on_torus(xs, coeffs, n_per, grid, x0, layout):
    """Minimum of the per-obstacle profile copies, synthesized spectrally.

    Each copy is a cosine series on the cell harmonics k * n_per of the
    window, so one phase-shifted inverse FFT per obstacle gives
    machine-accurate samples; each copy then competes only on its own patch,
    wrapped across the seam.
    """
    n = grid.n_points
    dx = grid.spacing
    w = layout.l + 0.5 * layout.d
    out = np.full(n, np.inf)
    modes = np.arange(1, coeffs.size + 1, dtype=np.int64) * n_per
    spec = np.zeros(n // 2 + 1, dtype=complex)
    for xi in xs:
        spec[:] = 0.0
        spec[modes] = (0.5 * n) * coeffs * np.exp(
            -2j * np.pi * modes * ((xi - x0) / grid.period)
        )
        vi = np.fft.irfft(spec, n=n)
        i0 = int(np.ceil((xi - w - x0) / dx))
        i1 = int(np.floor((xi + w - x0) / dx))
        if i1 - i0 + 1 >= n:
            np.minimum(out, vi, out=out)
            continue
        a0 = i0 % n
        a1 = i1 % n + 1
        if a0 < a1:
            np.minimum(out[a0:a1], vi[a0:a1], out=out[a0:a1])
        else:
            np.minimum(out[a0:], vi[a0:], out=out[a0:])
            np.minimum(out[:a1], vi[:a1], out=out[:a1])
    if not np.all(np.isfinite(out)):
        raise RuntimeError("patches fail to cover the torus; selection too sparse")
    return out


def _ghost_selection(selection, n_boxes, period):
    # wrapped copies so the line callable agrees with the torus periodization
    rep = lambda arr: np.concatenate([arr, arr, arr])
    shift = np.repeat(np.array([-1.0, 0.0, 1.0]), len(selection))
    return PinnedSelection(
        np.concatenate([selection.boxes - n_boxes, selection.boxes,
                        selection.boxes + n_boxes]),
        rep(selection.ids),
        rep(selection.xs) + shift * period,
        rep(selection.ys),
        rep(selection.levels),
        rep(selection.strengths),
        selection.q,
        selection.r0,
    )


def _torus_force(fld, x, y, period):
    bump = fld.bump
    gx = np.concatenate([fld._xs - period, fld._xs, fld._xs + period])
    gy = np.tile(fld._ys, 3)
    gs = np.tile(fld._ss, 3)
    keep = (gx >= x[0] - bump.r1) & (gx <= x[-1] + bump.r1)
    out, _ = force_sum(
        x, y, gx[keep], gy[keep], gs[keep], bump.inner, bump.r1, bump.coeffs
    )
    return out


def compose_and_verify(params, fld, seed, *, strict=True,
                       points_per_period=_POINTS_PER_PERIOD):
    """Build the full pinning certificate over fld's window and check it.

    Steps: embed the strong obstacles on the box lattice, build and audit the
    percolation surface (including the wrap pairs, so the growth bound holds
    on the torus), select one obstacle per box, synthesize the flat, smooth
    and staircase layers on a grid the cell period divides exactly, and
    evaluate the residual A u - f(x, u) + F* against the exact obstacle
    force.  The staircase is anchored per box at the selected obstacle
    heights, so u_step(x_i) = y_i exactly.

    ``seed`` tags the bundle for export; the verification itself is
    deterministic.  With strict=True (default) a failed certificate raises;
    otherwise the bundle returns carrying the failed report.
    """
    win = fld.window
    pitch = params.l + params.d
    width = win.x_hi - win.x_lo
    n_boxes = int(round(width / pitch))
    if n_boxes < 2 or abs(n_boxes * pitch - width) > 1e-9 * max(1.0, width):
        raise ValueError(
            "field window does not span a whole number of box pitches; "
            "build the field with plan_medium"
        )
    n_per = n_boxes * pitch / (2.0 * params.a)
    if abs(n_per - round(n_per)) > 1e-9 or round(n_per) < 1:
        raise ValueError(
            "window length is not a whole number of cell periods; "
            "choose n_boxes commensurate with a/l"
        )
    n_per = int(round(n_per))
    if abs(fld.bump.r0 - params.r0) > 1e-12 or abs(fld.bump.r1 - params.r1) > 1e-12:
        raise ValueError("field bump radii disagree with the scalings")
    layout = params.layout(win.x_lo + 0.5 * pitch)

    emb = embed_obstacle_lattice(fld, layout, params.q)
    if emb.k_lo != 0 or emb.lattice.width != n_boxes:
        raise ValueError("embedding does not cover the torus boxes exactly")
    H = GrowthFunction(params.alpha)
    surface = build_lambda(emb.lattice, H)
    if surface.status != CONSTRUCTED:
        raise RuntimeError(
            "percolation overflow: a blocking path reaches the top of the window; "
            "retry with more levels, a higher intensity, or another seed"
        )
    audit = verify_lambda(surface)
    if not audit.passed:
        raise RuntimeError(f"surface audit failed: {audit.failure}")
    lam = surface.lam
    for m in range(1, n_boxes // 2 + 1):
        worst = int(np.max(np.abs(lam - np.roll(lam, m))))
        if worst > H(m):
            raise RuntimeError(
                f"seam growth audit failed at torus lag {m}: "
                f"|d lambda| = {worst} exceeds H({m}) = {H(m)}; retry another seed"
            )

    selection = select_pinned(emb, surface, fld, layout, params.q)
    cellp = params.cell()
    profile = build_v_profile(cellp, points_per_period // 2 - 1)

    grid = PeriodicGrid(n_boxes * pitch, points_per_period * n_per)
    x0 = win.x_lo
    x = x0 + grid.points
    coeffs = profile.coefficients * profile.symbols
    u_flat_vals = _flat_min_on_torus(selection.xs, coeffs, n_per, grid, x0, layout)

    u_smooth_vals = _mollify_band(u_flat_vals, grid, params.epsilon)
    g_flat = build_g_flat(selection, layout, params.q, params.epsilon)
    g_smooth_vals = g_flat.smoothed(x, period=grid.period)
    # per-box anchoring: the staircase plateau of box k is the true obstacle
    # height there, so u_step(x_i) = y_i with the growth premise still met
    u_step_vals = eval_staircase(selection.ys, layout, grid.period, x)
    u_total_vals = u_smooth_vals + u_step_vals

    au_smooth = -apply_spectral(GridFunction(grid, u_smooth_vals), params.s).values
    au_step = -apply_spectral(GridFunction(grid, u_step_vals), params.s).values
    force = _torus_force(fld, x, u_total_vals, grid.period)
    residual_vals = au_smooth + au_step - force + params.F_star

    tol = 1e-3 * params.F_star
    margin = min(params.q - params.F2, cellp.F1)
    corollary = au_smooth - g_smooth_vals + margin
    supp = g_smooth_vals > 1e-15 * params.q
    force_margin = (
        float(np.min(force[supp] - g_smooth_vals[supp])) if np.any(supp) else np.inf
    )
    imax = int(np.argmax(residual_vals))
    u_min = float(np.min(u_total_vals))
    report = ResidualReport(
        passed=bool(
            residual_vals[imax] <= tol
            and force_margin >= -1e-12 * params.q
            and u_min >= 0.0
        ),
        max_residual=float(residual_vals[imax]),
        worst_x=float(x[imax]),
        tol=float(tol),
        corollary_max=float(np.max(corollary)),
        step_max=float(np.max(np.abs(au_step))),
        step_bound=float(
            (params.C1 + params.C2) * params.h / params.l ** (2.0 * params.s.s)
        ),
        force_margin=force_margin,
        u_total_min=u_min,
        n_grid=grid.n_points,
    )
    if strict and not report.passed:
        raise NumericsError(
            f"certification failed: max residual {report.max_residual:.6e} at "
            f"x = {report.worst_x:.9g} (tol {tol:.3e}, force margin "
            f"{force_margin:.3e}, min u {u_min:.3e})",
            report.max_residual,
            tol,
        )

    u_flat_fn = build_u_flat(
        _ghost_selection(selection, n_boxes, grid.period), profile, layout
    )
    return SupersolutionBundle(
        params, layout, selection, profile, surface, grid, float(x0),
        u_flat_fn,
        GridFunction(grid, u_flat_vals),
        GridFunction(grid, u_smooth_vals),
        GridFunction(grid, u_step_vals),
        GridFunction(grid, u_total_vals),
        GridFunction(grid, g_smooth_vals),
        GridFunction(grid, residual_vals),
        params.F_star, int(seed), report,
    )


# ---------------------------------------------------------------------------
# export
# ---------------------------------------------------------------------------

def bundle_to_csv(bundle, max_rows=4096):
    """Strided sample of the composed functions and the residual."""
    n = bundle.grid.n_points
    stride = max(1, n // int(max_rows))
    idx = np.arange(0, n, stride)
    xs = bundle.x0 + bundle.grid.points[idx]
    cols = (
        bundle.u_flat_grid.values, bundle.u_smooth.values,
        bundle.u_step.values, bundle.u_total.values, bundle.residual.values,
    )
    buf = io.StringIO()
    buf.write("x,u_flat,u_smooth,u_step,u_total,residual\n")
    for i, xv in zip(idx, xs):
        buf.write(f"{xv:.17g}")
        for col in cols:
            buf.write(f",{col[i]:.17g}")
        buf.write("\n")
    return buf.getvalue()


def bundle_summary(bundle):
    """Structured text record of the certificate and its parameters."""
    p = bundle.params
    rep = bundle.verification
    lines = [
        "# pinlab supersolution bundle v1",
        f"passed {rep.passed}",
        f"F_star {p.F_star!r}",
        f"max_residual {rep.max_residual!r}",
        f"tol {rep.tol!r}",
        f"worst_x {rep.worst_x!r}",
        f"corollary_max {rep.corollary_max!r}",
        f"step_max {rep.step_max!r}",
        f"step_bound {rep.step_bound!r}",
        f"force_margin {rep.force_margin!r}",
        f"u_total_min {rep.u_total_min!r}",
        f"s {p.s.s!r}",
        f"alpha {p.alpha!r}",
        f"q {p.q!r}",
        f"F2 {p.F2!r}",
        f"V {p.V!r}",
        f"r0 {p.r0!r}",
        f"r1 {p.r1!r}",
        f"l {p.l!r}",
        f"d {p.d!r}",
        f"a {p.a!r}",
        f"b {p.b!r}",
        f"delta {p.delta!r}",
        f"h {p.h!r}",
        f"epsilon {p.epsilon!r}",
        f"n_boxes {len(bundle.selection)}",
        f"n_grid {rep.n_grid}",
        f"seed {bundle.seed}",
    ]
    return "\n".join(lines) + "\n"
