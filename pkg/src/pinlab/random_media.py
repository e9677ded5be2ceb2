"""Random obstacle fields: Poisson sampling, force evaluation, serialization.

An obstacle at (x_k, y_k) with strength f_k exerts the force
f_k * phi(x - x_k, y - y_k), where phi is a fixed compactly supported bump:
identically 1 on the max-norm ball of radius r0, identically 0 outside the
Euclidean ball of radius r1, and a radial polynomial smoothstep in between.
The field is the sum over a Poisson cloud of such bumps above the line
y = r1, so the strip |y| < r1 is always obstacle-free.
"""

import io
from dataclasses import dataclass, field

import numpy as np

from .kernels import force_sum, smoothstep_coeffs, smoothstep_radial

__all__ = [
    "BumpProfile",
    "Obstacle",
    "ObstacleField",
    "PointMass",
    "UniformLaw",
    "Window",
    "sample_obstacles",
    "eval_obstacle_force",
    "eval_force_profile",
    "strong_obstacles",
    "field_to_text",
    "field_from_text",
]


@dataclass(frozen=True)
class BumpProfile:
    """Radial obstacle shape phi; see the module docstring."""

    r0: float
    r1: float
    order: int = 7

    def __post_init__(self):
        if not (self.r0 > 0.0 and self.r1 > np.sqrt(2.0) * self.r0):
            raise ValueError("need r1 > sqrt(2)*r0 > 0")
        if self.order % 2 == 0 or self.order < 7:
            raise ValueError("smoothstep order must be odd and >= 7")

    @property
    def inner(self):
        # plateau extends to the Euclidean radius covering the max-norm ball
        return np.sqrt(2.0) * self.r0

    @property
    def coeffs(self):
        return smoothstep_coeffs(self.order)

    def radial(self, rho):
        return smoothstep_radial(rho, self.inner, self.r1, self.coeffs)

    def __call__(self, dx, dy):
        return self.radial(np.hypot(np.asarray(dx, float), np.asarray(dy, float)))


@dataclass(frozen=True)
class Obstacle:
    x: float
    y: float
    strength: float
    id: int

    def __post_init__(self):
        if self.strength <= 0.0:
            raise ValueError("obstacle strength must be positive")


@dataclass(frozen=True)
class Window:
    x_lo: float
    x_hi: float
    y_lo: float
    y_hi: float

    def __post_init__(self):
        if not (self.x_hi > self.x_lo and self.y_hi > self.y_lo):
            raise ValueError("window must be nondegenerate")

    @property
    def area(self):
        return (self.x_hi - self.x_lo) * (self.y_hi - self.y_lo)


@dataclass(frozen=True)
class PointMass:
    """All strengths equal q0."""

    q0: float

    def __post_init__(self):
        if self.q0 <= 0.0:
            raise ValueError("point mass must be positive")

    def sample(self, rng, n):
        return np.full(n, self.q0)

    def tail_prob(self, q):
        """P{strength >= q}."""
        return 1.0 if self.q0 >= q else 0.0


@dataclass(frozen=True)
class UniformLaw:
    lo: float
    hi: float

    def __post_init__(self):
        if not (0.0 < self.lo <= self.hi):
            raise ValueError("uniform law needs 0 < lo <= hi")

    def sample(self, rng, n):
        return rng.uniform(self.lo, self.hi, size=n)

    def tail_prob(self, q):
        """P{strength >= q}."""
        if self.hi == self.lo:
            return 1.0 if self.hi >= q else 0.0
        return float(np.clip((self.hi - q) / (self.hi - self.lo), 0.0, 1.0))


@dataclass(frozen=True)
class ObstacleField:
    obstacles: tuple
    bump: BumpProfile
    intensity: float
    window: Window
    seed: int
    strength_law: object
    # sorted-by-x arrays backing the evaluation kernels
    _xs: np.ndarray = field(repr=False, default=None)
    _ys: np.ndarray = field(repr=False, default=None)
    _ss: np.ndarray = field(repr=False, default=None)

    def __post_init__(self):
        if self.window.y_lo < self.bump.r1:
            raise ValueError("window must lie above y = r1")
        for ob in self.obstacles:
            if not (
                self.window.x_lo <= ob.x <= self.window.x_hi
                and self.window.y_lo <= ob.y <= self.window.y_hi
            ):
                raise ValueError("obstacle center outside the window")
        xs = np.array([ob.x for ob in self.obstacles])
        order = np.argsort(xs, kind="stable")
        object.__setattr__(self, "_xs", xs[order])
        object.__setattr__(
            self, "_ys", np.array([ob.y for ob in self.obstacles])[order]
        )
        object.__setattr__(
            self, "_ss", np.array([ob.strength for ob in self.obstacles])[order]
        )

    def __len__(self):
        return len(self.obstacles)


def sample_obstacles(intensity, window, strength_law, bump, seed):
    """Poisson cloud in the window; deterministic in (parameters, seed)."""
    if intensity < 0.0:
        raise ValueError("intensity must be nonnegative")
    if window.y_lo < bump.r1:
        raise ValueError("window must lie above y = r1")
    rng = np.random.default_rng(np.uint64(seed))
    count = int(rng.poisson(intensity * window.area))
    xs = rng.uniform(window.x_lo, window.x_hi, size=count)
    ys = rng.uniform(window.y_lo, window.y_hi, size=count)
    strengths = strength_law.sample(rng, count)
    obstacles = tuple(
        Obstacle(float(x), float(y), float(s), i)
        for i, (x, y, s) in enumerate(zip(xs, ys, strengths))
    )
    return ObstacleField(obstacles, bump, intensity, window, seed, strength_law)


def eval_obstacle_force(fld, x, y):
    """Total force at a single point; always >= 0."""
    out, _ = force_sum(
        np.array([float(x)]),
        np.array([float(y)]),
        fld._xs,
        fld._ys,
        fld._ss,
        fld.bump.inner,
        fld.bump.r1,
        fld.bump.coeffs,
    )
    return float(out[0])


def eval_force_profile(fld, xs, ys, want_dy=False):
    """Vectorized force along a curve (xs strictly sorted ascending).

    Returns force, or (force, d force/dy) with want_dy=True; this is the
    hot path used by the interface evolution at every time step.
    """
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    force, dforce = force_sum(
        xs, ys, fld._xs, fld._ys, fld._ss,
        fld.bump.inner, fld.bump.r1, fld.bump.coeffs, want_dy=want_dy,
    )
    if want_dy:
        return force, dforce
    return force


def strong_obstacles(fld, q):
    """Obstacles with strength >= q, original order and ids preserved."""
    if q <= 0.0:
        raise ValueError("threshold must be positive")
    return [ob for ob in fld.obstacles if ob.strength >= q]


# --- serialization ---------------------------------------------------------

def field_to_text(fld):
    buf = io.StringIO()
    buf.write("# pinlab obstacle field v1\n")
    buf.write(f"# intensity {fld.intensity!r}\n")
    w = fld.window
    buf.write(f"# window {w.x_lo!r} {w.x_hi!r} {w.y_lo!r} {w.y_hi!r}\n")
    buf.write(f"# seed {fld.seed}\n")
    buf.write(f"# bump {fld.bump.r0!r} {fld.bump.r1!r} {fld.bump.order}\n")
    law = fld.strength_law
    if isinstance(law, PointMass):
        buf.write(f"# strength_law point {law.q0!r}\n")
    elif isinstance(law, UniformLaw):
        buf.write(f"# strength_law uniform {law.lo!r} {law.hi!r}\n")
    else:
        raise ValueError(f"cannot serialize strength law {law!r}")
    for ob in fld.obstacles:
        buf.write(f"{ob.x:.17g} {ob.y:.17g} {ob.strength:.17g}\n")
    return buf.getvalue()


def field_from_text(text):
    header = {}
    rows = []
    for line in text.splitlines():
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            parts = line[1:].split()
            if parts and parts[0] in (
                "intensity", "window", "seed", "bump", "strength_law"
            ):
                header[parts[0]] = parts[1:]
            continue
        rows.append([float(tok) for tok in line.split()])
    try:
        intensity = float(header["intensity"][0])
        window = Window(*(float(v) for v in header["window"]))
        seed = int(header["seed"][0])
        r0, r1, order = header["bump"]
        bump = BumpProfile(float(r0), float(r1), int(order))
        law_kind = header["strength_law"][0]
    except KeyError as missing:
        raise ValueError(f"missing header field {missing}") from None
    if law_kind == "point":
        law = PointMass(float(header["strength_law"][1]))
    elif law_kind == "uniform":
        law = UniformLaw(
            float(header["strength_law"][1]), float(header["strength_law"][2])
        )
    else:
        raise ValueError(f"unknown strength law {law_kind!r}")
    obstacles = tuple(
        Obstacle(x, y, s, i) for i, (x, y, s) in enumerate(rows)
    )
    return ObstacleField(obstacles, bump, intensity, window, seed, law)
