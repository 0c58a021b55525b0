"""Core geometry: balls, dyadic cubes, grid approximations, normalization.

All index structures in this package operate on instances normalized into
the unit cube.  Cube identities are exact integers (level plus integer grid
coordinates) so tree topology never depends on floating-point rounding;
only distances are computed in floats.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

__all__ = [
    "InputError",
    "InternalInvariantError",
    "Ball",
    "NormalizedInstance",
    "CanonicalCube",
    "LiftedPoint",
    "max_level_for_dim",
    "dist_point_ball",
    "normalize",
    "grid_cell",
    "grid_level_for_diameter",
    "grid_approx",
    "enumerate_grid_cells_ball",
    "enumerate_grid_cells_box",
    "lift",
    "product_norm",
    "packing_constant",
]


class InputError(ValueError):
    """Caller-supplied data violates a documented precondition."""


class InternalInvariantError(RuntimeError):
    """A structural guarantee the library maintains internally was broken."""


def max_level_for_dim(d: int) -> int:
    # Deepest grid level whose interleaved integer keys fit in 63 bits and
    # whose coordinates stay exactly representable as doubles.
    return min(52, 63 // d)


@dataclass(frozen=True)
class Ball:
    """A closed ball: center in R^d and a nonnegative radius.

    Points are radius-0 balls.
    """

    center: tuple[float, ...]
    radius: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))
        object.__setattr__(self, "radius", float(self.radius))
        if self.radius < 0:
            raise InputError(f"ball radius must be nonnegative, got {self.radius}")
        if not all(math.isfinite(c) for c in self.center) or not math.isfinite(self.radius):
            raise InputError("ball coordinates must be finite")

    @property
    def dimension(self) -> int:
        return len(self.center)

    @property
    def diameter(self) -> float:
        return 2.0 * self.radius


@dataclass(frozen=True)
class CanonicalCube:
    """A dyadic cell of the unit-cube hierarchy: side 2^-level, integer corner.

    The cube as a point set for point location is half-open per coordinate,
    [c*s, (c+1)*s); intersection tests against other sets use the closed body.
    """

    level: int
    coords: tuple[int, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "coords", tuple(int(c) for c in self.coords))
        if self.level < 0:
            raise InputError("cube level must be nonnegative")
        top = 1 << self.level
        if any(c < 0 or c >= top for c in self.coords):
            raise InputError(f"cube coords {self.coords} out of range at level {self.level}")

    @property
    def dimension(self) -> int:
        return len(self.coords)

    @property
    def side(self) -> float:
        return 2.0 ** (-self.level)

    @property
    def diameter(self) -> float:
        return self.side * math.sqrt(len(self.coords))

    @property
    def low(self) -> tuple[float, ...]:
        s = self.side
        return tuple(c * s for c in self.coords)

    @property
    def high(self) -> tuple[float, ...]:
        s = self.side
        return tuple((c + 1) * s for c in self.coords)

    @property
    def center(self) -> tuple[float, ...]:
        s = self.side
        return tuple((c + 0.5) * s for c in self.coords)

    def contains_point(self, p: Sequence[float]) -> bool:
        # Half-open membership keeps point location unambiguous on grid lines.
        s = self.side
        return all(c * s <= x < (c + 1) * s for c, x in zip(self.coords, p))

    def contains_cube(self, other: "CanonicalCube") -> bool:
        if other.level < self.level:
            return False
        shift = other.level - self.level
        return all((oc >> shift) == c for oc, c in zip(other.coords, self.coords))

    def parent(self) -> "CanonicalCube":
        if self.level == 0:
            raise InputError("root cube has no parent")
        return CanonicalCube(self.level - 1, tuple(c >> 1 for c in self.coords))

    def ancestor(self, level: int) -> "CanonicalCube":
        if level > self.level:
            raise InputError("ancestor level must not exceed cube level")
        shift = self.level - level
        return CanonicalCube(level, tuple(c >> shift for c in self.coords))

    def min_dist_to_point(self, p: Sequence[float]) -> float:
        # Distance from p to the closed cube body.
        s = self.side
        acc = 0.0
        for c, x in zip(self.coords, p):
            lo = c * s
            hi = lo + s
            if x < lo:
                acc += (lo - x) ** 2
            elif x > hi:
                acc += (x - hi) ** 2
        return math.sqrt(acc)

    def max_dist_to_point(self, p: Sequence[float]) -> float:
        s = self.side
        acc = 0.0
        for c, x in zip(self.coords, p):
            lo = c * s
            hi = lo + s
            acc += max(abs(x - lo), abs(x - hi)) ** 2
        return math.sqrt(acc)

    def intersects_ball(self, b: Ball) -> bool:
        # Closed-body semantics: tangency counts as intersection.
        return self.min_dist_to_point(b.center) <= b.radius

    def intersects_box(self, lo: Sequence[float], hi: Sequence[float]) -> bool:
        s = self.side
        for c, a, b in zip(self.coords, lo, hi):
            if (c + 1) * s < a or c * s > b:
                return False
        return True


@dataclass(frozen=True)
class LiftedPoint:
    """A ball (c, r) viewed as the point (c, r) in R^{d+1}; points lift with last = 0."""

    spatial: tuple[float, ...]
    last: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "spatial", tuple(float(c) for c in self.spatial))
        object.__setattr__(self, "last", float(self.last))
        if self.last < 0:
            raise InputError("lifted last coordinate must be nonnegative")

    def as_array(self) -> np.ndarray:
        return np.array(self.spatial + (self.last,), dtype=np.float64)


@dataclass(frozen=True)
class NormalizedInstance:
    """A ball set scaled into [1/2 - delta, 1/2 + delta]^d with delta = eps/4.

    transform maps original coordinates x to scale * x + offset; radii map to
    scale * r.  The same scale in every axis keeps distance order intact.
    """

    balls: tuple[Ball, ...]
    scale: float
    offset: tuple[float, ...]
    epsilon_floor: float
    dimension: int
    c_d: int

    def to_unit(self, p: Sequence[float]) -> tuple[float, ...]:
        return tuple(self.scale * float(x) + o for x, o in zip(p, self.offset))

    def to_original(self, p: Sequence[float]) -> tuple[float, ...]:
        return tuple((float(x) - o) / self.scale for x, o in zip(p, self.offset))

    def ball_to_original(self, b: Ball) -> Ball:
        return Ball(self.to_original(b.center), b.radius / self.scale)

    def centers_array(self) -> np.ndarray:
        return np.array([b.center for b in self.balls], dtype=np.float64)

    def radii_array(self) -> np.ndarray:
        return np.array([b.radius for b in self.balls], dtype=np.float64)


def dist_point_ball(q: Sequence[float], b: Ball) -> float:
    """Distance from q to the closed ball b: max(||q - c|| - r, 0)."""
    if len(q) != b.dimension:
        raise InputError(f"dimension mismatch: point has {len(q)}, ball has {b.dimension}")
    gap = math.dist(tuple(q), b.center) - b.radius
    return gap if gap > 0.0 else 0.0


def dist_points_balls(q: Sequence[float], centers: np.ndarray, radii: np.ndarray) -> np.ndarray:
    """Vectorized dist_point_ball against every ball in (centers, radii)."""
    diff = centers - np.asarray(q, dtype=np.float64)
    return np.maximum(np.sqrt(np.einsum("ij,ij->i", diff, diff)) - radii, 0.0)


def normalize(balls: Sequence[Ball], eps: float) -> NormalizedInstance:
    """Scale and translate a ball set into [1/2 - delta, 1/2 + delta]^d, delta = eps/4.

    The affine map is uniform across axes, so it preserves the order of all
    pairwise distances; the inverse recovers original units.
    """
    if len(balls) == 0:
        raise InputError("normalize requires at least one ball")
    if not (0.0 < eps < 1.0):
        raise InputError(f"eps must lie in (0, 1), got {eps}")
    d = balls[0].dimension
    if d < 1:
        raise InputError("dimension must be at least 1")
    for b in balls:
        if b.dimension != d:
            raise InputError("all balls must share one dimension")

    centers = np.array([b.center for b in balls], dtype=np.float64)
    radii = np.array([b.radius for b in balls], dtype=np.float64)
    if not (np.all(np.isfinite(centers)) and np.all(np.isfinite(radii))):
        raise InputError("normalize requires finite coordinates")

    lo = (centers - radii[:, None]).min(axis=0)
    hi = (centers + radii[:, None]).max(axis=0)
    extent = float((hi - lo).max())
    delta = eps / 4.0
    if extent > 0.0:
        scale = 2.0 * delta / extent
    else:
        # Degenerate spread (single ball or coincident extents): any scale is
        # order-preserving, so keep scale 1 and just center the set.
        scale = 1.0
    mid = (lo + hi) / 2.0
    offset = tuple(0.5 - scale * m for m in mid)

    norm_balls = tuple(
        Ball(tuple(scale * c + o for c, o in zip(b.center, offset)), scale * b.radius)
        for b in balls
    )
    inst = NormalizedInstance(
        balls=norm_balls,
        scale=scale,
        offset=offset,
        epsilon_floor=eps,
        dimension=d,
        c_d=packing_constant(d),
    )
    pad = 1e-9
    for b in norm_balls:
        for c in b.center:
            if not (0.5 - delta - b.radius - pad <= c <= 0.5 + delta + b.radius + pad):
                raise InternalInvariantError("normalized ball escaped the target cube")
    return inst


def grid_cell(width_level: int, p: Sequence[float]) -> CanonicalCube:
    """The canonical cube of the given level containing p, floor semantics."""
    if width_level < 0:
        raise InputError("grid level must be nonnegative")
    if any(not (0.0 <= x < 1.0) for x in p):
        raise InputError(f"point {tuple(p)} outside [0,1)^d")
    top = 1 << width_level
    return CanonicalCube(width_level, tuple(min(int(x * top), top - 1) for x in p))


def floor_log2(y: float) -> int:
    if y <= 0.0 or not math.isfinite(y):
        raise InputError(f"floor_log2 requires a positive finite value, got {y}")
    m, e = math.frexp(y)  # y = m * 2**e with m in [0.5, 1)
    return e - 1


def grid_level_for_diameter(diam: float, delta: float, dim: int) -> tuple[int, bool]:
    """Level of the grid with side 2^floor(log2(delta * diam / sqrt(dim))).

    Returns (level, clamped).  clamped is True when the natural level exceeds
    the maximum exact level for this dimension; callers that rely on the
    cell-diameter bound must fall back to exact work in that case.
    """
    side_target = delta * diam / math.sqrt(dim)
    raw = -floor_log2(side_target)
    max_level = max_level_for_dim(dim)
    level = min(max(raw, 0), max_level)
    return level, raw > max_level


def enumerate_grid_cells_ball(
    center: Sequence[float], radius: float, level: int
) -> np.ndarray:
    """Integer coords (m, d) of level-`level` cells whose closed body meets the ball.

    The ball is clipped to [0,1]^d; cells outside the unit cube do not exist.
    """
    d = len(center)
    top = 1 << level
    side = 2.0 ** (-level)
    ranges = []
    for j in range(d):
        lo = max(int(math.floor((center[j] - radius) * top)) - 1, 0)
        hi = min(int(math.floor((center[j] + radius) * top)) + 1, top - 1)
        if lo > hi:
            return np.empty((0, d), dtype=np.int64)
        ranges.append(np.arange(lo, hi + 1, dtype=np.int64))
    grids = np.meshgrid(*ranges, indexing="ij")
    coords = np.stack([g.ravel() for g in grids], axis=1)
    # Exact closed-body filter: distance from the center to each cell box.
    lo_f = coords * side
    hi_f = lo_f + side
    c = np.asarray(center, dtype=np.float64)
    gap = np.maximum(lo_f - c, 0.0) + np.maximum(c - hi_f, 0.0)
    keep = np.einsum("ij,ij->i", gap, gap) <= radius * radius
    return coords[keep]


def enumerate_grid_cells_box(
    lo: Sequence[float], hi: Sequence[float], level: int
) -> np.ndarray:
    """Integer coords (m, d) of level-`level` cells meeting the closed box [lo, hi]."""
    d = len(lo)
    top = 1 << level
    ranges = []
    for j in range(d):
        a = max(int(math.floor(lo[j] * top)) - 1, 0)
        b = min(int(math.floor(hi[j] * top)) + 1, top - 1)
        if a > b:
            return np.empty((0, d), dtype=np.int64)
        cells = np.arange(a, b + 1, dtype=np.int64)
        side = 2.0 ** (-level)
        keep = (cells * side <= hi[j]) & ((cells + 1) * side >= lo[j])
        cells = cells[keep]
        if cells.size == 0:
            return np.empty((0, d), dtype=np.int64)
        ranges.append(cells)
    grids = np.meshgrid(*ranges, indexing="ij")
    return np.stack([g.ravel() for g in grids], axis=1)


def _extent_of(X) -> tuple[Sequence[float], float, str]:
    """(reference point, diameter, kind) for a ball, cube, or (lo, hi) box."""
    if isinstance(X, Ball):
        return X.center, X.diameter, "ball"
    if isinstance(X, CanonicalCube):
        return X.center, X.diameter, "cube"
    if isinstance(X, tuple) and len(X) == 2:
        lo = np.asarray(X[0], dtype=np.float64)
        hi = np.asarray(X[1], dtype=np.float64)
        return tuple((lo + hi) / 2.0), float(np.linalg.norm(hi - lo)), "box"
    raise InputError(f"grid_approx accepts Ball, CanonicalCube, or (lo, hi) box, got {type(X)!r}")


def grid_approx(X, delta: float) -> set[CanonicalCube]:
    """Canonical cells of side 2^floor(log2(delta*diam(X)/sqrt(d))) meeting X.

    Each returned cell has diameter at most delta * diam(X) unless the level
    clamp triggered (tiny X); diam(X) = 0 returns the single deepest cell
    containing the point so that radius-0 balls remain registrable.
    """
    if not (0.0 < delta <= 1.0):
        raise InputError(f"delta must lie in (0, 1], got {delta}")
    ref, diam, kind = _extent_of(X)
    d = len(ref)
    if diam == 0.0:
        p = tuple(min(max(x, 0.0), math.nextafter(1.0, 0.0)) for x in ref)
        return {grid_cell(max_level_for_dim(d), p)}
    level, _ = grid_level_for_diameter(diam, delta, d)
    if kind == "ball":
        coords = enumerate_grid_cells_ball(ref, X.radius, level)
    elif kind == "cube":
        coords = enumerate_grid_cells_box(X.low, X.high, level)
    else:
        coords = enumerate_grid_cells_box(X[0], X[1], level)
    return {CanonicalCube(level, tuple(int(c) for c in row)) for row in coords}


def lift(b: Ball) -> LiftedPoint:
    """A ball (c, r) as the lifted point (c, r); lift a point p as Ball(p, 0)."""
    return LiftedPoint(b.center, b.radius)


def product_norm(u: Sequence[float]) -> float:
    """||u||_+ = ||u_{1..d}||_2 + |u_{d+1}| on a lifted difference vector."""
    arr = np.asarray(u, dtype=np.float64)
    if arr.ndim != 1 or arr.size < 2:
        raise InputError("product_norm expects a flat vector with at least 2 entries")
    return float(np.linalg.norm(arr[:-1]) + abs(arr[-1]))


def product_dist(a: LiftedPoint, b: LiftedPoint) -> float:
    return math.dist(a.spatial, b.spatial) + abs(a.last - b.last)


def packing_constant(d: int, override: int | None = None) -> int:
    """Upper bound on disjoint balls of radius >= r meeting a radius-r ball.

    Defaults to 3^d, always valid; callers may assert a tighter constant.
    """
    if d < 1:
        raise InputError("dimension must be at least 1")
    if override is not None:
        if override < 2:
            raise InputError(f"packing constant override must be at least 2, got {override}")
        return int(override)
    return 3**d
