"""Planar primitives shared by the simulation: points, segments, windows and
seeded random streams."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

# Relative tolerance used when deciding whether a clipped piece is a point.
_CLIP_EPS = 1e-12


class Point(NamedTuple):
    x: float
    y: float


def _check_finite(*values: float) -> None:
    for v in values:
        if not math.isfinite(v):
            raise ValueError(f"non-finite coordinate {v!r}")


def point(x: float, y: float) -> Point:
    _check_finite(x, y)
    return Point(float(x), float(y))


@dataclass(frozen=True)
class Segment:
    a: Point
    b: Point

    def __post_init__(self):
        _check_finite(self.a.x, self.a.y, self.b.x, self.b.y)
        if self.a == self.b:
            raise ValueError("degenerate segment")

    @property
    def length(self) -> float:
        return math.hypot(self.b.x - self.a.x, self.b.y - self.a.y)

    def at(self, arc: float) -> Point:
        """Point at distance ``arc`` from ``a`` along the segment."""
        t = arc / self.length
        return Point(self.a.x + t * (self.b.x - self.a.x),
                     self.a.y + t * (self.b.y - self.a.y))

    def contains(self, q: Point, tol: float = 1e-9) -> bool:
        ax, ay = self.a
        bx, by = self.b
        dx, dy = bx - ax, by - ay
        L2 = dx * dx + dy * dy
        t = ((q.x - ax) * dx + (q.y - ay) * dy) / L2
        if t < -tol or t > 1 + tol:
            return False
        px, py = ax + t * dx, ay + t * dy
        return math.hypot(q.x - px, q.y - py) <= tol * max(1.0, math.sqrt(L2))


@dataclass(frozen=True)
class Window:
    min: Point
    max: Point

    def __post_init__(self):
        _check_finite(self.min.x, self.min.y, self.max.x, self.max.y)
        if not (self.min.x < self.max.x and self.min.y < self.max.y):
            raise ValueError(f"invalid window {self.min} .. {self.max}")

    @classmethod
    def from_bounds(cls, x0: float, y0: float, x1: float, y1: float) -> "Window":
        return cls(Point(float(x0), float(y0)), Point(float(x1), float(y1)))

    @property
    def width(self) -> float:
        return self.max.x - self.min.x

    @property
    def height(self) -> float:
        return self.max.y - self.min.y

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def center(self) -> Point:
        return Point(0.5 * (self.min.x + self.max.x), 0.5 * (self.min.y + self.max.y))

    @property
    def bounds(self) -> tuple[float, float, float, float]:
        return (self.min.x, self.min.y, self.max.x, self.max.y)

    def corners(self) -> np.ndarray:
        x0, y0, x1, y1 = self.bounds
        return np.array([[x0, y0], [x1, y0], [x1, y1], [x0, y1]])

    def contains(self, q: Point, tol: float = 0.0) -> bool:
        return (self.min.x - tol <= q.x <= self.max.x + tol
                and self.min.y - tol <= q.y <= self.max.y + tol)

    def contains_xy(self, xy: np.ndarray, tol: float = 0.0) -> np.ndarray:
        """Vectorised closed-window membership for an (n, 2) array."""
        xy = np.asarray(xy, dtype=float).reshape(-1, 2)
        return ((xy[:, 0] >= self.min.x - tol) & (xy[:, 0] <= self.max.x + tol)
                & (xy[:, 1] >= self.min.y - tol) & (xy[:, 1] <= self.max.y + tol))

    def contains_window(self, other: "Window") -> bool:
        return (self.min.x <= other.min.x and self.min.y <= other.min.y
                and other.max.x <= self.max.x and other.max.y <= self.max.y)

    def eroded(self, margin: float) -> "Window":
        """Inner window at distance ``margin`` from every side."""
        if margin < 0:
            raise ValueError("margin must be non-negative")
        return Window.from_bounds(self.min.x + margin, self.min.y + margin,
                                  self.max.x - margin, self.max.y - margin)

    def dilated(self, margin: float) -> "Window":
        return Window.from_bounds(self.min.x - margin, self.min.y - margin,
                                  self.max.x + margin, self.max.y + margin)

    def scaled(self, c: float) -> "Window":
        return Window.from_bounds(*(c * v for v in self.bounds))


def cube(center: Point, side: float) -> Window:
    """Axis-aligned square of side ``side`` centred at ``center``."""
    if not side > 0:
        raise ValueError("cube side must be positive")
    h = 0.5 * side
    return Window.from_bounds(center.x - h, center.y - h, center.x + h, center.y + h)


def clip_segments(a: np.ndarray, b: np.ndarray, w: Window):
    """Liang-Barsky clipping of many segments at once.

    Returns ``(keep, a_clipped, b_clipped, t0, t1)`` where ``keep`` flags the
    segments whose intersection with ``w`` has positive length and ``t0``,
    ``t1`` are the parameters of the clipped endpoints along ``a -> b``.
    """
    a = np.asarray(a, dtype=float).reshape(-1, 2)
    b = np.asarray(b, dtype=float).reshape(-1, 2)
    d = b - a
    t0 = np.zeros(len(a))
    t1 = np.ones(len(a))
    ok = np.ones(len(a), dtype=bool)
    x0, y0, x1, y1 = w.bounds
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        for p, q in ((-d[:, 0], a[:, 0] - x0), (d[:, 0], x1 - a[:, 0]),
                     (-d[:, 1], a[:, 1] - y0), (d[:, 1], y1 - a[:, 1])):
            parallel = p == 0
            ok &= ~(parallel & (q < 0))
            r = q / p
            entering = p < 0
            leaving = p > 0
            t0 = np.where(entering, np.maximum(t0, r), t0)
            t1 = np.where(leaving, np.minimum(t1, r), t1)
    length = np.hypot(d[:, 0], d[:, 1])
    ok &= (t1 - t0) * length > _CLIP_EPS * np.maximum(1.0, length)
    ac = np.where((t0 <= 0)[:, None], a, a + t0[:, None] * d)
    bc = np.where((t1 >= 1)[:, None], b, a + t1[:, None] * d)
    # snap endpoints that were moved onto the boundary exactly
    for arr, t in ((ac, t0), (bc, t1)):
        moved = (t > 0) & (t < 1)
        arr[:, 0] = np.where(moved, np.clip(arr[:, 0], x0, x1), arr[:, 0])
        arr[:, 1] = np.where(moved, np.clip(arr[:, 1], y0, y1), arr[:, 1])
    return ok, ac, bc, t0, t1


def clip_segment(s: Segment, w: Window) -> Optional[Segment]:
    """Closed part of ``s`` inside ``w``; ``None`` if empty or a single point."""
    keep, ac, bc, _, _ = clip_segments(np.array([s.a]), np.array([s.b]), w)
    if not keep[0]:
        return None
    a = Point(float(ac[0, 0]), float(ac[0, 1]))
    b = Point(float(bc[0, 0]), float(bc[0, 1]))
    if a == b:
        return None
    return Segment(a, b)


@dataclass(frozen=True)
class RngStream:
    """Replayable random stream keyed by ``(master_seed, stream_id)``.

    Sub-streams (``child``) extend the spawn key, so each stage of a trial
    draws from its own independent sequence.
    """

    master_seed: int
    stream_id: int
    path: tuple[int, ...] = ()

    def __post_init__(self):
        if not (0 <= self.master_seed < 2**64 and 0 <= self.stream_id < 2**64):
            raise ValueError("master_seed and stream_id must be 64-bit unsigned integers")

    def seed_sequence(self) -> np.random.SeedSequence:
        return np.random.SeedSequence(self.master_seed,
                                      spawn_key=(self.stream_id, *self.path))

    def generator(self) -> np.random.Generator:
        return np.random.Generator(np.random.PCG64(self.seed_sequence()))

    def child(self, key: int) -> "RngStream":
        return RngStream(self.master_seed, self.stream_id, (*self.path, int(key)))


def as_generator(rng) -> np.random.Generator:
    """Accept an RngStream, a numpy Generator, or an int seed."""
    if isinstance(rng, RngStream):
        return rng.generator()
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)
