"""Poisson seeds and the planar Poisson-Voronoi street system built from them.

The Voronoi diagram is obtained from the Delaunay triangulation (Qhull):
each Delaunay edge shared by two triangles yields the street joining their
circumcentres, each hull edge yields a ray.  Everything is clipped to the
tessellation window.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from typing import Optional, TextIO

import numpy as np
from scipy.spatial import Delaunay, QhullError

from .geometry import Point, RngStream, Segment, Window, as_generator, clip_segments

DIM = 2

# planar constants: street intensity and mean street length
GAMMA_COEF = 2.0        # gamma = 2 sqrt(lambda_S)
KAPPA = 2.0 / 3.0       # lbar = kappa / sqrt(lambda_S)


def street_intensity(lambda_S: float) -> float:
    return GAMMA_COEF * math.sqrt(lambda_S)


def mean_street_length(lambda_S: float) -> float:
    return KAPPA / math.sqrt(lambda_S)


@dataclass(frozen=True)
class SeedSet:
    window: Window
    intensity: float
    points: np.ndarray
    stream: Optional[RngStream] = None

    def __len__(self):
        return len(self.points)

    def scaled(self, c: float) -> "SeedSet":
        return SeedSet(self.window.scaled(c), self.intensity / (c * c),
                       c * self.points, self.stream)


def seed_set(points, window: Window, intensity: float = float("nan")) -> SeedSet:
    """Wrap hand-placed seeds (used for fixtures and small examples)."""
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    if not window.contains_xy(pts).all():
        raise ValueError("seeds must lie inside the window")
    return SeedSet(window, intensity, pts)


def sample_seeds(w: Window, lambda_S: float, rng) -> SeedSet:
    """Homogeneous Poisson process of intensity ``lambda_S`` in ``w``."""
    if lambda_S < 0 or not math.isfinite(lambda_S):
        raise ValueError("seed intensity must be a finite non-negative number")
    gen = as_generator(rng)
    n = gen.poisson(lambda_S * w.area)
    u = gen.random((n, 2))
    pts = np.column_stack([w.min.x + u[:, 0] * w.width, w.min.y + u[:, 1] * w.height])
    return SeedSet(w, float(lambda_S), pts, rng if isinstance(rng, RngStream) else None)


@dataclass
class Tessellation:
    """Voronoi street system clipped to ``window``.

    Edges are stored column-wise.  ``edge_va``/``edge_vb`` hold the vertex id
    of each endpoint or -1 where the endpoint is a point on the window
    boundary; ``edge_seeds`` are the two seeds whose bisector carries the edge.
    """

    seeds: SeedSet
    window: Window
    vertices: np.ndarray
    vertex_interior: np.ndarray
    edge_a: np.ndarray
    edge_b: np.ndarray
    edge_va: np.ndarray
    edge_vb: np.ndarray
    edge_length: np.ndarray
    edge_clipped: np.ndarray
    edge_seeds: np.ndarray
    dim: int = DIM
    _incidence: Optional[tuple[np.ndarray, np.ndarray]] = field(default=None, repr=False)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_edges(self) -> int:
        return len(self.edge_length)

    @property
    def total_length(self) -> float:
        return float(self.edge_length.sum())

    def _csr(self):
        if self._incidence is None:
            ends = np.concatenate([self.edge_va, self.edge_vb])
            eids = np.concatenate([np.arange(self.n_edges)] * 2)
            m = ends >= 0
            ends, eids = ends[m], eids[m]
            order = np.lexsort((eids, ends))
            ptr = np.zeros(self.n_vertices + 1, dtype=np.int64)
            np.add.at(ptr, ends + 1, 1)
            self._incidence = (np.cumsum(ptr), eids[order])
        return self._incidence

    def incident_edges(self, v: int) -> np.ndarray:
        ptr, idx = self._csr()
        return idx[ptr[v]:ptr[v + 1]]

    def degrees(self) -> np.ndarray:
        ptr, _ = self._csr()
        return np.diff(ptr)

    def segment(self, e: int) -> Segment:
        return Segment(Point(*self.edge_a[e]), Point(*self.edge_b[e]))

    def edge_points(self, e: np.ndarray, arc: np.ndarray) -> np.ndarray:
        """Positions at distance ``arc`` from endpoint a along edges ``e``."""
        e = np.asarray(e)
        t = np.asarray(arc, dtype=float) / self.edge_length[e]
        return self.edge_a[e] + t[:, None] * (self.edge_b[e] - self.edge_a[e])

    def full_edges(self) -> np.ndarray:
        """Ids of streets lying entirely in the window (both ends crossroads)."""
        return np.flatnonzero(~self.edge_clipped)


class _DSU:
    """Minimal union-find over array indices, used to merge cocircular triangles."""

    def __init__(self, n):
        self.parent = list(range(n))

    def find(self, i):
        root = i
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[i] != root:
            self.parent[i], i = root, self.parent[i]
        return root

    def union(self, i, j):
        ri, rj = self.find(i), self.find(j)
        if ri != rj:
            self.parent[max(ri, rj)] = min(ri, rj)


def _empty(seeds: SeedSet, window: Window) -> Tessellation:
    z2 = np.zeros((0, 2))
    zi = np.zeros(0, dtype=np.int64)
    return Tessellation(seeds, window, z2, np.zeros(0, bool), z2, z2.copy(), zi, zi.copy(),
                        np.zeros(0), np.zeros(0, bool), np.zeros((0, 2), np.int64))


def _far_length(origin: np.ndarray, window: Window) -> np.ndarray:
    c = np.array(window.center)
    diag = math.hypot(window.width, window.height)
    return np.hypot(*(origin - c).T) + 2.0 * diag + 1.0


def _is_collinear(pts: np.ndarray) -> bool:
    if len(pts) <= 2:
        return True
    centred = pts - pts.mean(axis=0)
    s = np.linalg.svd(centred, compute_uv=False)
    return s[1] <= 1e-12 * max(s[0], 1e-300)


def _strip_tessellation(seeds: SeedSet, pts: np.ndarray, idx: np.ndarray,
                        window: Window) -> Tessellation:
    """All seeds on one line: cells are parallel strips, edges have no vertices."""
    u = pts[-1] - pts[0] if len(pts) > 1 else np.array([1.0, 0.0])
    u = u / np.hypot(*u)
    order = np.argsort(pts @ u)
    p, q = pts[order[:-1]], pts[order[1:]]
    mid = 0.5 * (p + q)
    normal = np.array([-u[1], u[0]])
    far = _far_length(mid, window)[:, None]
    keep, ac, bc, _, _ = clip_segments(mid - far * normal, mid + far * normal, window)
    a, b = ac[keep], bc[keep]
    sd = np.column_stack([idx[order[:-1]], idx[order[1:]]])[keep]
    n = len(a)
    neg = -np.ones(n, dtype=np.int64)
    return Tessellation(seeds, window, np.zeros((0, 2)), np.zeros(0, bool), a, b, neg, neg.copy(),
                        np.hypot(*(b - a).T), np.ones(n, bool), sd)


def build_tessellation(seeds: SeedSet, window: Optional[Window] = None) -> Tessellation:
    """Voronoi street system of ``seeds`` clipped to ``window``.

    ``window`` defaults to the seed window; a smaller window is how callers
    sample seeds with a guard zone and observe only the interior.
    """
    window = seeds.window if window is None else window
    if len(seeds.points) == 0:
        raise ValueError("no seeds")
    pts, first = np.unique(seeds.points, axis=0, return_index=True)
    if len(pts) == 1:
        return _empty(seeds, window)
    if _is_collinear(pts):
        return _strip_tessellation(seeds, pts, first, window)
    try:
        tri = Delaunay(pts)
    except QhullError:
        return _strip_tessellation(seeds, pts, first, window)

    simp = tri.simplices
    nbr = tri.neighbors
    P = pts[simp]                                   # (T, 3, 2)
    ax, ay = P[:, 0, 0], P[:, 0, 1]
    bx, by = P[:, 1, 0] - ax, P[:, 1, 1] - ay
    cx, cy = P[:, 2, 0] - ax, P[:, 2, 1] - ay
    d = 2.0 * (bx * cy - by * cx)
    b2, c2 = bx * bx + by * by, cx * cx + cy * cy
    with np.errstate(divide="ignore", invalid="ignore"):
        cc = np.column_stack([ax + (cy * b2 - by * c2) / d, ay + (bx * c2 - cx * b2) / d])
    flat = ~np.isfinite(cc).all(axis=1)
    if flat.any():
        # zero-area slivers only arise from exactly collinear hull points
        cc[flat] = P[flat].mean(axis=1)

    T = len(simp)
    t_idx = np.repeat(np.arange(T), 3)
    k_idx = np.tile(np.arange(3), T)
    nb = nbr[t_idx, k_idx]
    s0 = simp[t_idx, (k_idx + 1) % 3]
    s1 = simp[t_idx, (k_idx + 2) % 3]
    s_opp = simp[t_idx, k_idx]

    inner = nb > t_idx
    hull = nb == -1

    # interior Delaunay edges: street between the two circumcentres
    it, jt = t_idx[inner], nb[inner]
    ia, ib = cc[it], cc[jt]
    scale = max(window.width, window.height, np.ptp(pts, axis=0).max())
    tiny = np.hypot(*(ib - ia).T) <= 1e-11 * scale
    dsu = None
    if tiny.any():
        dsu = _DSU(T)
        for a_, b_ in zip(it[tiny], jt[tiny]):
            dsu.union(int(a_), int(b_))
        root = np.array([dsu.find(i) for i in range(T)])
    else:
        root = np.arange(T)
    keep_inner = ~tiny
    it, jt = root[it[keep_inner]], root[jt[keep_inner]]
    ia, ib = cc[it], cc[jt]
    inner_seeds = np.column_stack([s0[inner][keep_inner], s1[inner][keep_inner]])

    # hull edges: ray from the circumcentre, perpendicular to the edge, outward
    ht = root[t_idx[hull]]
    hp, hq, ho = pts[s0[hull]], pts[s1[hull]], pts[s_opp[hull]]
    dvec = hq - hp
    normal = np.column_stack([dvec[:, 1], -dvec[:, 0]])
    sign = np.sign(np.einsum("ij,ij->i", normal, ho - hp))
    normal = -np.where(sign == 0, 1.0, sign)[:, None] * normal
    normal /= np.hypot(*normal.T)[:, None]
    ha = cc[ht]
    hb = ha + _far_length(ha, window)[:, None] * normal
    hull_seeds = np.column_stack([s0[hull], s1[hull]])

    A = np.concatenate([ia, ha])
    B = np.concatenate([ib, hb])
    ta = np.concatenate([it, ht])
    tb = np.concatenate([jt, -np.ones(len(ht), dtype=np.int64)])
    sd = first[np.concatenate([inner_seeds, hull_seeds])]

    keep, ac, bc, t0, t1 = clip_segments(A, B, window)
    ac, bc, ta, tb, sd = ac[keep], bc[keep], ta[keep], tb[keep], sd[keep]
    a_is_v = t0[keep] <= 0.0
    b_is_v = (t1[keep] >= 1.0) & (tb >= 0)
    # restore exact circumcentre coordinates at vertex endpoints
    ac[a_is_v] = cc[ta[a_is_v]]
    bc[b_is_v] = cc[tb[b_is_v]]

    used = np.unique(np.concatenate([ta[a_is_v], tb[b_is_v]]))
    vid = -np.ones(T, dtype=np.int64)
    vid[used] = np.arange(len(used))
    va = np.where(a_is_v, vid[ta], -1)
    vb = np.where(b_is_v, vid[np.maximum(tb, 0)], -1)
    clipped = (va < 0) | (vb < 0)
    vertices = cc[used]

    interior = np.ones(len(used), dtype=bool)
    for ends in (va, vb):
        m = clipped & (ends >= 0)
        interior[ends[m]] = False
    length = np.hypot(*(bc - ac).T)
    return Tessellation(seeds, window, vertices, interior, ac, bc, va, vb,
                        length, clipped, sd)


@dataclass(frozen=True)
class TessellationStats:
    gamma_hat: float
    lbar_hat: float
    edge_count: int
    vertex_count: int
    core_window: Window


def _strictly_inside(w: Window, xy: np.ndarray) -> np.ndarray:
    x0, y0, x1, y1 = w.bounds
    return (xy[:, 0] > x0) & (xy[:, 0] < x1) & (xy[:, 1] > y0) & (xy[:, 1] < y1)


def compute_stats(t: Tessellation, margin: float, lbar_rule: str = "endpoints") -> TessellationStats:
    """Street-length intensity and mean street length, boundary-corrected.

    ``gamma_hat`` is the street length inside the eroded core window divided
    by its area.  ``lbar_hat`` averages the lengths of full (unclipped)
    streets with both endpoints strictly inside the core; ``lbar_rule="midpoint"``
    selects streets by their midpoint instead, which removes the slight bias
    towards short streets at the cost of reaching ``margin`` further out.
    """
    if margin < 0:
        raise ValueError("margin must be non-negative")
    if lbar_rule not in ("endpoints", "midpoint"):
        raise ValueError(f"unknown lbar_rule {lbar_rule!r}")
    try:
        core = t.window.eroded(margin)
    except ValueError:
        raise ValueError("core window is empty") from None
    keep, ac, bc, _, _ = clip_segments(t.edge_a, t.edge_b, core)
    inside_len = np.hypot(*(bc - ac)[keep].T).sum()
    gamma_hat = float(inside_len / core.area)

    sel = ~t.edge_clipped
    if lbar_rule == "midpoint":
        sel &= core.contains_xy(0.5 * (t.edge_a + t.edge_b))
    else:
        sel &= _strictly_inside(core, t.edge_a) & _strictly_inside(core, t.edge_b)
    lbar_hat = float(t.edge_length[sel].mean()) if sel.any() else float("nan")
    n_vert = int(core.contains_xy(t.vertices).sum()) if t.n_vertices else 0
    return TessellationStats(gamma_hat, lbar_hat, int(sel.sum()), n_vert, core)


# -- text format -------------------------------------------------------------

FORMAT_HEADER = "# losperc tessellation v1"


def _f(x: float) -> str:
    return repr(float(x))


def dump_tessellation(t: Tessellation, fh: TextIO) -> None:
    """Line-oriented text dump.

    ``window x0 y0 x1 y1`` / ``intensity l`` / ``stream seed id path...`` header,
    then ``seed i x y``, ``vertex i x y interior`` and
    ``edge i va vb ax ay bx by clipped s0 s1`` lines (``-`` for a boundary end).
    """
    fh.write(FORMAT_HEADER + "\n")
    fh.write("window " + " ".join(_f(v) for v in t.window.bounds) + "\n")
    fh.write("seed_window " + " ".join(_f(v) for v in t.seeds.window.bounds) + "\n")
    fh.write(f"intensity {_f(t.seeds.intensity)}\n")
    s = t.seeds.stream
    if s is not None:
        fh.write(f"stream {s.master_seed} {s.stream_id} {' '.join(map(str, s.path))}".rstrip() + "\n")
    for i, (x, y) in enumerate(t.seeds.points):
        fh.write(f"seed {i} {_f(x)} {_f(y)}\n")
    for i, ((x, y), inside) in enumerate(zip(t.vertices, t.vertex_interior)):
        fh.write(f"vertex {i} {_f(x)} {_f(y)} {int(inside)}\n")
    for i in range(t.n_edges):
        va = "-" if t.edge_va[i] < 0 else str(t.edge_va[i])
        vb = "-" if t.edge_vb[i] < 0 else str(t.edge_vb[i])
        (ax, ay), (bx, by) = t.edge_a[i], t.edge_b[i]
        fh.write(f"edge {i} {va} {vb} {_f(ax)} {_f(ay)} {_f(bx)} {_f(by)} "
                 f"{int(t.edge_clipped[i])} {t.edge_seeds[i, 0]} {t.edge_seeds[i, 1]}\n")


def dumps_tessellation(t: Tessellation) -> str:
    buf = io.StringIO()
    dump_tessellation(t, buf)
    return buf.getvalue()


def load_tessellation(fh: TextIO) -> Tessellation:
    lines = [ln.split() for ln in fh.read().splitlines() if ln.strip()]
    if not lines or " ".join(lines[0]) != FORMAT_HEADER:
        raise ValueError("not a tessellation file")
    window = seed_window = None
    intensity = float("nan")
    stream = None
    seeds, verts, inter, edges = [], [], [], []
    for lineno, tok in enumerate(lines[1:], start=2):
        kind = tok[0]
        try:
            if kind == "window":
                window = Window.from_bounds(*map(float, tok[1:5]))
            elif kind == "seed_window":
                seed_window = Window.from_bounds(*map(float, tok[1:5]))
            elif kind == "intensity":
                intensity = float(tok[1])
            elif kind == "stream":
                stream = RngStream(int(tok[1]), int(tok[2]), tuple(int(v) for v in tok[3:]))
            elif kind == "seed":
                seeds.append((float(tok[2]), float(tok[3])))
            elif kind == "vertex":
                verts.append((float(tok[2]), float(tok[3])))
                inter.append(bool(int(tok[4])))
            elif kind == "edge":
                va = -1 if tok[2] == "-" else int(tok[2])
                vb = -1 if tok[3] == "-" else int(tok[3])
                edges.append((va, vb, *map(float, tok[4:8]), bool(int(tok[8])), int(tok[9]), int(tok[10])))
            else:
                raise ValueError(f"unknown record {kind!r}")
        except (IndexError, ValueError) as exc:
            raise ValueError(f"line {lineno}: {exc}") from None
    if window is None:
        raise ValueError("missing window record")
    ss = SeedSet(seed_window or window, intensity, np.array(seeds, dtype=float).reshape(-1, 2), stream)
    if edges:
        va, vb, ax, ay, bx, by, cl, s0, s1 = map(np.array, zip(*edges))
    else:
        va = vb = s0 = s1 = np.zeros(0, dtype=np.int64)
        ax = ay = bx = by = np.zeros(0)
        cl = np.zeros(0, bool)
    a = np.column_stack([ax, ay]).reshape(-1, 2)
    b = np.column_stack([bx, by]).reshape(-1, 2)
    return Tessellation(ss, window, np.array(verts, dtype=float).reshape(-1, 2),
                        np.array(inter, dtype=bool), a, b, va.astype(np.int64), vb.astype(np.int64),
                        np.hypot(*(b - a).T), cl.astype(bool),
                        np.column_stack([s0, s1]).astype(np.int64).reshape(-1, 2))
