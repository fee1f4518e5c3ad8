"""Renormalised-lattice diagnostics: stabilisation radii and n-good / n-bad sites.

Three site definitions are supported.  ``subcritical``: the cube Q_n(nz) has
stabilisation radius below n and every street piece inside it is closed.
``supercritical``: inside Q_6n(nz) the radius is below 6n, Q_n(nz) holds a
full open street, every crossroad of Q_6n(nz) carries a relay, and any two
open full streets of Q_3n(nz) are linked by the graph restricted to
Q_6n(nz).  ``hard_geometric`` replaces "open" by "length <= r".
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from itertools import combinations
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree

from .geometry import Point, RngStream, Window, clip_segments, cube
from .graph import UnionFind, build_graph, build_graph_infinite_range
from .processes import NodeSet, sample_relays, sample_users, segments_open
from .pvt import SeedSet, Tessellation, build_tessellation, mean_street_length, sample_seeds


class GoodnessMode(str, enum.Enum):
    SUBCRITICAL = "subcritical"
    SUPERCRITICAL = "supercritical"
    HARD_GEOMETRIC = "hard_geometric"

    @property
    def cube_factor(self) -> int:
        return 1 if self is GoodnessMode.SUBCRITICAL else 6

    @property
    def conditions(self) -> tuple[str, ...]:
        if self is GoodnessMode.SUBCRITICAL:
            return ("radius", "closed_segments")
        return ("radius", "full_street", "open_street", "relays", "linked")


OUT_OF_WINDOW, BAD, GOOD = -1, 0, 1


def _seed_points(seeds) -> np.ndarray:
    pts = seeds.points if isinstance(seeds, SeedSet) else np.asarray(seeds, dtype=float)
    pts = pts.reshape(-1, 2)
    if len(pts) == 0:
        raise ValueError("empty seed set")
    return pts


def stabilization_radii(xy: np.ndarray, seeds) -> np.ndarray:
    """Distance from each query point to its nearest seed."""
    d, _ = cKDTree(_seed_points(seeds)).query(np.asarray(xy, dtype=float).reshape(-1, 2))
    return d


def stabilization_radius(x: Point, seeds) -> float:
    return float(stabilization_radii(np.array([x]), seeds)[0])


def cube_radius(q: Window, seeds, tessellation: Optional[Tessellation] = None) -> float:
    """Largest nearest-seed distance over the closed square ``q``.

    Within a Voronoi cell the distance to its seed is convex, so the maximum
    over ``q`` sits at a Voronoi vertex inside ``q``, a crossing of a Voronoi
    edge with the boundary of ``q``, or a corner of ``q``.  A tessellation
    whose window covers ``q`` may be passed in to avoid rebuilding one.
    """
    pts = _seed_points(seeds)
    if tessellation is None or not tessellation.window.contains_window(q):
        tessellation = build_tessellation(SeedSet(q, float("nan"), pts), q)
    cand = [q.corners()]
    if tessellation.n_edges:
        t = tessellation
        if t.n_vertices:
            cand.append(t.vertices[q.contains_xy(t.vertices)])
        keep, ac, bc, t0, t1 = clip_segments(t.edge_a, t.edge_b, q)
        cand.append(ac[keep & (t0 > 0)])
        cand.append(bc[keep & (t1 < 1)])
        # edges ending on the tessellation window boundary that coincides with q
        cand.append(ac[keep & (t0 <= 0) & (t.edge_va < 0)])
        cand.append(bc[keep & (t1 >= 1) & (t.edge_vb < 0)])
    return float(stabilization_radii(np.concatenate(cand), pts).max())


@dataclass(frozen=True)
class SiteGrid:
    n: float
    mode: GoodnessMode
    sites: np.ndarray          # (k, 2) integer lattice coordinates
    state: np.ndarray          # GOOD / BAD / OUT_OF_WINDOW
    conditions: np.ndarray     # (k, m) 1/0 per condition, -1 when not evaluated

    @property
    def good(self) -> np.ndarray:
        return self.state == GOOD

    @property
    def bad(self) -> np.ndarray:
        return self.state == BAD

    @property
    def evaluated(self) -> np.ndarray:
        return self.state != OUT_OF_WINDOW

    def flag(self, z: tuple[int, int]) -> int:
        hit = np.flatnonzero((self.sites[:, 0] == z[0]) & (self.sites[:, 1] == z[1]))
        if len(hit) == 0:
            return OUT_OF_WINDOW
        return int(self.state[hit[0]])

    def records(self) -> list[dict]:
        names = self.mode.conditions
        out = []
        for (zx, zy), s, cond in zip(self.sites.tolist(), self.state.tolist(), self.conditions.tolist()):
            out.append({"kind": "site", "mode": self.mode.value, "n": self.n, "z": [zx, zy],
                        "state": {GOOD: "good", BAD: "bad", OUT_OF_WINDOW: "out_of_window"}[s],
                        "conditions": {k: (None if c < 0 else bool(c)) for k, c in zip(names, cond)}})
        return out


def _lattice_range(lo: float, hi: float, n: float) -> range:
    """Integers i with Q_n(n i) overlapping [lo, hi] along one axis."""
    return range(math.floor(lo / n - 0.5) + 1, math.ceil(hi / n + 0.5))


def _users_on(z: NodeSet):
    return z.users.edge_id, z.users.arc


def _subcritical_site(t: Tessellation, z: NodeSet, q: Window, r: float) -> bool:
    """Every piece e ∩ q of positive length must be closed."""
    keep, ac, bc, t0, t1 = clip_segments(t.edge_a, t.edge_b, q)
    eids = np.flatnonzero(keep)
    if len(eids) == 0:
        return True
    L = t.edge_length[eids]
    start, stop = t0[eids] * L, t1[eids] * L
    local = -np.ones(t.n_edges, dtype=np.int64)
    local[eids] = np.arange(len(eids))
    ue, ua = _users_on(z)
    seg = local[ue]
    m = seg >= 0
    seg, ua = seg[m], ua[m]
    inside = (ua >= start[seg]) & (ua <= stop[seg])
    seg, arcs = seg[inside], ua[inside] - start[seg[inside]]
    order = np.lexsort((arcs, seg))
    opened = segments_open(stop - start, seg[order], arcs[order], r)
    return not bool(opened.any())


def _full_streets_in(t: Tessellation, q: Window) -> np.ndarray:
    full = ~t.edge_clipped
    return np.flatnonzero(full & q.contains_xy(t.edge_a) & q.contains_xy(t.edge_b))


def _street_open(t: Tessellation, z: NodeSet, eids: np.ndarray, r: float) -> np.ndarray:
    if len(eids) == 0:
        return np.zeros(0, bool)
    local = -np.ones(t.n_edges, dtype=np.int64)
    local[eids] = np.arange(len(eids))
    ue, ua = _users_on(z)
    seg = local[ue]
    m = seg >= 0
    seg, arcs = seg[m], ua[m]
    order = np.lexsort((arcs, seg))
    return segments_open(t.edge_length[eids], seg[order], arcs[order], r)


def _linked(t: Tessellation, z: NodeSet, streets: np.ndarray, r: float, q6: Window) -> bool:
    if len(streets) <= 1:
        return True
    if math.isinf(r):
        nodes, labels = build_graph_infinite_range(t, z, within=q6)
    else:
        nodes, labels = build_graph(t, z, r, within=q6)
    sets = []
    for e in streets:
        hn = nodes.host_node[nodes.host_edge == e]
        sets.append(set(labels.label[hn].tolist()))
    return all(a & b for a, b in combinations(sets, 2))


def _supercritical_site(t, z, seeds, n, r, center, mode) -> list[bool]:
    q1, q3, q6 = cube(center, n), cube(center, 3 * n), cube(center, 6 * n)
    c1 = cube_radius(q6, seeds, t) < 6 * n
    in1 = _full_streets_in(t, q1)
    c2 = len(in1) > 0
    if mode is GoodnessMode.HARD_GEOMETRIC:
        open1 = t.edge_length[in1] <= r
    else:
        open1 = _street_open(t, z, in1, r)
    c3 = bool(open1.any())
    vin = q6.contains_xy(t.vertices) if t.n_vertices else np.zeros(0, bool)
    c4 = bool(z.relays.open[vin].all())
    in3 = _full_streets_in(t, q3)
    if mode is GoodnessMode.HARD_GEOMETRIC:
        open3 = in3[t.edge_length[in3] <= r]
    else:
        open3 = in3[_street_open(t, z, in3, r)]
    c5 = _linked(t, z, open3, r, q6)
    return [c1, c2, c3, c4, c5]


def classify_sites(t: Tessellation, z: NodeSet, n: float, r: float, mode,
                   seeds=None, sites=None) -> SiteGrid:
    """Evaluate the n-good conditions at every lattice site whose cube fits the window.

    ``seeds`` default to the tessellation's own seeds (used for the
    stabilisation radius); ``sites`` optionally restricts the lattice points.
    """
    mode = GoodnessMode(mode)
    if not n > 0:
        raise ValueError("n must be positive")
    if not r > 0:
        raise ValueError("r must be positive")
    if len(z.relays) != t.n_vertices:
        raise ValueError("node set does not match the tessellation")
    seeds = t.seeds if seeds is None else seeds
    w = t.window
    if sites is None:
        sites = [(i, j) for i in _lattice_range(w.min.x, w.max.x, n)
                 for j in _lattice_range(w.min.y, w.max.y, n)]
    sites = np.array(sites, dtype=np.int64).reshape(-1, 2)
    m = len(mode.conditions)
    state = np.full(len(sites), OUT_OF_WINDOW, dtype=np.int8)
    cond = -np.ones((len(sites), m), dtype=np.int8)
    for k, (i, j) in enumerate(sites.tolist()):
        center = Point(i * n, j * n)
        needed = cube(center, mode.cube_factor * n)
        if not w.contains_window(needed):
            continue
        if mode is GoodnessMode.SUBCRITICAL:
            flags = [cube_radius(needed, seeds, t) < n, _subcritical_site(t, z, needed, r)]
        else:
            flags = _supercritical_site(t, z, seeds, n, r, center, mode)
        cond[k] = flags
        state[k] = GOOD if all(flags) else BAD
    return SiteGrid(float(n), mode, sites, state, cond)


def _sample_for_sites(window: Window, radius_threshold: float, lambda_S: float,
                      lam: float, p: float, stream: RngStream):
    """Seeds with a guard zone wide enough for the radius condition to be exact."""
    pad = max(radius_threshold, 3 * mean_street_length(lambda_S))
    seeds = sample_seeds(window.dilated(pad), lambda_S, stream.child(0))
    if len(seeds.points) == 0:
        return None, None
    t = build_tessellation(seeds, window)
    users = sample_users(t, lam, stream.child(1))
    relays = sample_relays(t, p, stream.child(2))
    return t, NodeSet(users, relays, id(t))


def bad_site_frequency(params, n: float, trials: int, rng, mode="subcritical") -> float:
    """Fraction of independent realisations in which the origin site is n-bad.

    ``params`` are model parameters (``lambda_S``, ``p``, ``lam``, ``r``);
    ``rng`` is an RngStream (trial ``i`` uses stream id ``stream_id + i``)
    or an integer master seed.
    """
    mode = GoodnessMode(mode)
    if trials < 1:
        raise ValueError("trials must be >= 1")
    base = rng if isinstance(rng, RngStream) else RngStream(int(rng), 0)
    side = mode.cube_factor * n
    window = cube(Point(0.0, 0.0), side)
    bad = 0
    for i in range(trials):
        stream = RngStream(base.master_seed, base.stream_id + i, base.path)
        t, z = _sample_for_sites(window, side, params.lambda_S, params.lam, params.p, stream)
        if t is None:
            bad += 1
            continue
        grid = classify_sites(t, z, n, params.r, mode, sites=[(0, 0)])
        bad += int(grid.state[0] == BAD)
    return bad / trials


def sample_site_grid(params, n: float, sites_per_side: int, rng, mode="subcritical") -> SiteGrid:
    """Classify a ``sites_per_side`` x ``sites_per_side`` block of sites in one realisation."""
    mode = GoodnessMode(mode)
    stream = rng if isinstance(rng, RngStream) else RngStream(int(rng), 0)
    a = mode.cube_factor * n
    lo = -0.5 * a
    hi = (sites_per_side - 1) * n + 0.5 * a
    window = Window.from_bounds(lo, lo, hi, hi)
    t, z = _sample_for_sites(window, a, params.lambda_S, params.lam, params.p, stream)
    sites = [(i, j) for i in range(sites_per_side) for j in range(sites_per_side)]
    return classify_sites(t, z, n, params.r, mode, sites=sites)


def support_components(t: Tessellation, q: Window) -> tuple[np.ndarray, np.ndarray]:
    """Connected components of the street system restricted to ``q``.

    Returns the ids of streets meeting ``q`` and their component labels;
    pieces are joined at crossroads inside ``q``.
    """
    keep, _, _, _, _ = clip_segments(t.edge_a, t.edge_b, q)
    eids = np.flatnonzero(keep)
    uf = UnionFind(len(eids))
    local = {int(e): k for k, e in enumerate(eids)}
    for v in range(t.n_vertices):
        if not q.contains(Point(*t.vertices[v])):
            continue
        inc = [local[int(e)] for e in t.incident_edges(v) if int(e) in local]
        for a, b in zip(inc, inc[1:]):
            uf.union(a, b)
    return eids, uf.labels() if len(eids) else np.zeros(0, np.int64)


def essential_connectedness(t: Tessellation, center: Point, n: float, seeds=None) -> tuple[bool, bool]:
    """Check the connectedness property at one cube.

    Returns ``(premise, conclusion)``: premise is R(Q_2n) < n/2; conclusion
    is that the street system meets Q_n and all of it inside Q_n lies in one
    component of the street system inside Q_2n.
    """
    seeds = t.seeds if seeds is None else seeds
    q1, q2 = cube(center, n), cube(center, 2 * n)
    premise = cube_radius(q2, seeds, t) < n / 2
    eids2, lab2 = support_components(t, q2)
    keep1, _, _, _, _ = clip_segments(t.edge_a, t.edge_b, q1)
    in1 = np.isin(eids2, np.flatnonzero(keep1))
    conclusion = bool(in1.any()) and len(np.unique(lab2[in1])) == 1
    return premise, conclusion


def site_pair_correlation(indicators: np.ndarray) -> tuple[float, float]:
    """Pearson correlation of paired 0/1 samples and its null standard error."""
    x = np.asarray(indicators, dtype=float)
    a, b = x[:, 0], x[:, 1]
    if a.std() == 0 or b.std() == 0:
        return 0.0, 1.0 / math.sqrt(len(x))
    return float(np.corrcoef(a, b)[0, 1]), 1.0 / math.sqrt(len(x))
