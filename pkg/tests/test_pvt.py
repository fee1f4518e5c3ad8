import io
import math

import numpy as np
import pytest
from scipy.spatial import cKDTree

from losperc.geometry import RngStream, Window
from losperc.pvt import (build_tessellation, compute_stats, dumps_tessellation, load_tessellation,
                         mean_street_length, sample_seeds, seed_set, street_intensity)

BIG = Window.from_bounds(-10.0, -10.0, 10.0, 10.0)


def test_closed_forms():
    assert street_intensity(1.0) == 2.0
    assert mean_street_length(1.0) == pytest.approx(2 / 3)
    assert mean_street_length(4.0) == pytest.approx(1 / 3)
    # lbar = 4 / (3 gamma) at every intensity
    for lam in (0.1, 1.0, 7.5):
        assert mean_street_length(lam) == pytest.approx(4 / (3 * street_intensity(lam)))


def test_sample_seeds_zero_and_negative():
    assert len(sample_seeds(BIG, 0.0, RngStream(1, 0))) == 0
    with pytest.raises(ValueError):
        sample_seeds(BIG, -1.0, RngStream(1, 0))


def test_sample_seeds_mean_count():
    w = Window.from_bounds(0, 0, 10, 10)
    counts = [len(sample_seeds(w, 1.0, RngStream(5, i))) for i in range(1000)]
    assert abs(np.mean(counts) - 100) < 3 * math.sqrt(100 / 1000) * 3


def test_sample_seeds_poisson_dispersion():
    gen = np.random.default_rng(99)
    counts = np.array([len(sample_seeds(Window.from_bounds(0, 0, 1, 1), 5.0, gen)) for _ in range(10_000)])
    assert counts.var(ddof=1) == pytest.approx(5.0, rel=0.15)
    assert counts.mean() == pytest.approx(5.0, rel=0.03)


def test_sample_seeds_inside_window():
    w = Window.from_bounds(2, -1, 5, 3)
    s = sample_seeds(w, 10.0, RngStream(3, 0))
    assert w.contains_xy(s.points).all()


def test_no_seeds_error():
    with pytest.raises(ValueError, match="no seeds"):
        build_tessellation(sample_seeds(BIG, 0.0, RngStream(0, 0)))


def test_single_seed_is_one_cell():
    t = build_tessellation(seed_set([(1.0, 2.0)], BIG))
    assert t.n_vertices == 0 and t.n_edges == 0


def test_three_seeds_circumcenter():
    t = build_tessellation(seed_set([(0, 0), (1, 0), (0, 1)], BIG))
    inside = BIG.contains_xy(t.vertices)
    assert inside.sum() == 1
    assert t.vertices[0] == pytest.approx([0.5, 0.5])
    assert t.n_edges == 3 and t.degrees()[0] == 3
    # the three streets are rays cut by the window, so none is a full street
    assert t.edge_clipped.all()


def test_collinear_seeds_strip():
    t = build_tessellation(seed_set([(0, 0), (1, 1), (2, 2), (3, 3)], BIG))
    assert t.n_vertices == 0 and t.n_edges == 3
    for e in range(3):
        s0, s1 = t.edge_seeds[e]
        p0, p1 = t.seeds.points[s0], t.seeds.points[s1]
        for q in (t.edge_a[e], t.edge_b[e]):
            assert np.linalg.norm(q - p0) == pytest.approx(np.linalg.norm(q - p1))


def test_cocircular_seeds_merge_into_one_crossroad():
    t = build_tessellation(seed_set([(-1, -1), (1, -1), (1, 1), (-1, 1)], BIG))
    assert t.n_vertices == 1 and t.degrees()[0] == 4
    assert (t.edge_length > 0).all()


def test_degree_three_at_interior_vertices():
    w = Window.from_bounds(0, 0, 25, 25)
    for i in range(3):
        t = build_tessellation(sample_seeds(w, 1.0, RngStream(17, i)))
        deg = t.degrees()[t.vertex_interior]
        assert len(deg) > 300
        assert (deg == 3).all()


def test_edges_lie_on_bisectors(medium_tessellation):
    t = medium_tessellation
    pts = t.seeds.points
    tree = cKDTree(pts)
    for q in (t.edge_a, t.edge_b, 0.5 * (t.edge_a + t.edge_b)):
        d0 = np.linalg.norm(q - pts[t.edge_seeds[:, 0]], axis=1)
        d1 = np.linalg.norm(q - pts[t.edge_seeds[:, 1]], axis=1)
        np.testing.assert_allclose(d0, d1, rtol=1e-9, atol=1e-9)
        dmin, _ = tree.query(q)
        assert (dmin >= d0 * (1 - 1e-9) - 1e-12).all()


def test_interior_vertices_cocircular(medium_tessellation):
    t = medium_tessellation
    pts = t.seeds.points
    v = t.vertices[t.vertex_interior]
    d = np.linalg.norm(v[:, None, :] - pts[None, :, :], axis=2)
    d.sort(axis=1)
    np.testing.assert_allclose(d[:, 2], d[:, 0], rtol=1e-9)
    assert (d[:, 3] > d[:, 0] * (1 + 1e-9)).all()


def test_incidence_consistency(medium_tessellation):
    t = medium_tessellation
    full = ~t.edge_clipped
    assert (t.edge_va[full] >= 0).all() and (t.edge_vb[full] >= 0).all()
    assert (t.edge_va[full] != t.edge_vb[full]).all()
    np.testing.assert_allclose(t.edge_length, np.linalg.norm(t.edge_b - t.edge_a, axis=1))
    np.testing.assert_allclose(t.vertices[t.edge_va[full]], t.edge_a[full])
    np.testing.assert_allclose(t.vertices[t.edge_vb[full]], t.edge_b[full])
    for v in range(t.n_vertices):
        for e in t.incident_edges(v):
            assert v in (t.edge_va[e], t.edge_vb[e])
    assert t.window.contains_xy(t.edge_a, tol=1e-9).all()
    assert t.window.contains_xy(t.edge_b, tol=1e-9).all()


def _proper_crossings(a, b):
    """Count pairs of segments crossing at a point interior to both."""
    def orient(p, q, r):
        return (q[..., 0] - p[..., 0]) * (r[..., 1] - p[..., 1]) - (q[..., 1] - p[..., 1]) * (r[..., 0] - p[..., 0])
    A, B = a[:, None], b[:, None]
    C, D = a[None], b[None]
    scale = 1e-9
    d1, d2 = orient(A, B, C), orient(A, B, D)
    d3, d4 = orient(C, D, A), orient(C, D, B)
    cross = (d1 * d2 < -scale) & (d3 * d4 < -scale)
    return int(np.triu(cross, 1).sum())


def test_edges_meet_only_at_vertices():
    w = Window.from_bounds(0, 0, 12, 12)
    t = build_tessellation(sample_seeds(w, 1.0, RngStream(8, 0)))
    assert _proper_crossings(t.edge_a, t.edge_b) == 0


def test_edge_vertex_ratio_tends_to_three_halves():
    w = Window.from_bounds(0, 0, 60, 60)
    t = build_tessellation(sample_seeds(w, 1.0, RngStream(9, 0)))
    s = compute_stats(t, 0.0)
    assert t.n_edges / t.n_vertices == pytest.approx(1.5, rel=0.03)
    assert s.vertex_count == t.n_vertices


def test_scaling_covariance():
    w = Window.from_bounds(0, 0, 15, 15)
    seeds = sample_seeds(w, 1.0, RngStream(4, 0))
    c = 2.5
    t1, t2 = build_tessellation(seeds), build_tessellation(seeds.scaled(c))
    assert t1.n_edges == t2.n_edges
    np.testing.assert_allclose(np.sort(t2.edge_length), c * np.sort(t1.edge_length), rtol=1e-9)
    s1, s2 = compute_stats(t1, 2.0), compute_stats(t2, 2.0 * c)
    assert s2.gamma_hat == pytest.approx(s1.gamma_hat / c, rel=1e-9)


def test_stats_estimators_and_consistency():
    w = Window.from_bounds(0, 0, 40, 40)
    g, lb = [], []
    for i in range(5):
        s = compute_stats(build_tessellation(sample_seeds(w, 1.0, RngStream(21, i))), 5.0)
        g.append(s.gamma_hat)
        lb.append(s.lbar_hat)
    assert np.mean(g) == pytest.approx(2.0, rel=0.03)
    assert np.mean(lb) == pytest.approx(2 / 3, rel=0.04)
    assert np.mean(lb) == pytest.approx(4 / (3 * np.mean(g)), rel=0.03)


def test_stats_rules_and_errors(medium_tessellation):
    t = medium_tessellation
    e = compute_stats(t, 3.0)
    m = compute_stats(t, 3.0, lbar_rule="midpoint")
    assert e.gamma_hat == m.gamma_hat
    assert m.edge_count >= e.edge_count
    with pytest.raises(ValueError, match="core window"):
        compute_stats(t, 10.0)
    with pytest.raises(ValueError):
        compute_stats(t, -1.0)
    with pytest.raises(ValueError):
        compute_stats(t, 1.0, lbar_rule="nearest")


def test_text_round_trip(medium_tessellation):
    t = medium_tessellation
    text = dumps_tessellation(t)
    assert text.startswith("# losperc tessellation v1\n")
    u = load_tessellation(io.StringIO(text))
    assert u.window == t.window and u.seeds.stream == t.seeds.stream
    for name in ("vertices", "vertex_interior", "edge_a", "edge_b", "edge_va", "edge_vb",
                 "edge_clipped", "edge_seeds", "edge_length"):
        np.testing.assert_array_equal(getattr(u, name), getattr(t, name))
    assert dumps_tessellation(u) == text


def test_text_format_errors():
    with pytest.raises(ValueError, match="not a tessellation"):
        load_tessellation(io.StringIO("hello\n"))
    with pytest.raises(ValueError, match="line 3"):
        load_tessellation(io.StringIO("# losperc tessellation v1\nwindow 0 0 1 1\nvertex x\n"))
