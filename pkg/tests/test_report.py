import numpy as np

from losperc.coarsegrain import sample_site_grid
from losperc.geometry import RngStream
from losperc.graph import build_graph
from losperc.montecarlo import ModelParams
from losperc.processes import NodeSet, sample_relays, sample_users
from losperc.report import (plot_crossing_curve, plot_realization, plot_site_grid,
                            plot_tessellation_stats)


def is_png(path):
    return path.read_bytes()[:4] == b"\x89PNG"


def test_crossing_curve(tmp_path):
    rows = [{"p": p, "p_hat": q, "ci_low": max(0, q - 0.1), "ci_high": min(1, q + 0.1)}
            for p, q in ((0.8, 1.0), (0.6, 0.0), (0.7, 0.5))]
    assert is_png(plot_crossing_curve(rows, "p", tmp_path / "c.png", critical=0.7))


def test_realization_and_grid(tmp_path, medium_tessellation):
    t = medium_tessellation
    z = NodeSet(sample_users(t, 1.0, RngStream(1, 1)), sample_relays(t, 0.8, RngStream(1, 2)), 0)
    nodes, labels = build_graph(t, z, 1.0)
    assert is_png(plot_realization(t, nodes, labels, tmp_path / "r.png"))
    grid = sample_site_grid(ModelParams(1.0, 1.0, 0.2, 0.2), 1.0, 3, RngStream(2, 0))
    assert is_png(plot_site_grid(grid, tmp_path / "g.png"))


def test_stats_plot(tmp_path):
    rows = [{"gamma_hat": g, "lbar_hat": l} for g, l in zip(np.linspace(1.9, 2.1, 5), np.linspace(0.6, 0.7, 5))]
    assert is_png(plot_tessellation_stats(rows, tmp_path / "s.png", 1.0))
