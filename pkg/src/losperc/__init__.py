"""Line-of-sight percolation of users and relays on Poisson-Voronoi street systems."""

__version__ = "0.1.0"

from .geometry import Point, RngStream, Segment, Window, clip_segment, cube, point  # noqa: E402
from .graph import build_graph, build_graph_infinite_range, crosses_window, label_components  # noqa: E402
from .montecarlo import (DimensionlessParams, ExperimentConfig, ModelParams,  # noqa: E402
                         crossing_probability, find_critical, sweep, wilson_interval)
from .processes import is_segment_open, node_set, sample_relays, sample_users, street_open_probability  # noqa: E402
from .pvt import build_tessellation, compute_stats, sample_seeds, seed_set  # noqa: E402

__all__ = [
    "Point", "RngStream", "Segment", "Window", "clip_segment", "cube", "point",
    "build_graph", "build_graph_infinite_range", "crosses_window", "label_components",
    "DimensionlessParams", "ExperimentConfig", "ModelParams", "crossing_probability",
    "find_critical", "sweep", "wilson_interval",
    "is_segment_open", "node_set", "sample_relays", "sample_users", "street_open_probability",
    "build_tessellation", "compute_stats", "sample_seeds", "seed_set",
]
