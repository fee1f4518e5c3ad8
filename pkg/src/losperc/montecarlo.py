"""Crossing-window Monte Carlo: crossing probabilities, sweeps and thresholds."""

from __future__ import annotations

import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Optional, Sequence, Union

import numpy as np
from scipy.stats import norm

from .geometry import RngStream, Window
from .graph import build_graph, build_graph_infinite_range, crosses_window
from .processes import NodeSet, RelayAssignment, Users, sample_relays, sample_users
from .pvt import Tessellation, build_tessellation, mean_street_length, sample_seeds

AXES = ("p", "U", "H", "r", "lambda")
# crossing probability decreases along these axes
DECREASING_AXES = ("H",)


@dataclass(frozen=True)
class ModelParams:
    lambda_S: float
    p: float
    lam: float
    r: float  # math.inf for infinite range

    def __post_init__(self):
        if not self.lambda_S > 0:
            raise ValueError("lambda_S must be positive")
        if not 0 <= self.p <= 1:
            raise ValueError("p must lie in [0, 1]")
        if not (self.lam >= 0 and math.isfinite(self.lam)):
            raise ValueError("lambda must be finite and non-negative")
        if not self.r > 0:
            raise ValueError("r must be positive (math.inf for infinite range)")

    @property
    def infinite_range(self) -> bool:
        return math.isinf(self.r)


@dataclass(frozen=True)
class DimensionlessParams:
    p: float
    U: float
    H: float  # 0 encodes infinite range

    def __post_init__(self):
        if not 0 <= self.p <= 1:
            raise ValueError("p must lie in [0, 1]")
        if not (self.U >= 0 and math.isfinite(self.U)):
            raise ValueError("U must be finite and non-negative")
        if not (self.H >= 0 and math.isfinite(self.H)):
            raise ValueError("H must be finite and non-negative")


Params = Union[ModelParams, DimensionlessParams]


def to_dimensionless(m: ModelParams) -> DimensionlessParams:
    lbar = mean_street_length(m.lambda_S)
    return DimensionlessParams(m.p, m.lam * lbar, 0.0 if m.infinite_range else lbar / m.r)


def from_dimensionless(d: DimensionlessParams, lambda_S: float = 1.0) -> ModelParams:
    lbar = mean_street_length(lambda_S)
    r = math.inf if d.H == 0 else lbar / d.H
    return ModelParams(lambda_S, d.p, d.U / lbar, r)


def as_model(params: Params, lambda_S: float = 1.0) -> ModelParams:
    if isinstance(params, ModelParams):
        return params
    return from_dimensionless(params, lambda_S)


def with_axis(params: Params, axis: str, value: float, lambda_S: float = 1.0) -> ModelParams:
    """Model parameters with one coordinate replaced (either coordinate system)."""
    if axis in ("p", "U", "H"):
        d = params if isinstance(params, DimensionlessParams) else to_dimensionless(params)
        ls = params.lambda_S if isinstance(params, ModelParams) else lambda_S
        return from_dimensionless(replace(d, **{axis: float(value)}), ls)
    m = as_model(params, lambda_S)
    if axis == "r":
        return replace(m, r=float(value))
    if axis == "lambda":
        return replace(m, lam=float(value))
    raise ValueError(f"unknown axis {axis!r}; expected one of {AXES}")


@dataclass(frozen=True)
class ExperimentConfig:
    params: Params
    window_cells: float = 2000.0
    band: Optional[float] = None
    trials: int = 200
    master_seed: int = 0
    lambda_S: float = 1.0
    # seeds are sampled this many mean street lengths beyond the window
    guard: float = 3.0

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if not self.window_cells > 0:
            raise ValueError("window_cells must be positive")

    @property
    def model(self) -> ModelParams:
        return as_model(self.params, self.lambda_S)

    @property
    def window(self) -> Window:
        side = math.sqrt(self.window_cells / self.model.lambda_S)
        return Window.from_bounds(0.0, 0.0, side, side)

    @property
    def contact_band(self) -> float:
        """Crossing contact band: ``band`` if set, else r (mean street length for r = inf)."""
        if self.band is not None:
            return float(self.band)
        m = self.model
        b = mean_street_length(m.lambda_S) if m.infinite_range else m.r
        return min(b, 0.25 * self.window.width)


def wilson_interval(successes: int, trials: int, level: float = 0.95) -> tuple[float, float]:
    if trials <= 0:
        raise ValueError("trials must be positive")
    z = norm.ppf(0.5 + level / 2)
    ph = successes / trials
    denom = 1 + z * z / trials
    centre = (ph + z * z / (2 * trials)) / denom
    half = z * math.sqrt(ph * (1 - ph) / trials + z * z / (4 * trials * trials)) / denom
    # guard the ordering against rounding at 0 and 1
    return max(0.0, min(centre - half, ph)), min(1.0, max(centre + half, ph))


@dataclass(frozen=True)
class EstimateResult:
    p_hat: float
    ci_low: float
    ci_high: float
    trials: int
    successes: int
    config: ExperimentConfig
    wall_time: float = field(default=0.0, compare=False)

    def record(self) -> dict:
        """JSON-lines record; wall time is left out so reruns are byte-identical."""
        m = self.config.model
        d = to_dimensionless(m)
        return {
            "kind": "estimate",
            "p": m.p, "U": d.U, "H": d.H,
            "lambda_S": m.lambda_S, "lambda": m.lam,
            "r": None if m.infinite_range else m.r,
            "p_hat": self.p_hat, "ci_low": self.ci_low, "ci_high": self.ci_high,
            "trials": self.trials, "successes": self.successes,
            "window_cells": self.config.window_cells, "band": self.config.contact_band,
            "master_seed": self.config.master_seed,
        }


def make_estimate(successes: int, trials: int, cfg: ExperimentConfig, wall: float = 0.0) -> EstimateResult:
    lo, hi = wilson_interval(successes, trials)
    return EstimateResult(successes / trials, lo, hi, trials, successes, cfg, wall)


class Realization:
    """One sampled street system with users (at a maximal intensity) and relay latents.

    ``crosses(p, lam, r)`` thins users and thresholds the relay latents, so
    every call on the same realisation is coupled.
    """

    def __init__(self, stream: RngStream, window: Window, lambda_S: float,
                 lam_max: float, guard: float = 3.0):
        pad = guard * mean_street_length(lambda_S)
        seeds = sample_seeds(window.dilated(pad), lambda_S, stream.child(0))
        self.window = window
        self.lambda_S = lambda_S
        self.lam_max = lam_max
        if len(seeds.points) == 0:
            self.tessellation = None
            return
        self.tessellation: Optional[Tessellation] = build_tessellation(seeds, window)
        t = self.tessellation
        self.users = sample_users(t, lam_max, stream.child(1)) if lam_max > 0 else Users.empty()
        self.relays = sample_relays(t, 0.0, stream.child(2))

    def node_set(self, p: float, lam: float) -> NodeSet:
        if lam > self.lam_max * (1 + 1e-12):
            raise ValueError("lambda exceeds the realisation's maximal intensity")
        users = self.users if lam >= self.lam_max else self.users.thinned(lam / self.lam_max)
        return NodeSet(users, self.relays.at(p), id(self.tessellation))

    def graph(self, p: float, lam: float, r: float):
        z = self.node_set(p, lam)
        if math.isinf(r):
            return build_graph_infinite_range(self.tessellation, z)
        return build_graph(self.tessellation, z, r)

    def crosses(self, p: float, lam: float, r: float, band: float) -> bool:
        if self.tessellation is None:
            return False
        if p == 0 and (lam == 0 or len(self.users) == 0):
            return False
        nodes, labels = self.graph(p, lam, r)
        return crosses_window(nodes, labels, self.window, band)


def run_trial(cfg: ExperimentConfig, index: int) -> bool:
    m = cfg.model
    try:
        real = Realization(RngStream(cfg.master_seed, index), cfg.window, m.lambda_S, m.lam, cfg.guard)
        return real.crosses(m.p, m.lam, m.r, cfg.contact_band)
    except Exception as exc:
        raise RuntimeError(f"trial {index} failed: {exc}") from exc


def _run_chunk(args) -> list[bool]:
    cfg, indices = args
    return [run_trial(cfg, i) for i in indices]


def _map_trials(fn, cfg, indices: Sequence[int], threads: int) -> list:
    if threads <= 1 or len(indices) < 2:
        return fn((cfg, list(indices)))
    chunks = [list(indices[k::threads]) for k in range(threads)]
    out = [None] * len(indices)
    with ProcessPoolExecutor(max_workers=threads) as pool:
        for k, res in enumerate(pool.map(fn, [(cfg, c) for c in chunks])):
            for j, v in zip(range(k, len(indices), threads), res):
                out[j] = v
    return out


def crossing_probability(cfg: ExperimentConfig, threads: int = 1) -> EstimateResult:
    """Fraction of independent realisations with a left-right crossing.

    Trial ``i`` draws everything from ``RngStream(master_seed, i)``, so the
    result does not depend on ``threads``.
    """
    t0 = time.perf_counter()
    hits = _map_trials(_run_chunk, cfg, range(cfg.trials), threads)
    return make_estimate(int(sum(hits)), cfg.trials, cfg, time.perf_counter() - t0)


def _coupled_chunk(args) -> list[list[bool]]:
    (cfg, axis, grid), indices = args
    models = [with_axis(cfg.params, axis, v, cfg.lambda_S) for v in grid]
    lam_max = max(m.lam for m in models)
    rows = []
    for i in indices:
        real = Realization(RngStream(cfg.master_seed, i), cfg.window, models[0].lambda_S,
                           lam_max, cfg.guard)
        rows.append([real.crosses(m.p, m.lam, m.r, replace(cfg, params=m).contact_band)
                     for m in models])
    return rows


def coupled_indicators(axis: str, grid: Sequence[float], fixed_params: Params,
                       cfg: ExperimentConfig, threads: int = 1) -> np.ndarray:
    """(trials, len(grid)) crossing indicators, one realisation per row."""
    if axis not in AXES:
        raise ValueError(f"unknown axis {axis!r}")
    cfg = replace(cfg, params=fixed_params)
    rows = _map_trials(_coupled_chunk, (cfg, axis, tuple(grid)), range(cfg.trials), threads)
    return np.array(rows, dtype=bool).reshape(cfg.trials, len(grid))


def sweep(axis: str, grid: Sequence[float], fixed_params: Params, cfg: ExperimentConfig,
          coupled: bool = False, threads: int = 1) -> list[EstimateResult]:
    """One estimate per grid value.

    Every grid point reuses the trial streams of ``cfg.master_seed``; with
    ``coupled=True`` each trial is sampled once and re-evaluated along the
    grid (users are thinned from the largest intensity).
    """
    if not len(grid):
        raise ValueError("empty grid")
    if list(grid) != sorted(grid):
        raise ValueError("grid must be sorted")
    if coupled:
        t0 = time.perf_counter()
        ind = coupled_indicators(axis, grid, fixed_params, cfg, threads)
        wall = (time.perf_counter() - t0) / len(grid)
        return [make_estimate(int(ind[:, k].sum()), cfg.trials,
                              replace(cfg, params=with_axis(fixed_params, axis, v, cfg.lambda_S)), wall)
                for k, v in enumerate(grid)]
    return [crossing_probability(replace(cfg, params=with_axis(fixed_params, axis, v, cfg.lambda_S)),
                                 threads)
            for v in grid]


class BracketError(ValueError):
    pass


class NonMonotoneError(RuntimeError):
    pass


@dataclass(frozen=True)
class CriticalEstimate:
    axis: str
    value: float
    bracket: tuple[float, float]
    target: float
    trials_per_point: int
    evaluations: tuple[tuple[float, EstimateResult], ...] = ()

    def record(self) -> dict:
        return {
            "kind": "critical", "axis": self.axis, "value": self.value,
            "bracket": list(self.bracket), "target": self.target,
            "trials_per_point": self.trials_per_point,
            "evaluations": [{"value": v, "p_hat": e.p_hat, "ci_low": e.ci_low,
                             "ci_high": e.ci_high, "trials": e.trials, "successes": e.successes}
                            for v, e in self.evaluations],
        }


def find_critical(axis: str, fixed_params: Params, bracket: tuple[float, float],
                  cfg: ExperimentConfig, target: float = 0.5, tol: float = 0.01,
                  max_escalation: int = 4, threads: int = 1) -> CriticalEstimate:
    """Bisection for the value of ``axis`` where the crossing probability hits ``target``.

    Every evaluation reuses the trial streams of ``cfg.master_seed``
    (common random numbers).  Near the threshold the trial count is doubled
    up to ``max_escalation`` times; bisection stops when the bracket is
    narrower than ``tol`` or the midpoint stays statistically ambiguous.
    """
    if axis not in AXES:
        raise ValueError(f"unknown axis {axis!r}")
    lo, hi = map(float, bracket)
    if not lo < hi:
        raise ValueError("bracket must satisfy low < high")
    sign = -1.0 if axis in DECREASING_AXES else 1.0
    cap = cfg.trials * 2 ** max_escalation
    evals: list[tuple[float, EstimateResult]] = []

    def est(v: float, n: int) -> EstimateResult:
        e = crossing_probability(replace(cfg, params=with_axis(fixed_params, axis, v, cfg.lambda_S),
                                         trials=n), threads)
        evals.append((v, e))
        return e

    e_lo, e_hi = est(lo, cfg.trials), est(hi, cfg.trials)
    if not (sign * (e_lo.p_hat - target) < 0 < sign * (e_hi.p_hat - target)):
        raise BracketError(f"bracket does not straddle target {target}: "
                           f"{e_lo.p_hat:.3f} at {lo}, {e_hi.p_hat:.3f} at {hi}")

    def ambiguous(e):
        return e.ci_low <= target <= e.ci_high

    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        n = cfg.trials
        e = est(mid, n)
        while ambiguous(e) and n < cap:
            n *= 2
            e = est(mid, n)
        if sign > 0:
            wrong = e.ci_high < e_lo.ci_low or e.ci_low > e_hi.ci_high
        else:
            wrong = e.ci_low > e_lo.ci_high or e.ci_high < e_hi.ci_low
        if wrong:
            raise NonMonotoneError(f"non-monotone response at {axis}={mid}")
        if ambiguous(e):
            break
        if sign * (e.p_hat - target) < 0:
            lo, e_lo = mid, e
        else:
            hi, e_hi = mid, e
    value = 0.5 * (lo + hi)
    return CriticalEstimate(axis, value, (lo, hi), target, cfg.trials, tuple(evals))


def params_record(params: Params, lambda_S: float = 1.0) -> dict:
    m = as_model(params, lambda_S)
    d = to_dimensionless(m)
    return {**asdict(d), "lambda_S": m.lambda_S, "lambda": m.lam,
            "r": None if m.infinite_range else m.r}
