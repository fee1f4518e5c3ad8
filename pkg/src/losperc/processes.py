"""Users on streets (Cox process) and relays on crossroads (Bernoulli marks)."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .geometry import Point, as_generator
from .pvt import Tessellation


class User(NamedTuple):
    edge_id: int
    arc: float
    position: Point


@dataclass(frozen=True)
class Users:
    """Users as parallel arrays, ordered by edge id then arc."""

    edge_id: np.ndarray
    arc: np.ndarray
    position: np.ndarray
    # uniform mark per user; keeping marks < q thins the process to intensity q*lambda
    mark: np.ndarray

    def __len__(self):
        return len(self.edge_id)

    def __getitem__(self, i: int) -> User:
        return User(int(self.edge_id[i]), float(self.arc[i]), Point(*self.position[i]))

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    def thinned(self, keep_fraction: float) -> "Users":
        m = self.mark < keep_fraction
        return Users(self.edge_id[m], self.arc[m], self.position[m], self.mark[m])

    @classmethod
    def empty(cls) -> "Users":
        return cls(np.zeros(0, np.int64), np.zeros(0), np.zeros((0, 2)), np.zeros(0))


def sample_users(t: Tessellation, lam: float, rng) -> Users:
    """Poisson(lam * length) users on every street, uniform along it."""
    if lam < 0 or not math.isfinite(lam):
        raise ValueError("user intensity must be a finite non-negative number")
    gen = as_generator(rng)
    counts = gen.poisson(lam * t.edge_length) if t.n_edges else np.zeros(0, np.int64)
    eid = np.repeat(np.arange(t.n_edges), counts)
    arc = gen.random(len(eid)) * t.edge_length[eid]
    mark = gen.random(len(eid))
    order = np.lexsort((arc, eid))
    eid, arc, mark = eid[order], arc[order], mark[order]
    pos = t.edge_points(eid, arc) if len(eid) else np.zeros((0, 2))
    return Users(eid, arc, pos, mark)


@dataclass(frozen=True)
class RelayAssignment:
    """Open/closed crossroads.

    One latent uniform per vertex is kept so the same realisation can be
    re-thresholded at any ``p``: ``at(p1).open <= at(p2).open`` for ``p1 <= p2``.
    """

    latent: np.ndarray
    p: float

    @property
    def open(self) -> np.ndarray:
        return self.latent < self.p

    def at(self, p: float) -> "RelayAssignment":
        _check_p(p)
        return RelayAssignment(self.latent, float(p))

    def __len__(self):
        return len(self.latent)


def _check_p(p: float) -> None:
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"relay probability {p!r} outside [0, 1]")


def sample_relays(t: Tessellation, p: float, rng) -> RelayAssignment:
    _check_p(p)
    gen = as_generator(rng)
    return RelayAssignment(gen.random(t.n_vertices), float(p))


@dataclass(frozen=True)
class NodeSet:
    """Superposition of users and open relays on one tessellation."""

    users: Users
    relays: RelayAssignment
    tessellation_ref: int

    @property
    def n_nodes(self) -> int:
        return len(self.users) + int(self.relays.open.sum())


def node_set(t: Tessellation, users: Users, relays: RelayAssignment) -> NodeSet:
    if len(users) and (users.edge_id.min() < 0 or users.edge_id.max() >= t.n_edges):
        raise ValueError("user edge ids do not match the tessellation")
    if len(relays) != t.n_vertices:
        raise ValueError("relay assignment does not match the tessellation")
    return NodeSet(users, relays, id(t))


def is_segment_open(seg_length: float, arcs_on_seg: Sequence[float], r: float) -> bool:
    """Whether every closed sub-segment of length ``r`` holds a user.

    Segments no longer than ``r`` are open outright; otherwise the first
    arc, every gap and the tail must all be at most ``r``.
    """
    if not r > 0:
        raise ValueError("r must be positive")
    arcs = np.asarray(arcs_on_seg, dtype=float)
    if arcs.size and (arcs[0] < 0 or arcs[-1] > seg_length or np.any(np.diff(arcs) < 0)):
        raise ValueError("arcs must be sorted and inside [0, seg_length]")
    if seg_length <= r:
        return True
    if arcs.size == 0:
        return False
    gaps = np.diff(arcs, prepend=0.0, append=seg_length)
    return bool(gaps.max() <= r)


def segments_open(lengths: np.ndarray, seg_id: np.ndarray, arcs: np.ndarray, r: float) -> np.ndarray:
    """Vectorised ``is_segment_open`` for many segments.

    ``seg_id``/``arcs`` list the users, sorted by segment then arc.
    """
    lengths = np.asarray(lengths, dtype=float)
    n = len(lengths)
    max_gap = np.zeros(n)
    counts = np.bincount(seg_id, minlength=n)
    has = counts > 0
    # empty segments: the gap is the whole length
    max_gap[~has] = lengths[~has]
    if len(arcs):
        first = np.r_[True, seg_id[1:] != seg_id[:-1]]
        last = np.r_[seg_id[1:] != seg_id[:-1], True]
        prev = np.r_[0.0, arcs[:-1]]
        gap = np.where(first, arcs, arcs - prev)
        np.maximum.at(max_gap, seg_id, gap)
        np.maximum.at(max_gap, seg_id[last], lengths[seg_id[last]] - arcs[last])
    return (lengths <= r) | (max_gap <= r)


def street_open_probability(L: float, lam: float, r: float, trials: int, rng,
                            batch: int = 20000) -> float:
    """Monte-Carlo probability that a street of length ``L`` is open."""
    if not (L > 0 and lam >= 0 and r > 0 and trials >= 1):
        raise ValueError("need L > 0, lam >= 0, r > 0 and trials >= 1")
    if L <= r:
        return 1.0
    if lam == 0:
        return 0.0
    gen = as_generator(rng)
    hits = 0
    done = 0
    while done < trials:
        m = min(batch, trials - done)
        counts = gen.poisson(lam * L, size=m)
        seg = np.repeat(np.arange(m), counts)
        arcs = gen.random(len(seg)) * L
        order = np.lexsort((arcs, seg))
        hits += int(segments_open(np.full(m, L), seg[order], arcs[order], r).sum())
        done += m
    return hits / trials
