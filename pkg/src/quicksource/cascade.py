"""Deterministic cascade dynamics with counter-keyed noisy observations.

A trace is pure configuration: the observation at ``(vertex, t)`` is a
function of ``(seed, vertex key, t)`` alone, so re-querying, permuting or
parallelizing observation requests can never change a draw.

The likelihood machinery only ever needs signals on the union of the
candidate balls ``U_{u in V_n} N_u(t)``: signal factors at any other
vertex are identical under every candidate hypothesis and cancel from
every ratio both estimators compute.  :class:`CascadeGeometry` builds
exactly that union, step by step, and keeps two reusable artifacts per
time step:

* a *master vertex table* (append-only, so vertex indices are stable as
  the region grows), and
* per-candidate index rows for ``N_u(t)`` assembled from sphere frontiers,
  so each new step only enumerates the frontier.

Geometry depends only on the candidate set, never on the source or seed;
one geometry instance is shared by every Monte Carlo trial of a campaign.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .channels import Channel
from .errors import BallSizeError, VertexEncodingError
from .graphs import (
    DEFAULT_BALL_CAP,
    CandidateSet,
    GraphKind,
    Lattice,
    RegularTree,
    Vertex,
)
from .rng import counter_uniforms, fold_hash_np, mix64
from .graphs import _LATTICE_TAG, _TREE_TAG  # shared key tags


@dataclass(frozen=True)
class CascadeTrace:
    """Seeded cascade: vertex w is affected at time t iff d(w, source) <= t."""

    kind: GraphKind
    source: Vertex
    channel: Channel
    seed: int
    horizon: int


def new_trace(kind: GraphKind, source: Vertex, channel: Channel, seed: int, horizon: int) -> CascadeTrace:
    kind.validate_vertex(source)
    if horizon < 0:
        raise ValueError("horizon must be >= 0")
    return CascadeTrace(kind=kind, source=source, channel=channel, seed=int(seed), horizon=int(horizon))


def affected_count(trace: CascadeTrace, t: int) -> int:
    """|N_source(t)|; cumulative over s <= t equals the growth function f(t)."""
    if t < 0:
        raise ValueError("t must be >= 0")
    return trace.kind.ball_size(t)


# ---------------------------------------------------------------------------
# Vertex stores (kind-specific columnar tables + position lookup)
# ---------------------------------------------------------------------------


class _TreeStore:
    def __init__(self, cs: CandidateSet):
        self.kind: RegularTree = cs.kind
        if self.kind.k > 250:
            raise BallSizeError("tree store supports k <= 250 (byte-packed labels)")
        self.cands = cs.vertices
        self.pos: dict[bytes, int] = {}
        self.size = 0
        self._labels = np.full((0, 0), -1, dtype=np.int16)
        self._lengths = np.zeros(0, dtype=np.int32)

    def _grow(self, rows: int, cols: int) -> None:
        r0, c0 = self._labels.shape
        need_r, need_c = self.size + rows, max(c0, cols)
        if need_r > r0 or need_c > c0:
            new_r = max(need_r, 2 * r0, 1024)
            fresh = np.full((new_r, need_c), -1, dtype=np.int16)
            fresh[: self.size, :c0] = self._labels[: self.size]
            self._labels = fresh
            lengths = np.zeros(new_r, dtype=np.int32)
            lengths[: self.size] = self._lengths[: self.size]
            self._lengths = lengths

    def append(self, batch: Sequence[bytes]) -> None:
        if not batch:
            return
        maxlen = max(len(b) for b in batch)
        self._grow(len(batch), maxlen)
        for b in batch:
            i = self.size
            if b:
                self._labels[i, : len(b)] = np.frombuffer(b, dtype=np.uint8)
            self._lengths[i] = len(b)
            self.pos[b] = i
            self.size += 1

    def frontier_step(self, s: int) -> np.ndarray:
        kind, cands, pos = self.kind, self.cands, self.pos
        fresh: set[bytes] = set()
        for u in cands:
            for w in kind.enumerate_sphere(u, s):
                b = bytes(w)
                if b not in pos:
                    fresh.add(b)
        self.append(sorted(fresh))
        width = kind.sphere_size(s)
        idx = np.empty((len(cands), width), dtype=np.int32)
        for i, u in enumerate(cands):
            row = idx[i]
            for j, w in enumerate(kind.enumerate_sphere(u, s)):
                row[j] = pos[bytes(w)]
        return idx

    def keys_for(self, lo: int, hi: int) -> np.ndarray:
        labels = self._labels[lo:hi]
        lengths = self._lengths[lo:hi]
        h = np.full(hi - lo, mix64(_TREE_TAG, self.kind.k), dtype=np.uint64)
        h = fold_hash_np(h, lengths.astype(np.uint64))
        for j in range(labels.shape[1] if labels.size else 0):
            folded = fold_hash_np(h, labels[:, j].astype(np.uint64))
            h = np.where(j < lengths, folded, h)
        return h

    def distances_to(self, v: Vertex, m: int) -> np.ndarray:
        lengths = self._lengths[:m].astype(np.int64)
        ls = len(v)
        if ls == 0:
            return lengths
        labels = self._labels[:m, :ls]
        src = np.asarray(v, dtype=np.int16)
        matched = np.logical_and.accumulate(labels == src, axis=1)
        lcp = matched.sum(axis=1)
        return lengths + ls - 2 * lcp

    def vertex_at(self, i: int) -> Vertex:
        return tuple(int(c) for c in self._labels[i, : self._lengths[i]])


class _LatticeStore:
    def __init__(self, cs: CandidateSet):
        self.kind: Lattice = cs.kind
        self.cands = cs.vertices
        self.v0 = np.asarray(cs.v0, dtype=np.int64)
        self.size = 0
        self._coords = np.zeros((0, self.kind.ell), dtype=np.int64)
        self._grid = np.full(0, -1, dtype=np.int64)
        self._radius = -1
        self._cand_coords = np.asarray(cs.vertices, dtype=np.int64).reshape(len(cs.vertices), self.kind.ell)

    def _grow(self, rows: int) -> None:
        r0 = self._coords.shape[0]
        if self.size + rows > r0:
            fresh = np.zeros((max(self.size + rows, 2 * r0, 1024), self.kind.ell), dtype=np.int64)
            fresh[: self.size] = self._coords[: self.size]
            self._coords = fresh

    def _ensure_grid(self, radius: int) -> None:
        if radius <= self._radius:
            return
        ell = self.kind.ell
        side = 2 * radius + 1
        if side**ell > 64 * DEFAULT_BALL_CAP:
            raise BallSizeError(f"lattice lookup grid {side}^{ell} exceeds cap")
        self._radius = radius
        self._lo = self.v0 - radius
        self._dims = (side,) * ell
        self._grid = np.full(side**ell, -1, dtype=np.int64)
        if self.size:
            flat = np.ravel_multi_index((self._coords[: self.size] - self._lo).T, self._dims)
            self._grid[flat] = np.arange(self.size)

    def _lookup(self, pts: np.ndarray) -> np.ndarray:
        flat = np.ravel_multi_index((pts - self._lo).T, self._dims)
        return self._grid[flat]

    def append(self, batch: np.ndarray) -> None:
        if not len(batch):
            return
        self._grow(len(batch))
        self._coords[self.size : self.size + len(batch)] = batch
        flat = np.ravel_multi_index((batch - self._lo).T, self._dims)
        self._grid[flat] = np.arange(self.size, self.size + len(batch))
        self.size += len(batch)

    def frontier_step(self, s: int) -> np.ndarray:
        kind = self.kind
        offs = kind.sphere_offsets(s)
        pts = (self._cand_coords[:, None, :] + offs[None, :, :]).reshape(-1, kind.ell)
        self._ensure_grid(int(np.abs(pts - self.v0).sum(axis=1).max(initial=0)))
        hit = self._lookup(pts)
        missing = pts[hit < 0]
        if len(missing):
            self.append(np.unique(missing, axis=0))
            hit = self._lookup(pts)
        return hit.reshape(len(self.cands), len(offs)).astype(np.int32)

    def keys_for(self, lo: int, hi: int) -> np.ndarray:
        coords = self._coords[lo:hi]
        h = np.full(hi - lo, mix64(_LATTICE_TAG, self.kind.ell), dtype=np.uint64)
        for j in range(self.kind.ell):
            h = fold_hash_np(h, coords[:, j].astype(np.uint64))
        return h

    def distances_to(self, v: Vertex, m: int) -> np.ndarray:
        return np.abs(self._coords[:m] - np.asarray(v, dtype=np.int64)).sum(axis=1)

    def vertex_at(self, i: int) -> Vertex:
        return tuple(int(c) for c in self._coords[i])


# ---------------------------------------------------------------------------
# Geometry and regions
# ---------------------------------------------------------------------------


class CascadeGeometry:
    """Per-candidate-set observation machinery, built lazily per time step.

    Immutable once a step is built; safe to share across trials.  Worker
    processes build their own copy (nothing here is synchronized).
    """

    def __init__(self, cs: CandidateSet):
        self.cs = cs
        self.kind = cs.kind
        self.store = _TreeStore(cs) if isinstance(cs.kind, RegularTree) else _LatticeStore(cs)
        self._keys = np.zeros(0, dtype=np.uint64)
        self._m_at: list[int] = []
        self._ball_idx: list[np.ndarray] = []

    @property
    def built_t(self) -> int:
        return len(self._m_at) - 1

    def ensure(self, t: int) -> None:
        while self.built_t < t:
            self._build_step(self.built_t + 1)

    def _build_step(self, s: int) -> None:
        bound = self.kind.ball_size(self.cs.r_n + 1 + s)
        if bound > DEFAULT_BALL_CAP:
            raise BallSizeError(
                f"observation region at t={s} may reach {bound} vertices; "
                f"cap is {DEFAULT_BALL_CAP}"
            )
        frontier = self.store.frontier_step(s)
        if self.store.size > len(self._keys):
            fresh = self.store.keys_for(len(self._keys), self.store.size)
            self._keys = np.concatenate([self._keys, fresh])
        ball = frontier if s == 0 else np.hstack([self._ball_idx[s - 1], frontier])
        self._m_at.append(self.store.size)
        self._ball_idx.append(ball)

    def region(self, t: int) -> "ObservationRegion":
        if t < 0:
            raise ValueError("t must be >= 0")
        self.ensure(t)
        return ObservationRegion(geometry=self, t=t)


_GEOMETRY_CACHE: dict[CandidateSet, CascadeGeometry] = {}


def geometry_for(cs: CandidateSet) -> CascadeGeometry:
    geo = _GEOMETRY_CACHE.get(cs)
    if geo is None:
        geo = _GEOMETRY_CACHE[cs] = CascadeGeometry(cs)
    return geo


def clear_geometry_cache() -> None:
    _GEOMETRY_CACHE.clear()


@dataclass(frozen=True)
class ObservationRegion:
    """The union of candidate balls at one time step.

    Vertices are listed in first-appearance order (canonical within each
    step's frontier batch); the order is deterministic and stable as t
    grows, which keeps per-candidate index rows valid across steps.
    """

    geometry: CascadeGeometry
    t: int

    @property
    def candidate_set(self) -> CandidateSet:
        return self.geometry.cs

    @property
    def size(self) -> int:
        return self.geometry._m_at[self.t]

    @property
    def keys(self) -> np.ndarray:
        return self.geometry._keys[: self.size]

    @property
    def ball_indices(self) -> np.ndarray:
        """(n, |N(t)|) positions of each candidate's ball in the region."""
        return self.geometry._ball_idx[self.t]

    def vertices(self) -> list[Vertex]:
        store = self.geometry.store
        return [store.vertex_at(i) for i in range(self.size)]

    def distances_to(self, v: Vertex) -> np.ndarray:
        self.geometry.kind.validate_vertex(v)
        return self.geometry.store.distances_to(v, self.size)

    def candidate_ball_sums(self, values: np.ndarray) -> np.ndarray:
        """sum of ``values`` over N_u(t) for every candidate u (length n)."""
        return values[self.ball_indices].sum(axis=1)


@dataclass(frozen=True)
class Observations:
    """One round of public signals over a region, aligned with its vertices."""

    region: ObservationRegion
    channel: Channel
    values: np.ndarray
    affected: np.ndarray

    def pairs(self) -> list[tuple[Vertex, object]]:
        verts = self.region.vertices()
        return [(v, self.values[i]) for i, v in enumerate(verts)]


def observe(trace: CascadeTrace, region: ObservationRegion) -> Observations:
    """Signals for every region vertex at time region.t.

    Draws are keyed by (seed, vertex, t): independent across keys,
    identical for identical keys, regardless of query order.
    """
    if trace.kind != region.geometry.kind:
        raise VertexEncodingError("trace and region are for different graph kinds")
    if region.t > trace.horizon:
        raise ValueError(f"t={region.t} beyond trace horizon {trace.horizon}")
    affected = region.distances_to(trace.source) <= region.t
    uniforms = counter_uniforms(trace.seed, region.keys, region.t)
    values = trace.channel.draw_from_uniforms(uniforms, affected)
    return Observations(region=region, channel=trace.channel, values=values, affected=affected)


def dump_trace(trace: CascadeTrace, cs: CandidateSet, t_max: int, fileobj) -> None:
    """Replay dump: one row per (t, region vertex) with the drawn signal."""
    import csv

    geo = geometry_for(cs)
    writer = csv.writer(fileobj, lineterminator="\n")
    fileobj.write("# quicksource trace v1\n")
    writer.writerow(["t", "vertex", "affected", "observation"])
    kind, channel = trace.kind, trace.channel
    for t in range(t_max + 1):
        obs = observe(trace, geo.region(t))
        verts = obs.region.vertices()
        for i, v in enumerate(verts):
            writer.writerow(
                [t, kind.format_vertex(v), int(obs.affected[i]), channel.format_observation(obs.values[i])]
            )
