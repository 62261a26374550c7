"""Implicit infinite regular trees and lattices.

Vertices are addressed without storing any adjacency: a lattice vertex is
its integer coordinate tuple, and a tree vertex is the label path from the
designated root (first step in ``0..k-1``, later steps in ``0..k-2``,
empty path = root).  Canonical order is plain lexicographic comparison of
these tuples; it is a stable contract because candidate-set construction
and every argmin tie-break in the estimators depend on it.

All counting functions return exact Python integers, so there is no
overflow to detect; the resource limit that *can* bite is the size of an
explicit ball enumeration, which raises :class:`BallSizeError` beyond a
configurable cap.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from itertools import product
from typing import Iterator, Union

import numpy as np

from .errors import BallSizeError, VertexEncodingError
from .rng import mix64

Vertex = tuple  # lattice: ell ints; tree: path labels

#: Hard cap on explicit enumerations (vertices); well above desk scale.
DEFAULT_BALL_CAP = 8_000_000

_TREE_TAG = 0x7263
_LATTICE_TAG = 0x6C61


@dataclass(frozen=True)
class RegularTree:
    """Infinite k-regular tree, k >= 3 (the 2-regular tree is the 1-d lattice)."""

    k: int

    def __post_init__(self):
        if self.k < 3:
            raise ValueError(f"regular tree requires k >= 3, got k={self.k}")

    # -- vertex addressing ------------------------------------------------

    @property
    def origin(self) -> Vertex:
        return ()

    def validate_vertex(self, v: Vertex) -> None:
        if not isinstance(v, tuple):
            raise VertexEncodingError(f"tree vertex must be a tuple of labels, got {v!r}")
        for i, c in enumerate(v):
            limit = self.k if i == 0 else self.k - 1
            if not isinstance(c, int) or not 0 <= c < limit:
                raise VertexEncodingError(f"label {c!r} at position {i} invalid for k={self.k}")

    def child_count(self, v: Vertex) -> int:
        return self.k if not v else self.k - 1

    def neighbors(self, v: Vertex) -> list[Vertex]:
        out = [v[:-1]] if v else []
        out.extend(v + (i,) for i in range(self.child_count(v)))
        return out

    def distance(self, u: Vertex, v: Vertex) -> int:
        self.validate_vertex(u)
        self.validate_vertex(v)
        c = 0
        for a, b in zip(u, v):
            if a != b:
                break
            c += 1
        return len(u) + len(v) - 2 * c

    def vertex_key(self, v: Vertex) -> int:
        return mix64(_TREE_TAG, self.k, len(v), *v)

    def format_vertex(self, v: Vertex) -> str:
        return "v" if not v else "v/" + "/".join(str(c) for c in v)

    def parse_vertex(self, s: str) -> Vertex:
        parts = s.strip().split("/")
        if parts[0] != "v":
            raise VertexEncodingError(f"tree vertex string must start with 'v': {s!r}")
        v = tuple(int(p) for p in parts[1:])
        self.validate_vertex(v)
        return v

    # -- neighborhood combinatorics ---------------------------------------

    def sphere_size(self, t: int) -> int:
        if t < 0:
            raise ValueError("t must be >= 0")
        if t == 0:
            return 1
        return self.k * (self.k - 1) ** (t - 1)

    def ball_size(self, t: int) -> int:
        if t < 0:
            raise ValueError("t must be >= 0")
        num = self.k * ((self.k - 1) ** t - 1)
        assert num % (self.k - 2) == 0
        return 1 + num // (self.k - 2)

    def descend(self, anchor: Vertex, depth: int, banned_first: int | None) -> Iterator[Vertex]:
        """Vertices exactly ``depth`` levels below ``anchor``.

        ``banned_first`` excludes one child branch; passing the label of the
        child on the path back toward a sphere center makes the up-then-down
        decomposition of a sphere enumerate each vertex exactly once.
        """
        if depth == 0:
            yield anchor
            return
        firsts = [i for i in range(self.child_count(anchor)) if i != banned_first]
        if depth == 1:
            for i in firsts:
                yield anchor + (i,)
            return
        for i in firsts:
            base = anchor + (i,)
            for suffix in product(range(self.k - 1), repeat=depth - 1):
                yield base + suffix

    def enumerate_sphere(self, v: Vertex, t: int) -> Iterator[Vertex]:
        for up in range(min(t, len(v)) + 1):
            down = t - up
            if down == 0 and up != t:
                continue
            anchor = v[: len(v) - up]
            banned = v[len(v) - up] if up >= 1 and down >= 1 else None
            if down == 0:
                yield anchor
            else:
                yield from self.descend(anchor, down, banned)

    def enumerate_ball(self, v: Vertex, t: int, max_size: int = DEFAULT_BALL_CAP) -> list[Vertex]:
        self.validate_vertex(v)
        if t < 0:
            raise ValueError("t must be >= 0")
        size = self.ball_size(t)
        if size > max_size:
            raise BallSizeError(f"tree ball |N({t})| = {size} exceeds cap {max_size}")
        out: list[Vertex] = []
        for s in range(t + 1):
            out.extend(self.enumerate_sphere(v, s))
        out.sort()
        return out


@dataclass(frozen=True)
class Lattice:
    """Infinite ell-dimensional lattice on Z^ell with L1 (hop) distance."""

    ell: int

    def __post_init__(self):
        if self.ell < 1:
            raise ValueError(f"lattice requires ell >= 1, got ell={self.ell}")

    @property
    def origin(self) -> Vertex:
        return (0,) * self.ell

    def validate_vertex(self, v: Vertex) -> None:
        if not isinstance(v, tuple) or len(v) != self.ell:
            raise VertexEncodingError(f"lattice vertex must be a {self.ell}-tuple, got {v!r}")
        for c in v:
            if not isinstance(c, (int, np.integer)):
                raise VertexEncodingError(f"lattice coordinate {c!r} is not an integer")

    def neighbors(self, v: Vertex) -> list[Vertex]:
        out = []
        for i in range(self.ell):
            for d in (-1, 1):
                out.append(v[:i] + (v[i] + d,) + v[i + 1 :])
        return out

    def distance(self, u: Vertex, v: Vertex) -> int:
        self.validate_vertex(u)
        self.validate_vertex(v)
        return sum(abs(a - b) for a, b in zip(u, v))

    def vertex_key(self, v: Vertex) -> int:
        return mix64(_LATTICE_TAG, self.ell, *v)

    def format_vertex(self, v: Vertex) -> str:
        return "/".join(str(c) for c in v)

    def parse_vertex(self, s: str) -> Vertex:
        v = tuple(int(p) for p in s.strip().split("/"))
        self.validate_vertex(v)
        return v

    # -- neighborhood combinatorics ---------------------------------------

    def sphere_size(self, t: int) -> int:
        # Partition the L1 sphere by the number j of nonzero coordinates:
        # 2^j sign patterns, C(ell, j) coordinate choices, C(t-1, j-1)
        # positive compositions of t into j parts.
        if t < 0:
            raise ValueError("t must be >= 0")
        if t == 0:
            return 1
        return sum(
            2**j * math.comb(self.ell, j) * math.comb(t - 1, j - 1)
            for j in range(1, min(self.ell, t) + 1)
        )

    def ball_size(self, t: int) -> int:
        if t < 0:
            raise ValueError("t must be >= 0")
        return sum(self.sphere_size(s) for s in range(t + 1))

    def ball_offsets(self, t: int, max_size: int = DEFAULT_BALL_CAP) -> np.ndarray:
        """All integer vectors of L1 norm <= t, lexicographically sorted."""
        return _lattice_ball_offsets(self.ell, t, max_size)

    def sphere_offsets(self, t: int, max_size: int = DEFAULT_BALL_CAP) -> np.ndarray:
        offs = self.ball_offsets(t, max_size)
        return offs[np.abs(offs).sum(axis=1) == t]

    def enumerate_ball(self, v: Vertex, t: int, max_size: int = DEFAULT_BALL_CAP) -> list[Vertex]:
        self.validate_vertex(v)
        if t < 0:
            raise ValueError("t must be >= 0")
        pts = self.ball_offsets(t, max_size) + np.asarray(v, dtype=np.int64)
        return [tuple(int(c) for c in row) for row in pts]

    def enumerate_sphere(self, v: Vertex, t: int) -> Iterator[Vertex]:
        base = np.asarray(v, dtype=np.int64)
        for row in self.sphere_offsets(t) + base:
            yield tuple(int(c) for c in row)


GraphKind = Union[RegularTree, Lattice]


@lru_cache(maxsize=None)
def _lattice_ball_offsets(ell: int, t: int, max_size: int) -> np.ndarray:
    if (2 * t + 1) ** ell > 8 * max_size:
        raise BallSizeError(f"lattice ball grid (2*{t}+1)^{ell} exceeds cap {max_size}")
    axes = [np.arange(-t, t + 1, dtype=np.int64)] * ell
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, ell)
    offs = grid[np.abs(grid).sum(axis=1) <= t]
    order = np.lexsort(tuple(offs[:, i] for i in range(ell - 1, -1, -1)))
    offs = offs[order]
    offs.setflags(write=False)
    return offs


def parse_graph(spec: str) -> GraphKind:
    """Parse ``tree:k`` or ``lattice:ell``."""
    try:
        name, _, arg = spec.partition(":")
        if name == "tree":
            return RegularTree(int(arg))
        if name == "lattice":
            return Lattice(int(arg))
    except ValueError as exc:
        raise ValueError(f"bad graph spec {spec!r}: {exc}") from None
    raise ValueError(f"bad graph spec {spec!r}; expected 'tree:k' or 'lattice:ell'")


def format_graph(kind: GraphKind) -> str:
    if isinstance(kind, RegularTree):
        return f"tree:{kind.k}"
    return f"lattice:{kind.ell}"


# ---------------------------------------------------------------------------
# Cumulative growth functions and their generalized inverses
# ---------------------------------------------------------------------------


class GrowthTables:
    """Memoized |dN(t)|, |N(t)|, f(t), f1(t) and inverses for one graph kind.

    f(t) is the cumulative ball size (total affected signal count through
    time t) and f1(t) the cumulative one-step neighborhood difference.  All
    tables are grown on demand; instances obtained through
    :func:`growth_tables` are per-process singletons, so precompute before
    sharing across threads (worker processes each build their own).
    """

    def __init__(self, kind: GraphKind):
        self.kind = kind
        self._sphere: list[int] = []
        self._ball: list[int] = []
        self._f: list[int] = []
        self._f1: list[int] = []
        self._inter: list[int] = []  # adjacent-ball intersection (lattices)

    def _extend(self, t: int) -> None:
        # every quantity is advanced incrementally so extension to horizon t
        # costs O(t) table steps (the f1 grid can push t into the millions)
        while len(self._f) <= t:
            s = len(self._f)
            sph = self.kind.sphere_size(s)
            ball = (self._ball[-1] if self._ball else 0) + sph
            self._sphere.append(sph)
            self._ball.append(ball)
            self._f.append((self._f[-1] if self._f else 0) + ball)
            self._f1.append((self._f1[-1] if self._f1 else 0) + self._step_diff(s, ball))

    def _step_diff(self, s: int, ball: int) -> int:
        # |N_v(s) \ N_u(s)| for adjacent u, v.
        kind = self.kind
        if isinstance(kind, RegularTree):
            return (kind.k - 1) ** s
        if s == 0:
            inter = 0
        elif kind.ell == 1:
            inter = 2 * s
        else:
            # slab decomposition: the intersection gains two radius-(s-1)
            # balls of dimension ell-1 per step
            inter = self._inter[-1] + 2 * growth_tables(Lattice(kind.ell - 1)).ball(s - 1)
        self._inter.append(inter)
        return ball - inter

    def sphere(self, t: int) -> int:
        self._extend(t)
        return self._sphere[t]

    def ball(self, t: int) -> int:
        self._extend(t)
        return self._ball[t]

    def f(self, t: int) -> int:
        if t < 0:
            raise ValueError("t must be >= 0")
        self._extend(t)
        return self._f[t]

    def f1(self, t: int) -> int:
        if t < 0:
            raise ValueError("t must be >= 0")
        self._extend(t)
        return self._f1[t]

    def f_vu(self, v: Vertex, u: Vertex, t: int) -> int:
        """Cumulative neighborhood difference sum_{s<=t} |N_v(s) \\ N_u(s)|."""
        if u == v:
            raise ValueError("f_vu requires u != v")
        if t < 0:
            raise ValueError("t must be >= 0")
        kind = self.kind
        d = kind.distance(v, u)
        if d > 2 * t:
            return self.f(t)  # disjoint neighborhoods at every step
        total = 0
        for s in range(t + 1):
            total += self.ball(s) - pair_intersection(kind, v, u, s)
        return total

    def _invert(self, fn, z) -> int:
        z = float(z)
        t = 0
        while fn(t) < z:
            t += 1
        return t

    def F(self, z) -> int:
        """Smallest t with f(t) >= z (generalized inverse)."""
        return self._invert(self.f, z)

    def F1(self, z) -> int:
        return self._invert(self.f1, z)

    def F_vu(self, v: Vertex, u: Vertex, z) -> int:
        return self._invert(lambda t: self.f_vu(v, u, t), z)


@lru_cache(maxsize=None)
def growth_tables(kind: GraphKind) -> GrowthTables:
    return GrowthTables(kind)


def _lattice_adjacent_intersection(ell: int, s: int) -> int:
    # |N_v(s) ∩ N_u(s)| for adjacent u, v.  Slicing the shared region along
    # the step axis leaves a full (ell-1)-dimensional ball of radius j for
    # j = 0..s-1, twice (once per side of the shared hyperplane pair).
    if s == 0:
        return 0
    if ell == 1:
        return 2 * s
    gt = growth_tables(Lattice(ell - 1))
    return 2 * sum(gt.ball(j) for j in range(s))


@lru_cache(maxsize=None)
def _tree_intersection_by_distance(k: int, d: int, s: int) -> int:
    if d > 2 * s:
        return 0
    kind = RegularTree(k)
    v, u = (), (0,) * d
    return sum(1 for w in kind.enumerate_ball(v, s) if kind.distance(w, u) <= s)


@lru_cache(maxsize=None)
def _lattice_intersection_by_offset(ell: int, off: Vertex, s: int) -> int:
    if sum(abs(c) for c in off) > 2 * s:
        return 0
    offs = _lattice_ball_offsets(ell, s, DEFAULT_BALL_CAP)
    return int((np.abs(offs - np.asarray(off, dtype=np.int64)).sum(axis=1) <= s).sum())


def pair_intersection(kind: GraphKind, v: Vertex, u: Vertex, s: int) -> int:
    """|N_v(s) ∩ N_u(s)|, exploiting vertex transitivity for caching."""
    if isinstance(kind, RegularTree):
        return _tree_intersection_by_distance(kind.k, kind.distance(v, u), s)
    # canonical offset: intersection size is invariant under coordinate
    # permutations and sign flips
    off = tuple(sorted((abs(a - b) for a, b in zip(u, v)), reverse=True))
    return _lattice_intersection_by_offset(kind.ell, off, s)


def pair_overlap_sum(kind: GraphKind, v: Vertex, u: Vertex, t: int) -> int:
    """sum_{s<=t} |N_v(s) ∩ N_u(s)| (exponent in the posterior-weight mean)."""
    return sum(pair_intersection(kind, v, u, s) for s in range(t + 1))


# ---------------------------------------------------------------------------
# Candidate sets
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CandidateSet:
    """n candidate sources sandwiched between balls of radius r_n and r_n + 1.

    ``vertices`` is canonically ordered; every index-based API in the
    estimators refers to positions in this tuple.
    """

    kind: GraphKind
    v0: Vertex
    n: int
    vertices: tuple
    r_n: int

    def index_of(self, v: Vertex) -> int:
        return _candidate_index(self)[v]

    def __contains__(self, v: Vertex) -> bool:
        return v in _candidate_index(self)

    def distances_from(self, u: Vertex) -> list[int]:
        d = self.kind.distance
        return [d(u, w) for w in self.vertices]


@lru_cache(maxsize=256)
def _candidate_index(cs: CandidateSet) -> dict:
    return {v: i for i, v in enumerate(cs.vertices)}


def make_candidate_set(kind: GraphKind, v0: Vertex, n: int) -> CandidateSet:
    """Ball of the largest radius r_n with |N(r_n)| <= n, padded to size n
    with the canonically first vertices of the next sphere."""
    kind.validate_vertex(v0)
    if n < 1:
        raise ValueError("candidate set size must be >= 1")
    r = 0
    while kind.ball_size(r + 1) <= n:
        r += 1
    chosen = kind.enumerate_ball(v0, r)
    missing = n - len(chosen)
    if missing:
        boundary = sorted(kind.enumerate_sphere(v0, r + 1))
        chosen.extend(boundary[:missing])
        chosen.sort()
    return CandidateSet(kind=kind, v0=v0, n=n, vertices=tuple(chosen), r_n=r)


def geodesic_sum(cs: CandidateSet, u: Vertex) -> int:
    """Exact sum of distances from u to every candidate."""
    return sum(cs.distances_from(u))


def geodesic_sq_sum(cs: CandidateSet, u: Vertex) -> int:
    """Exact sum of squared distances from u to every candidate."""
    return sum(d * d for d in cs.distances_from(u))
