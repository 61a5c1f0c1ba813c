"""Geometry of the hypercubic lattice.

Vertices are plain integer tuples, an undirected edge is identified by its
canonical form ``(base, axis)`` where ``base`` is the endpoint with the
smaller coordinate along ``axis``, and balls are graph-distance (L1) balls.
Everything here is pure and hashable so the rest of the package can key
random number streams and bitsets on it.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Dict, Iterable, Iterator, List, Sequence, Set, Tuple

Vertex = Tuple[int, ...]
Edge = Tuple[Vertex, int]  # (base, axis); joins base and base + unit(axis)

INFINITY = float("inf")


def unit(d: int, axis: int) -> Vertex:
    """The canonical basis vector along ``axis`` in d dimensions."""
    return tuple(1 if i == axis else 0 for i in range(d))


def add(x: Vertex, y: Sequence[int]) -> Vertex:
    return tuple(a + b for a, b in zip(x, y))


def sub(x: Vertex, y: Sequence[int]) -> Vertex:
    return tuple(a - b for a, b in zip(x, y))


def l1(x: Vertex, y: Vertex | None = None) -> int:
    if y is None:
        return sum(abs(a) for a in x)
    return sum(abs(a - b) for a, b in zip(x, y))


def dot(x: Sequence[float], y: Sequence[float]) -> float:
    return sum(a * b for a, b in zip(x, y))


def directions(d: int) -> List[Vertex]:
    """The 2d signed unit vectors, positive axes first."""
    out: List[Vertex] = []
    for axis in range(d):
        out.append(unit(d, axis))
    for axis in range(d):
        out.append(tuple(-c for c in unit(d, axis)))
    return out


def neighbors(x: Vertex) -> List[Vertex]:
    d = len(x)
    out = []
    for axis in range(d):
        out.append(tuple(c + 1 if i == axis else c for i, c in enumerate(x)))
        out.append(tuple(c - 1 if i == axis else c for i, c in enumerate(x)))
    return out


def canonical_edge(x: Vertex, y: Vertex) -> Edge:
    """Canonical form of the edge joining adjacent vertices x and y.

    Raises:
        ValueError: if x and y are not nearest neighbours.
    """
    diff_axis = -1
    for i, (a, b) in enumerate(zip(x, y)):
        if a != b:
            if diff_axis >= 0 or abs(a - b) != 1:
                raise ValueError(f"{x} and {y} are not adjacent")
            diff_axis = i
    if diff_axis < 0:
        raise ValueError(f"{x} and {y} are not adjacent")
    base = x if x[diff_axis] < y[diff_axis] else y
    return (base, diff_axis)


def edge_endpoints(e: Edge) -> Tuple[Vertex, Vertex]:
    base, axis = e
    return base, tuple(c + 1 if i == axis else c for i, c in enumerate(base))


def incident_edges(x: Vertex) -> List[Tuple[Edge, Vertex]]:
    """All 2d edges at x as (canonical edge, other endpoint) pairs."""
    d = len(x)
    out = []
    for axis in range(d):
        up = tuple(c + 1 if i == axis else c for i, c in enumerate(x))
        down = tuple(c - 1 if i == axis else c for i, c in enumerate(x))
        out.append(((x, axis), up))
        out.append(((down, axis), down))
    return out


@dataclass(frozen=True)
class Ball:
    """Graph-distance ball B(center, radius)."""

    center: Vertex
    radius: int

    def __post_init__(self) -> None:
        if self.radius < 0:
            raise ValueError("negative radius")

    def __contains__(self, x: Vertex) -> bool:
        return l1(x, self.center) <= self.radius

    def vertices(self) -> List[Vertex]:
        return ball_list(self.center, self.radius)


def _offsets(d: int, r: int) -> List[Vertex]:
    """All integer vectors of L1 norm at most r, lexicographically sorted."""

    def rec(dims: int, budget: int) -> Iterator[Tuple[int, ...]]:
        if dims == 0:
            yield ()
            return
        for c in range(-budget, budget + 1):
            for rest in rec(dims - 1, budget - abs(c)):
                yield (c,) + rest

    return sorted(rec(d, r))


@lru_cache(maxsize=256)
def _offsets_cached(d: int, r: int) -> Tuple[Vertex, ...]:
    return tuple(_offsets(d, r))


def ball(center: Vertex, r: int) -> Set[Vertex]:
    """The set of vertices within graph distance r of center."""
    if r < 0:
        raise ValueError("negative radius")
    return {add(center, off) for off in _offsets_cached(len(center), r)}


def ball_list(center: Vertex, r: int) -> List[Vertex]:
    """Same as `ball` but as a deterministic sorted list (for indexing)."""
    if r < 0:
        raise ValueError("negative radius")
    return [add(center, off) for off in _offsets_cached(len(center), r)]


@lru_cache(maxsize=512)
def _sphere_offsets(d: int, r: int) -> Tuple[Vertex, ...]:
    if r == 0:
        return ((0,) * d,)
    return tuple(off for off in _offsets_cached(d, r) if l1(off) == r)


def sphere(center: Vertex, r: int) -> List[Vertex]:
    """Vertices at graph distance exactly r from center, sorted."""
    offs = _sphere_offsets(len(center), r)
    if not any(center):
        return list(offs)
    return [add(center, off) for off in offs]


def boundary(V: Iterable[Vertex]) -> Set[Vertex]:
    """Vertices of V having at least one neighbour outside V."""
    vs = set(V)
    return {x for x in vs if any(y not in vs for y in neighbors(x))}


def edge_boundary(V: Iterable[Vertex]) -> Set[Edge]:
    """Edges with exactly one endpoint in V."""
    vs = set(V)
    out: Set[Edge] = set()
    for x in vs:
        for y in neighbors(x):
            if y not in vs:
                out.add(canonical_edge(x, y))
    return out


def inner_edges(V: Iterable[Vertex]) -> Set[Edge]:
    """Edges with both endpoints in V."""
    vs = set(V)
    out: Set[Edge] = set()
    for x in vs:
        for y in neighbors(x):
            if y in vs:
                out.add(canonical_edge(x, y))
    return out


@lru_cache(maxsize=256)
def _ball_edge_offsets(d: int, r: int) -> Tuple[Edge, ...]:
    offs = _offsets_cached(d, r)
    vs = set(offs)
    out: List[Edge] = []
    for v in offs:
        for axis in range(d):
            w = tuple(c + 1 if i == axis else c for i, c in enumerate(v))
            if w in vs:
                out.append((v, axis))
    return tuple(sorted(out))


def ball_inner_edges(center: Vertex, r: int) -> List[Edge]:
    """Canonical edges with both endpoints in B(center, r), sorted.

    Same contents as inner_edges(ball_list(center, r)) but served from a
    cached per-radius template, so repeated windows cost one translation.
    """
    if r < 0:
        raise ValueError("negative radius")
    tmpl = _ball_edge_offsets(len(center), r)
    if not any(center):
        return list(tmpl)
    return [(add(base, center), axis) for base, axis in tmpl]


@lru_cache(maxsize=512)
def _ring_edge_offsets(d: int, k: int) -> Tuple[Tuple[Vertex, Vertex, Edge], ...]:
    out: List[Tuple[Vertex, Vertex, Edge]] = []
    for v in _sphere_offsets(d, k):
        for axis in range(d):
            for step in (1, -1):
                u = tuple(c + (step if i == axis else 0) for i, c in enumerate(v))
                if l1(u) != k - 1:
                    continue
                base = v if step == 1 else u
                out.append((v, u, (base, axis)))
    return tuple(out)


def ring_edges(center: Vertex, k: int) -> List[Tuple[Vertex, Vertex, Edge]]:
    """Every lattice edge joining the spheres of radii k and k - 1.

    Entries are (outer endpoint, inner endpoint, canonical edge).  Adjacent
    vertices differ by one in L1 norm, so these rings partition the edges of
    B^E(center, R) as k runs over 1..R.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    tmpl = _ring_edge_offsets(len(center), k)
    if not any(center):
        return list(tmpl)
    return [
        (add(v, center), add(u, center), (add(base, center), axis))
        for v, u, (base, axis) in tmpl
    ]


def ball_size(d: int, r: int) -> int:
    """|B(0, r)| by dimension-wise convolution (exact count)."""
    if r < 0:
        raise ValueError("negative radius")
    # counts[s] = number of points of Z^dims with L1 norm exactly s
    counts = [1] + [0] * r
    for _ in range(d):
        nxt = [0] * (r + 1)
        for s, c in enumerate(counts):
            if c == 0:
                continue
            nxt[s] += c  # coordinate 0
            for a in range(1, r - s + 1):
                nxt[s + a] += 2 * c  # coordinate +-a
        counts = nxt
    return sum(counts)


def sphere_size(d: int, r: int) -> int:
    if r == 0:
        return 1
    return ball_size(d, r) - ball_size(d, r - 1)


def rho_d(d: int, r_max: int) -> float:
    """Smallest rho with |B(0,r)| <= rho r^d and |dB(0,r)| <= rho r^(d-1)
    for all 1 <= r <= r_max.

    The volume ratio |B(0,r)|/r^d is maximized at small r (it decreases
    toward the simplex volume 2^d/d! as r grows), so enumeration up to a
    moderate r_max is safe for any downstream use within that range.
    """
    if d < 2 or r_max < 1:
        raise ValueError("need d >= 2 and r_max >= 1")
    best = 0.0
    for r in range(1, r_max + 1):
        best = max(best, ball_size(d, r) / r**d, sphere_size(d, r) / r ** (d - 1))
    return best


def graph_distance(
    open_edges: Callable[[Edge], bool],
    x: Vertex,
    y: Vertex,
    search_box: Ball,
) -> float:
    """BFS distance from x to y using open edges inside search_box.

    Only edges with both endpoints in the box are considered; returns
    INFINITY when y is unreachable within the box.
    """
    if x not in search_box or y not in search_box:
        raise ValueError("endpoints must lie in the search box")
    if x == y:
        return 0
    dist: Dict[Vertex, int] = {x: 0}
    queue = deque([x])
    while queue:
        v = queue.popleft()
        dv = dist[v]
        for w in neighbors(v):
            if w in dist or w not in search_box:
                continue
            if not open_edges(canonical_edge(v, w)):
                continue
            if w == y:
                return dv + 1
            dist[w] = dv + 1
            queue.append(w)
    return INFINITY
