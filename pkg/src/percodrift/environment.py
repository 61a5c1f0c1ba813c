"""Percolation configurations.

An environment is a random assignment open/closed to every lattice edge.  It
is realized lazily: an `EnvironmentOracle` answers any single edge query as a
pure function of (seed, edge), and an `EdgeConfig` adds an explicit bit
window plus a surgery overlay on top of an optional oracle.

Surgery follows the two-tier convention: a primary region whose closed set
is forced exactly, and a secondary region applied only where the primary one
is silent.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Dict, FrozenSet, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from . import rng
from .lattice import (
    Ball,
    Edge,
    Vertex,
    ball_inner_edges,
    ball_list,
    canonical_edge,
    directions,
    edge_endpoints,
    incident_edges,
    sphere,
)

_EDGE_STREAM_TAG = 0x45444745  # distinguishes edge-state draws from other uses


class UnresolvableEdgeError(KeyError):
    """Raised when an edge outside the window is queried with no oracle."""


class ConditioningBudgetError(RuntimeError):
    """Raised when rejection sampling for the origin-cluster proxy fails."""

    def __init__(self, attempts: int, accepted: int):
        self.attempts = attempts
        self.accepted = accepted
        rate = accepted / attempts if attempts else 0.0
        super().__init__(
            f"conditioning budget exhausted after {attempts} attempts "
            f"(estimated acceptance rate {rate:.3g})"
        )


@dataclass(frozen=True)
class EnvironmentOracle:
    """Seed-keyed Bernoulli states on every edge; open with probability p."""

    seed: int
    p: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.p <= 1.0:
            raise ValueError("p must lie in [0, 1]")

    def edge_state(self, e: Edge) -> bool:
        """True iff the edge is open. Pure in (seed, e, p)."""
        base, axis = e
        h = rng.mix(self.seed, _EDGE_STREAM_TAG, *base, axis)
        return rng.uniform01(h) < self.p

    def edge_states(self, edges: Sequence[Edge]) -> np.ndarray:
        """Vectorized `edge_state` over a list of edges (same bits)."""
        if not edges:
            return np.zeros(0, dtype=bool)
        h = rng.mix_array(self.seed, _edge_words(edges))
        return rng.uniform01_array(h) < self.p


def _edge_words(edges: Sequence[Edge]) -> np.ndarray:
    """Hash-input rows [tag, *base, axis], one per edge."""
    d = len(edges[0][0])
    words = np.empty((len(edges), d + 2), dtype=np.int64)
    words[:, 0] = _EDGE_STREAM_TAG
    for i, (base, axis) in enumerate(edges):
        words[i, 1 : 1 + d] = base
        words[i, 1 + d] = axis
    return words


def edge_state(oracle: EnvironmentOracle, e: Edge) -> bool:
    return oracle.edge_state(e)


@dataclass
class EdgeConfig:
    """A concrete configuration: window bits, overlay, optional oracle.

    Resolution order for a query: overlay, then window bits, then the
    backing oracle.  Querying outside the window without an oracle raises
    `UnresolvableEdgeError`.
    """

    window: Optional[Ball] = None
    window_index: Dict[Edge, int] = field(default_factory=dict)
    bits: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool))
    overlay: Dict[Edge, bool] = field(default_factory=dict)
    backing: Optional[EnvironmentOracle] = None

    def edge_open(self, e: Edge) -> bool:
        st = self.overlay.get(e)
        if st is not None:
            return st
        idx = self.window_index.get(e)
        if idx is not None:
            return bool(self.bits[idx])
        if self.backing is not None:
            return self.backing.edge_state(e)
        raise UnresolvableEdgeError(e)

    def open_neighbors(self, x: Vertex) -> List[Vertex]:
        return [y for e, y in incident_edges(x) if self.edge_open(e)]


def from_states(states: Dict[Edge, bool], backing: Optional[EnvironmentOracle] = None) -> EdgeConfig:
    """A configuration given by an explicit edge-state dict (as overlay)."""
    return EdgeConfig(overlay=dict(states), backing=backing)


def all_open(backing_p: float = 1.0, seed: int = 0) -> EdgeConfig:
    return EdgeConfig(backing=EnvironmentOracle(seed=seed, p=backing_p))


@lru_cache(maxsize=64)
def _window_geometry(
    center: Vertex, radius: int
) -> Tuple[Tuple[Edge, ...], Dict[Edge, int], np.ndarray]:
    """Edge list, index, and hash words for a window; shared across configs.

    The cached index dict is handed out by reference, so it must never be
    mutated downstream (EdgeConfig only reads it).
    """
    edges = tuple(ball_inner_edges(center, radius))
    index = {e: i for i, e in enumerate(edges)}
    return edges, index, _edge_words(edges)


def materialize(oracle: EnvironmentOracle, window: Ball) -> EdgeConfig:
    """Realize the window's edges into bits; keep the oracle for the rest."""
    _, index, words = _window_geometry(window.center, window.radius)
    bits = rng.uniform01_array(rng.mix_array(oracle.seed, words)) < oracle.p
    return EdgeConfig(window=window, window_index=index, bits=bits, backing=oracle)


@dataclass(frozen=True)
class SurgerySpec:
    """Forced-state regions: closed set B1 inside A1, then B2 inside A2.

    Edges in A1 end up closed exactly when they are in B1; edges of A2 not
    in A1 end up closed exactly when they are in B2; everything else keeps
    its prior state.
    """

    A1: FrozenSet[Edge] = frozenset()
    B1: FrozenSet[Edge] = frozenset()
    A2: FrozenSet[Edge] = frozenset()
    B2: FrozenSet[Edge] = frozenset()

    def __post_init__(self) -> None:
        if not self.B1 <= self.A1:
            raise ValueError("B1 must be a subset of A1")
        if not self.B2 <= self.A2:
            raise ValueError("B2 must be a subset of A2")


def apply_surgery(config: EdgeConfig, spec: SurgerySpec) -> EdgeConfig:
    overlay = dict(config.overlay)
    for e in spec.A2:
        if e not in spec.A1:
            overlay[e] = e not in spec.B2
    for e in spec.A1:
        overlay[e] = e not in spec.B1
    return EdgeConfig(
        window=config.window,
        window_index=config.window_index,
        bits=config.bits,
        overlay=overlay,
        backing=config.backing,
    )


@lru_cache(maxsize=256)
def close_ball_spec(x: Vertex, r: int) -> SurgerySpec:
    """All edges of the edge-ball at x of radius r forced closed."""
    edges = frozenset(ball_inner_edges(x, r))
    return SurgerySpec(A1=edges, B1=edges)


@lru_cache(maxsize=256)
def open_ball_spec(x: Vertex, r: int) -> SurgerySpec:
    edges = frozenset(ball_inner_edges(x, r))
    return SurgerySpec(A1=edges, B1=frozenset())


def local_config_spec(z: Vertex, closed_dirs: Iterable[Vertex]) -> SurgerySpec:
    """Radius-1 surgery at z: incident directions in `closed_dirs` closed,
    the remaining incident directions open."""
    closed = frozenset(canonical_edge(z, tuple(a + b for a, b in zip(z, e))) for e in closed_dirs)
    spokes = frozenset(e for e, _ in incident_edges(z))
    if not closed <= spokes:
        raise ValueError("closed directions must be incident to z")
    return SurgerySpec(A1=spokes, B1=closed)


def with_local_config(config: EdgeConfig, z: Vertex, closed_dirs: Iterable[Vertex]) -> EdgeConfig:
    return apply_surgery(config, local_config_spec(z, closed_dirs))


def config_of(config: EdgeConfig, z: Vertex) -> FrozenSet[Vertex]:
    """The set of closed incident directions at z."""
    d = len(z)
    closed = []
    for e_dir in directions(d):
        y = tuple(a + b for a, b in zip(z, e_dir))
        if not config.edge_open(canonical_edge(z, y)):
            closed.append(e_dir)
    return frozenset(closed)


class DisjointSets:
    """Union-find with path halving and union by size."""

    def __init__(self) -> None:
        self.parent: Dict[Vertex, Vertex] = {}
        self.size: Dict[Vertex, int] = {}

    def add(self, a: Vertex) -> None:
        if a not in self.parent:
            self.parent[a] = a
            self.size[a] = 1

    def find(self, a: Vertex) -> Vertex:
        p = self.parent
        while p[a] != a:
            p[a] = p[p[a]]
            a = p[a]
        return a

    def union(self, a: Vertex, b: Vertex) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return
        if self.size[ra] < self.size[rb]:
            ra, rb = rb, ra
        self.parent[rb] = ra
        self.size[ra] += self.size[rb]


@dataclass
class ClusterLabeling:
    """Open-connectivity partition of a box.

    Labels are normalized to the lexicographically smallest vertex of each
    cluster, so the labeling is a pure function of the bit pattern.
    """

    labels: Dict[Vertex, Vertex]
    sizes: Dict[Vertex, int]
    touches_boundary: Dict[Vertex, bool]


def clusters(config: EdgeConfig, box: Ball) -> ClusterLabeling:
    verts = ball_list(box.center, box.radius)
    dsu = DisjointSets()
    for v in verts:
        dsu.add(v)
    for e in ball_inner_edges(box.center, box.radius):
        if config.edge_open(e):
            a, b = edge_endpoints(e)
            dsu.union(a, b)
    rim = set(sphere(box.center, box.radius))
    rep: Dict[Vertex, Vertex] = {}
    for v in verts:
        r = dsu.find(v)
        if r not in rep or v < rep[r]:
            rep[r] = v
    labels = {v: rep[dsu.find(v)] for v in verts}
    sizes: Dict[Vertex, int] = {}
    touches: Dict[Vertex, bool] = {}
    for v, lab in labels.items():
        sizes[lab] = sizes.get(lab, 0) + 1
        if v in rim:
            touches[lab] = True
    for lab in sizes:
        touches.setdefault(lab, False)
    return ClusterLabeling(labels=labels, sizes=sizes, touches_boundary=touches)


def origin_cluster_reaches(config: EdgeConfig, center: Vertex, check_radius: int) -> bool:
    """Reach proxy: does the open cluster of `center` inside
    B(center, check_radius) touch the sphere of that radius?"""
    lab = clusters(config, Ball(center, check_radius))
    return lab.touches_boundary[lab.labels[center]]


def condition_on_I(
    p: float,
    check_radius: int,
    seed_stream: Union[int, Iterable[int]],
    d: int = 2,
    max_attempts: int = 1000,
) -> Tuple[EnvironmentOracle, int]:
    """Rejection-sample an oracle whose origin cluster passes the reach proxy.

    The event `origin lies in the unique infinite open cluster` is
    approximated by `the open cluster of 0 within B(0, check_radius) reaches
    the sphere of that radius`.  Uniqueness is not checked; the proxy error
    is exponentially small in check_radius in the supercritical regime.

    Args:
        p: open probability; must be safely supercritical (> 0.6).
        check_radius: proxy radius (>= 1).
        seed_stream: candidate oracle seeds, tried in order; an int is\n            treated as a master seed from which candidates are derived.
        d: lattice dimension.
        max_attempts: rejection budget.

    Returns:
        (accepted oracle, number of rejected seeds).

    Raises:
        ConditioningBudgetError: no seed accepted within the budget; the
            error carries the attempt count for an acceptance-rate estimate.
    """
    if not p > 0.6:
        raise ValueError("conditioning requires p > 0.6 (safely supercritical)")
    if check_radius < 1:
        raise ValueError("check_radius must be >= 1")
    origin: Vertex = (0,) * d
    if isinstance(seed_stream, int):
        master = seed_stream
        seed_stream = (
            rng.derive_seed(master, 0x49434F4E, k) for k in range(max_attempts)
        )
    attempts = 0
    for seed in seed_stream:
        if attempts >= max_attempts:
            break
        attempts += 1
        oracle = EnvironmentOracle(seed=seed, p=p)
        cfg = materialize(oracle, Ball(origin, check_radius))
        if origin_cluster_reaches(cfg, origin, check_radius):
            return oracle, attempts - 1
    raise ConditioningBudgetError(attempts, 0)


# ---------------------------------------------------------------------------
# window file format: one JSON header line, then the window bits packed
# little-endian (bit i of the stream is edge i in sorted canonical order).

def save_window(config: EdgeConfig, path: str) -> None:
    if config.window is None:
        raise ValueError("config has no materialized window")
    d = len(config.window.center)
    header = {
        "format": "percodrift-window-v1",
        "d": d,
        "window": {"center": list(config.window.center), "radius": config.window.radius},
        "seed": config.backing.seed if config.backing else None,
        "p": config.backing.p if config.backing else None,
        "n_edges": int(config.bits.size),
        "overlay": [
            [[list(base), axis], bool(state)]
            for (base, axis), state in sorted(config.overlay.items())
        ],
    }
    packed = np.packbits(config.bits.astype(np.uint8), bitorder="little")
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8"))
        fh.write(b"\n")
        fh.write(packed.tobytes())


def load_window(path: str) -> EdgeConfig:
    with open(path, "rb") as fh:
        header_line = fh.readline()
        payload = fh.read()
    header = json.loads(header_line.decode("utf-8"))
    if header.get("format") != "percodrift-window-v1":
        raise ValueError("not a window file")
    window = Ball(tuple(header["window"]["center"]), header["window"]["radius"])
    n_edges = header["n_edges"]
    bits = np.unpackbits(np.frombuffer(payload, dtype=np.uint8), bitorder="little")[
        :n_edges
    ].astype(bool)
    edges, index, _ = _window_geometry(window.center, window.radius)
    if len(edges) != n_edges:
        raise ValueError("edge count does not match the window geometry")
    overlay = {
        (tuple(base), axis): bool(state) for (base, axis), state in header["overlay"]
    }
    backing = None
    if header.get("seed") is not None:
        backing = EnvironmentOracle(seed=header["seed"], p=header["p"])
    return EdgeConfig(
        window=window, window_index=index, bits=bits, overlay=overlay, backing=backing
    )
