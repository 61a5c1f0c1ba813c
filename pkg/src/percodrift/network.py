"""Cemetery-augmented electrical networks for the killed walk.

A walk killed at rate 1 - delta per step is the ordinary network walk on a
graph with one extra absorbing node (the cemetery): every vertex x gains an
edge to it of conductance pi(x) (1 - delta) / delta, so the total degree at
x becomes pi(x) / delta and the per-step death probability is exactly
1 - delta.  Visit counts then translate to effective resistances,

    G_delta(x, x) = (pi(x) / delta) * R(x <-> cemetery),

and grounding further target vertices gives the stopped-walk analogue.

Finite windows are handled by a two-sided truncation bracket: shorting the
window-crossing edges to the cemetery can only lower the resistance, cutting
them can only raise it, so the infinite-volume value is pinned between the
`grounded` and `free` solves of the same window.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Set, Tuple

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import spsolve

from .environment import EdgeConfig
from .kernel import Bias
from .lattice import (
    Ball,
    Edge,
    Vertex,
    canonical_edge,
    directions,
    dot,
    edge_endpoints,
)

# Sentinel endpoint for cemetery edges in flow maps: the key (x, CEMETERY)
# carries the current from x into the absorbing node.
CEMETERY = None

GROUNDED = "grounded-boundary"
FREE = "free-boundary"


class TruncationBracketError(RuntimeError):
    """The grounded/free bracket is wider than the requested tolerance."""

    def __init__(self, lower: float, upper: float, tol: float):
        self.lower = lower
        self.upper = upper
        self.tol = tol
        super().__init__(
            f"resistance bracket [{lower:.6g}, {upper:.6g}] wider than "
            f"tol={tol:g}; grow the window and rebuild"
        )


@dataclass
class KilledNetwork:
    """Finite window of the killed network.

    Isolated vertices (pi = 0) are excluded: they have no cemetery edge and
    no incident open edge, so they play no electrical role.  Crossing
    conductances record open edges leaving the window, lumped per vertex;
    the grounded variant sends them to the cemetery, the free variant drops
    them.
    """

    vertices: List[Vertex]
    index: Dict[Vertex, int]
    edge_conductances: Dict[Edge, float]
    cemetery_conductances: Dict[Vertex, float]
    crossing_conductances: Dict[Vertex, float]
    pis: Dict[Vertex, float]
    delta: float
    bias: Bias

    def pi_killed(self, x: Vertex) -> float:
        """pi of the killed network, pi(x) / delta."""
        return self.pis[x] / self.delta

    def ground_conductance(self, x: Vertex, variant: str) -> float:
        g = self.cemetery_conductances.get(x, 0.0)
        if variant == GROUNDED:
            g += self.crossing_conductances.get(x, 0.0)
        return g


def _edge_conductance(e: Edge, bias: Bias) -> float:
    x, y = edge_endpoints(e)
    return math.exp(sum((a + b) * l for a, b, l in zip(x, y, bias.ell)))


def build_killed(
    config: EdgeConfig, bias: Bias, delta: float, box: Ball
) -> KilledNetwork:
    """Assemble the killed network of the open subgraph inside `box`.

    The configuration must resolve every edge incident to the box (one layer
    outside), since pi and the crossing conductances look across the
    boundary.
    """
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    d = len(box.center)
    factor = (1.0 - delta) / delta
    verts: List[Vertex] = []
    pis: Dict[Vertex, float] = {}
    crossing: Dict[Vertex, float] = {}
    for x in box.vertices():
        pi_x = 0.0
        cross = 0.0
        for e_dir in directions(d):
            y = tuple(a + b for a, b in zip(x, e_dir))
            e = canonical_edge(x, y)
            if not config.edge_open(e):
                continue
            c = _edge_conductance(e, bias)
            pi_x += c
            if y not in box:
                cross += c
        if pi_x > 0.0:
            verts.append(x)
            pis[x] = pi_x
            if cross > 0.0:
                crossing[x] = cross
    verts.sort()
    index = {x: i for i, x in enumerate(verts)}
    edge_conductances: Dict[Edge, float] = {}
    for x in verts:
        for axis in range(d):
            y = tuple(c + (1 if k == axis else 0) for k, c in enumerate(x))
            if y in index:
                e = (x, axis)
                if config.edge_open(e):
                    edge_conductances[e] = _edge_conductance(e, bias)
    cemetery = {x: pis[x] * factor for x in verts}
    return KilledNetwork(
        vertices=verts,
        index=index,
        edge_conductances=edge_conductances,
        cemetery_conductances=cemetery,
        crossing_conductances=crossing,
        pis=pis,
        delta=delta,
        bias=bias,
    )


def _component(net: KilledNetwork, x: Vertex) -> Set[Vertex]:
    """Vertices reachable from x through the network's open edges."""
    adj: Dict[Vertex, List[Vertex]] = {}
    for e in net.edge_conductances:
        a, b = edge_endpoints(e)
        adj.setdefault(a, []).append(b)
        adj.setdefault(b, []).append(a)
    seen = {x}
    stack = [x]
    while stack:
        v = stack.pop()
        for w in adj.get(v, ()):
            if w not in seen:
                seen.add(w)
                stack.append(w)
    return seen


def potentials(
    net: KilledNetwork,
    x: Vertex,
    variant: str = GROUNDED,
    extra_grounded: Iterable[Vertex] = (),
) -> Dict[Vertex, float]:
    """Node potentials for unit current injected at x, cemetery grounded.

    Vertices in `extra_grounded` are held at potential 0 alongside the
    cemetery.  Vertices outside x's component are reported at 0 (no current
    reaches them).  Raises ValueError when x has no path to any ground: the
    resistance is infinite and no potential profile exists.
    """
    if x not in net.index:
        raise ValueError(f"{x} is not a network vertex (isolated or outside)")
    extra = set(extra_grounded)
    if x in extra:
        return {v: 0.0 for v in net.vertices}
    comp = _component(net, x)
    interior = sorted(v for v in comp if v not in extra)
    pos = {v: i for i, v in enumerate(interior)}
    n = len(interior)
    total_ground = sum(net.ground_conductance(v, variant) for v in interior)
    if total_ground <= 0.0 and not (extra & comp):
        raise ValueError("source component is not connected to any ground")
    rows: List[int] = []
    cols: List[int] = []
    vals: List[float] = []
    diag = np.array(
        [net.ground_conductance(v, variant) for v in interior], dtype=float
    )
    for e, c in net.edge_conductances.items():
        a, b = edge_endpoints(e)
        if a not in comp:
            continue
        ia = pos.get(a)
        ib = pos.get(b)
        if ia is not None and ib is not None:
            rows += [ia, ib]
            cols += [ib, ia]
            vals += [-c, -c]
            diag[ia] += c
            diag[ib] += c
        elif ia is not None:
            diag[ia] += c
        elif ib is not None:
            diag[ib] += c
    rows += list(range(n))
    cols += list(range(n))
    vals += list(diag)
    lap = sparse.csc_matrix((vals, (rows, cols)), shape=(n, n))
    rhs = np.zeros(n)
    rhs[pos[x]] = 1.0
    v = spsolve(lap, rhs)
    out = {vert: 0.0 for vert in net.vertices}
    for vert, i in pos.items():
        out[vert] = float(v[i])
    return out


@dataclass(frozen=True)
class ResistanceResult:
    """Effective resistance with its truncation bracket.

    `value` is the grounded-boundary solve (the member of the bracket that
    matches Dirichlet-zero Green truncation on the same window); `lower` and
    `upper` are the grounded and free solves, which sandwich the
    infinite-volume resistance.
    """

    value: float
    lower: float
    upper: float
    method: str

    def __post_init__(self) -> None:
        if not (self.lower <= self.value <= self.upper + 1e-12):
            raise ValueError("bracket violated: need lower <= value <= upper")


def _resistance(
    net: KilledNetwork, x: Vertex, variant: str, extra_grounded: Iterable[Vertex]
) -> float:
    try:
        v = potentials(net, x, variant, extra_grounded)
    except ValueError as err:
        if "not connected" in str(err):
            return math.inf
        raise
    return v[x]


def resistance_to_delta(
    net: KilledNetwork, x: Vertex, bracket_tol: Optional[float] = None
) -> ResistanceResult:
    """R(x <-> cemetery), bracketed by the two boundary treatments."""
    lower = _resistance(net, x, GROUNDED, ())
    upper = _resistance(net, x, FREE, ())
    if bracket_tol is not None and upper - lower > bracket_tol:
        raise TruncationBracketError(lower, upper, bracket_tol)
    return ResistanceResult(value=lower, lower=lower, upper=upper, method="pair")


def resistance_to_target(
    net: KilledNetwork, x: Vertex, z: Vertex, bracket_tol: Optional[float] = None
) -> ResistanceResult:
    """R(x <-> {z} u cemetery): z grounded alongside the cemetery."""
    if x == z:
        raise ValueError("source and target coincide")
    if z not in net.index:
        raise ValueError(f"{z} is not a network vertex")
    lower = _resistance(net, x, GROUNDED, (z,))
    upper = _resistance(net, x, FREE, (z,))
    if bracket_tol is not None and upper - lower > bracket_tol:
        raise TruncationBracketError(lower, upper, bracket_tol)
    return ResistanceResult(value=lower, lower=lower, upper=upper, method="pair")


def green_diag_from_network(
    net: KilledNetwork, x: Vertex, z: Optional[Vertex] = None
) -> float:
    """Dictionary route to the Green diagonal: pi_killed(x) * R.

    With z given this is the stopped version (walk absorbed at z).  Uses the
    grounded solve, matching Dirichlet-zero truncation of the walk on the
    same window.
    """
    if z is None:
        r = resistance_to_delta(net, x)
    else:
        r = resistance_to_target(net, x, z)
    return net.pi_killed(x) * r.value


def unit_current_flow(
    net: KilledNetwork,
    x: Vertex,
    variant: str = GROUNDED,
    extra_grounded: Iterable[Vertex] = (),
) -> Dict[Tuple[Vertex, Optional[Vertex]], float]:
    """The unit current flow from x to ground, as a directed flow map.

    Keys are (a, b) for flow along the open edge [a, b] (positive a -> b)
    and (a, CEMETERY) for the lumped flow from a into the cemetery (the
    cemetery edge plus, in the grounded variant, the crossing edges).
    """
    v = potentials(net, x, variant, extra_grounded)
    flow: Dict[Tuple[Vertex, Optional[Vertex]], float] = {}
    comp = _component(net, x)
    for e, c in net.edge_conductances.items():
        a, b = edge_endpoints(e)
        if a in comp:
            f = c * (v[a] - v[b])
            if f != 0.0:
                flow[(a, b)] = f
    for vert in comp:
        g = net.ground_conductance(vert, variant)
        if g > 0.0 and v[vert] != 0.0:
            flow[(vert, CEMETERY)] = g * v[vert]
    return flow


def thomson_energy(
    net: KilledNetwork,
    flow: Dict[Tuple[Vertex, Optional[Vertex]], float],
    source: Vertex,
    sinks: Iterable[Vertex] = (),
    variant: str = GROUNDED,
) -> float:
    """Energy sum r(e) theta(e)^2 of a unit flow from source to ground.

    Validates node conservation first: net outflow must be 1 at the source
    and 0 at every other non-sink vertex the flow touches.  By Thomson's
    principle the result is at least the effective resistance, with equality
    exactly for the current flow.
    """
    sink_set = set(sinks)
    div: Dict[Vertex, float] = {}
    for (a, b), f in flow.items():
        div[a] = div.get(a, 0.0) + f
        if b is not CEMETERY:
            div[b] = div.get(b, 0.0) - f
    for vert, net_out in div.items():
        if vert in sink_set:
            continue
        want = 1.0 if vert == source else 0.0
        if abs(net_out - want) > 1e-9:
            raise ValueError(
                f"flow not conserved at {vert}: net outflow {net_out:.3e}, "
                f"expected {want}"
            )
    # Net the directed entries per undirected edge before computing energy.
    theta: Dict[Tuple[Optional[Vertex], ...], float] = {}
    for (a, b), f in flow.items():
        if b is CEMETERY:
            key = (a, CEMETERY)
            theta[key] = theta.get(key, 0.0) + f
        else:
            e = canonical_edge(a, b)
            base, _ = edge_endpoints(e)
            sign = 1.0 if a == base else -1.0
            theta[e] = theta.get(e, 0.0) + sign * f
    energy = 0.0
    for key, th in theta.items():
        if th == 0.0:
            continue
        if len(key) == 2 and key[1] is CEMETERY:
            g = net.ground_conductance(key[0], variant)
            if g <= 0.0:
                raise ValueError(f"flow uses absent ground edge at {key[0]}")
            energy += th * th / g
        else:
            c = net.edge_conductances.get(key)  # type: ignore[arg-type]
            if c is None:
                raise ValueError(f"flow uses absent edge {key}")
            energy += th * th / c
    return energy


def close_edge(net: KilledNetwork, e: Edge) -> KilledNetwork:
    """The network after closing the open edge e.

    Closing updates both endpoints' pi, hence their cemetery conductances,
    alongside removing the edge itself; every one of these conductances can
    only decrease, which is why resistance is monotone under closure.  A
    vertex whose last open edge disappears drops out of the network.
    """
    if e not in net.edge_conductances:
        raise ValueError(f"{e} is not an open inner edge of the network")
    c = net.edge_conductances[e]
    factor = (1.0 - net.delta) / net.delta
    a, b = edge_endpoints(e)
    pis = dict(net.pis)
    edge_conductances = dict(net.edge_conductances)
    del edge_conductances[e]
    dropped: Set[Vertex] = set()
    for vert in (a, b):
        pis[vert] -= c
        if pis[vert] <= 1e-15 * c:
            dropped.add(vert)
            del pis[vert]
    verts = [v for v in net.vertices if v not in dropped]
    return KilledNetwork(
        vertices=verts,
        index={v: i for i, v in enumerate(verts)},
        edge_conductances=edge_conductances,
        cemetery_conductances={v: pis[v] * factor for v in verts},
        crossing_conductances={
            v: g for v, g in net.crossing_conductances.items() if v not in dropped
        },
        pis=pis,
        delta=net.delta,
        bias=net.bias,
    )


@dataclass(frozen=True)
class InsertEdgeRecord:
    """Record-only experiment on opening a whole ball of edges.

    Compares R(y <-> cemetery) in the ambient configuration against four
    times its value after the ball's edges are all forced open, normalized
    by a chosen power of the trap length and the exponential tilt.  The
    bound this mirrors has non-explicit constants, so nothing is asserted;
    callers collect these records and eyeball the ratios.
    """

    r_ambient: float
    r_ball_open: float
    trap_length: float
    center_projection: float
    exponent: float
    ratio: float


def insert_edge_ratio_experiment(
    config: EdgeConfig,
    bias: Bias,
    delta: float,
    box: Ball,
    ball_center: Vertex,
    ball_radius: int,
    y: Vertex,
    trap_length: float,
    length_exponent: float,
) -> InsertEdgeRecord:
    from .environment import apply_surgery, open_ball_spec

    net = build_killed(config, bias, delta, box)
    r_ambient = resistance_to_delta(net, y).value
    opened = apply_surgery(config, open_ball_spec(ball_center, ball_radius))
    net_open = build_killed(opened, bias, delta, box)
    r_open = resistance_to_delta(net_open, y).value
    proj = dot(ball_center, bias.direction)
    scale = trap_length ** length_exponent * math.exp(
        2.0 * bias.lam * (trap_length - proj)
    )
    excess = max(r_ambient - 4.0 * r_open, 0.0)
    return InsertEdgeRecord(
        r_ambient=r_ambient,
        r_ball_open=r_open,
        trap_length=trap_length,
        center_projection=proj,
        exponent=length_exponent,
        ratio=excess / scale if scale > 0 else math.inf,
    )
