"""The walk's local law.

Open edges carry conductance exp((x+y) . ell) where ell = lam * lhat is the
bias vector; the walk jumps with probability proportional to the incident
conductances and sits still only when every incident edge is closed.  This
module also computes the model constants that downstream trap statistics
depend on: the minimal transition probability kappa0, the invariant-measure
sandwich constant kappa1, the half-space slope eta, and the volume constant
rho.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import chain, combinations
from typing import Dict, FrozenSet, List, Optional, Sequence, Tuple

import numpy as np

from .environment import EdgeConfig
from .lattice import (
    Edge,
    Vertex,
    ball_size,
    canonical_edge,
    directions,
    dot,
    edge_endpoints,
    rho_d,
)


@dataclass(frozen=True)
class Bias:
    """Bias strength and unit direction, with the axis alignment data.

    `lam` is the strength; `direction` is the Euclidean-unit drift direction.
    `aligned_axes` lists (axis, sign) pairs ordering the signed coordinate
    axes by decreasing projection on the direction, so the leading aligned
    axis always has projection >= 1/sqrt(d) and all listed projections are
    nonnegative.
    """

    lam: float
    direction: Tuple[float, ...]
    aligned_axes: Tuple[Tuple[int, int], ...] = ()

    def __post_init__(self) -> None:
        if self.lam <= 0:
            raise ValueError("bias strength must be positive")
        norm = math.sqrt(sum(c * c for c in self.direction))
        if norm == 0:
            raise ValueError("direction must be nonzero")
        object.__setattr__(
            self, "direction", tuple(c / norm for c in self.direction)
        )
        order = sorted(
            range(len(self.direction)),
            key=lambda i: -abs(self.direction[i]),
        )
        object.__setattr__(
            self,
            "aligned_axes",
            tuple((i, 1 if self.direction[i] >= 0 else -1) for i in order),
        )

    @property
    def d(self) -> int:
        return len(self.direction)

    @property
    def ell(self) -> Tuple[float, ...]:
        """The full bias vector lam * direction."""
        return tuple(self.lam * c for c in self.direction)

    def proj(self, x: Sequence[float]) -> float:
        """Projection x . direction."""
        return dot(x, self.direction)


def bias_along_axis(lam: float, d: int = 2, axis: int = 0) -> Bias:
    return Bias(lam=lam, direction=tuple(1.0 if i == axis else 0.0 for i in range(d)))


def conductance(e: Edge, bias: Bias) -> float:
    """exp((x+y) . ell) for the edge's endpoints, ignoring open/closed state."""
    x, y = edge_endpoints(e)
    return math.exp(sum((a + b) * l for a, b, l in zip(x, y, bias.ell)))


def direction_weight(e_dir: Vertex, bias: Bias) -> float:
    """Conductance of the edge [0, e] for a signed unit direction e."""
    return math.exp(dot(e_dir, bias.ell))


@dataclass(frozen=True)
class LocalKernel:
    """One transition row: jump probabilities per direction plus self-loop."""

    probs: Dict[Optional[Vertex], float]

    def __post_init__(self) -> None:
        total = sum(self.probs.values())
        if abs(total - 1.0) > 1e-12:
            raise ValueError(f"row sums to {total}, not 1")

    @property
    def self_loop(self) -> float:
        return self.probs.get(None, 0.0)

    def drift(self) -> np.ndarray:
        dims = next(len(k) for k in self.probs if k is not None)
        v = np.zeros(dims)
        for e_dir, pr in self.probs.items():
            if e_dir is not None:
                v += pr * np.asarray(e_dir, dtype=float)
        return v


def pi(config: EdgeConfig, x: Vertex, bias: Bias) -> float:
    """Invariant measure: total conductance of open edges at x."""
    total = 0.0
    for e_dir in directions(len(x)):
        y = tuple(a + b for a, b in zip(x, e_dir))
        if config.edge_open(canonical_edge(x, y)):
            total += math.exp(sum((a + b) * l for a, b, l in zip(x, y, bias.ell)))
    return total


def transition_row(config: EdgeConfig, x: Vertex, bias: Bias) -> LocalKernel:
    """Normalized jump law at x; self-loop 1 iff every incident edge closed."""
    weights: Dict[Optional[Vertex], float] = {}
    total = 0.0
    for e_dir in directions(len(x)):
        y = tuple(a + b for a, b in zip(x, e_dir))
        if config.edge_open(canonical_edge(x, y)):
            w = math.exp(sum((a + b) * l for a, b, l in zip(x, y, bias.ell)))
            weights[e_dir] = w
            total += w
    if not weights:
        return LocalKernel(probs={None: 1.0})
    return LocalKernel(probs={e: w / total for e, w in weights.items()})


def open_weight_sum(closed: FrozenSet[Vertex], bias: Bias, d: int) -> float:
    """Sum of exp(e . ell) over directions not in the closed set."""
    return sum(direction_weight(e, bias) for e in directions(d) if e not in closed)


def local_row(closed: FrozenSet[Vertex], bias: Bias, d: int) -> Dict[Vertex, float]:
    """Transition probabilities at a vertex whose closed incident set is given."""
    open_dirs = [e for e in directions(d) if e not in closed]
    if not open_dirs:
        raise ValueError("no open direction")
    weights = {e: direction_weight(e, bias) for e in open_dirs}
    total = sum(weights.values())
    return {e: w / total for e, w in weights.items()}


def local_drift(A: FrozenSet[Vertex], bias: Bias, d: Optional[int] = None) -> np.ndarray:
    """Mean jump at a vertex whose closed incident direction set is A.

    Raises:
        ValueError: when A is the full direction set (the row degenerates to
            a self-loop and has no jump law).
    """
    dims = d if d is not None else bias.d
    if len(A) >= 2 * dims:
        raise ValueError("drift undefined when every direction is closed")
    row = local_row(frozenset(A), bias, dims)
    v = np.zeros(dims)
    for e_dir, pr in row.items():
        v += pr * np.asarray(e_dir, dtype=float)
    return v


@dataclass(frozen=True)
class ModelConstants:
    kappa0: float
    kappa1: float
    eta: int
    rho: float

    def __post_init__(self) -> None:
        if not 0 < self.kappa0 <= 0.5:
            raise ValueError("kappa0 out of range")
        if self.kappa1 < 1:
            raise ValueError("kappa1 must be >= 1")
        if self.eta < 1:
            raise ValueError("eta must be >= 1")


def _proper_subsets(dirs: List[Vertex]):
    return chain.from_iterable(
        combinations(dirs, k) for k in range(len(dirs))
    )


def constants(bias: Bias, d: Optional[int] = None, r_max: int = 50) -> ModelConstants:
    """Model constants by exhaustive enumeration.

    kappa0: minimum transition probability over all local configurations
    with at least one open direction.  kappa1: the smallest constant with
    kappa1^-1 * pi <= exp(2 lam x . lhat) <= kappa1 * pi across those same
    configurations (pi in the normalization where the vertex sits at 0).
    eta: smallest integer for which the exponential exp(2 lam (eta-1) n)
    dominates 3 kappa1^2 |B(0,n)| for every n in the validated range; the
    scan checks n <= r_max and then confirms the log-slope 2 lam (eta-1)
    exceeds the d/n decay of the polynomial side at r_max, which makes the
    inequality monotone beyond the scanned range.  rho: volume constant
    from exact ball enumeration.
    """
    dims = d if d is not None else bias.d
    dirs = directions(dims)
    kappa0 = 1.0
    s_max = 0.0
    s_min = math.inf
    for closed in _proper_subsets(dirs):
        closed_set = frozenset(closed)
        s = open_weight_sum(closed_set, bias, dims)
        s_max = max(s_max, s)
        s_min = min(s_min, s)
        for e_dir in dirs:
            if e_dir not in closed_set:
                kappa0 = min(kappa0, direction_weight(e_dir, bias) / s)
    kappa1 = max(s_max, 1.0 / s_min, 1.0)

    log_rhs0 = math.log(3.0 * kappa1 * kappa1)
    eta = 1
    while True:
        slope = 2.0 * bias.lam * (eta - 1)
        ok = all(
            slope * n >= log_rhs0 + math.log(ball_size(dims, n))
            for n in range(1, r_max + 1)
        )
        if ok and slope > dims / r_max:
            break
        eta += 1
        if eta > 10_000:
            raise RuntimeError("eta scan failed to terminate")
    return ModelConstants(
        kappa0=kappa0, kappa1=kappa1, eta=eta, rho=rho_d(dims, r_max)
    )
