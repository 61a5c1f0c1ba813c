"""Killed Green functions, their stopped variants, and the resolvent series.

G_delta(x, y) is the expected discounted visit count to y of the walk from
x, counting time 0 and weighting time k by delta^k; equivalently the visit
count of the walk killed at geometric rate 1 - delta, counted up to and
including the death time.  Stopped variants absorb the walk on a target set
Z, counting the arrival step.

Finite windows use Dirichlet truncation.  The certified bracket comes from
solving the same window system twice: boundary data 0 (a lower bound) and
boundary data 1/(1 - delta), the global maximum the killing clock allows
(an upper bound).
"""

from __future__ import annotations

import csv
import json
import math
import random
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import splu

from . import rng
from .environment import EdgeConfig
from .kernel import Bias
from .lattice import Ball, Vertex, canonical_edge, directions

LATTICE = "lattice"
BOX = "box"

_WALK_TAG = 0x57414C4B


@dataclass(frozen=True)
class KillingClock:
    """Per-step survival probability delta; the lifetime is geometric."""

    delta: float

    def __post_init__(self) -> None:
        if not 0 <= self.delta <= 1:
            raise ValueError("delta must lie in [0, 1]")

    def horizon_for(self, tol: float = 1e-12) -> int:
        """Steps after which the neglected tail of G is below tol."""
        return default_horizon(self.delta, tol)


def default_horizon(delta: float, tol: float = 1e-12) -> int:
    """ceil(ln(tol (1 - delta)) / ln delta): tail bound delta^h / (1 - delta) <= tol."""
    if not 0 <= delta < 1:
        raise ValueError("horizon needs delta in [0, 1)")
    if delta == 0.0:
        return 1
    h = math.ceil(math.log(tol * (1.0 - delta)) / math.log(delta))
    return max(h, 1)


@dataclass
class BoxKernel:
    """One-step law of the walk restricted to a window.

    `universe=lattice`: rows are the infinite-lattice law, entries kept only
    for in-window targets; `leak` holds the escaping mass (Dirichlet
    truncation).  `universe=box`: the window is the whole world, rows are
    renormalized over in-window open neighbors and leak is zero.  Vertices
    with no open direction in the relevant universe carry a unit self-loop.
    """

    vertices: List[Vertex]
    index: Dict[Vertex, int]
    P: sparse.csr_matrix
    leak: np.ndarray
    bias: Bias
    universe: str
    box: Ball
    _lu_cache: Dict[Tuple[float, str], object] = field(
        default_factory=dict, repr=False, compare=False
    )

    def system_lu(self, delta: float, rows_absorbed: Tuple[int, ...] = ()):
        key = (delta, "a" + ",".join(map(str, rows_absorbed)))
        lu = self._lu_cache.get(key)
        if lu is None:
            P = self.P
            if rows_absorbed:
                P = P.tolil(copy=True)
                for i in rows_absorbed:
                    P.rows[i] = []
                    P.data[i] = []
                P = P.tocsr()
            n = P.shape[0]
            lu = splu(sparse.csc_matrix(sparse.identity(n) - delta * P))
            self._lu_cache[key] = lu
        return lu


def build_box_kernel(
    config: EdgeConfig, bias: Bias, box: Ball, universe: str = LATTICE
) -> BoxKernel:
    if universe not in (LATTICE, BOX):
        raise ValueError(f"unknown universe {universe!r}")
    d = len(box.center)
    verts = sorted(box.vertices())
    index = {x: i for i, x in enumerate(verts)}
    n = len(verts)
    rows: List[int] = []
    cols: List[int] = []
    vals: List[float] = []
    leak = np.zeros(n)
    for i, x in enumerate(verts):
        weights: List[Tuple[Optional[int], float]] = []
        for e_dir in directions(d):
            y = tuple(a + b for a, b in zip(x, e_dir))
            j = index.get(y)
            if universe == BOX and j is None:
                continue
            if not config.edge_open(canonical_edge(x, y)):
                continue
            w = math.exp(sum((a + b) * l for a, b, l in zip(x, y, bias.ell)))
            weights.append((j, w))
        total = sum(w for _, w in weights)
        if total == 0.0:
            rows.append(i)
            cols.append(i)
            vals.append(1.0)
            continue
        for j, w in weights:
            if j is None:
                leak[i] += w / total
            else:
                rows.append(i)
                cols.append(j)
                vals.append(w / total)
    P = sparse.csr_matrix((vals, (rows, cols)), shape=(n, n))
    return BoxKernel(
        vertices=verts, index=index, P=P, leak=leak, bias=bias,
        universe=universe, box=box,
    )


def green_column(
    kern: BoxKernel, delta: float, y: Vertex, rows_absorbed: Iterable[Vertex] = ()
) -> np.ndarray:
    """The vector x -> G_delta(x, y) on the window (Dirichlet-0 outside)."""
    absorbed = tuple(sorted(kern.index[z] for z in rows_absorbed))
    lu = kern.system_lu(delta, absorbed)
    rhs = np.zeros(len(kern.vertices))
    rhs[kern.index[y]] = 1.0
    return lu.solve(rhs)


def green_row(
    kern: BoxKernel, delta: float, x: Vertex, rows_absorbed: Iterable[Vertex] = ()
) -> np.ndarray:
    """The vector y -> G_delta(x, y) on the window (adjoint solve)."""
    absorbed = tuple(sorted(kern.index[z] for z in rows_absorbed))
    lu = kern.system_lu(delta, absorbed)
    rhs = np.zeros(len(kern.vertices))
    rhs[kern.index[x]] = 1.0
    return lu.solve(rhs, trans="T")


@dataclass
class GreenTable:
    """A Green column for one target, with its certified truncation bracket."""

    target: Vertex
    box: Ball
    values: Dict[Vertex, float]
    delta: float
    method: str
    error: float

    def value(self, x: Vertex) -> float:
        return self.values[x]


def green_exact(
    config: EdgeConfig,
    bias: Bias,
    delta: float,
    y: Vertex,
    box: Ball,
    universe: str = LATTICE,
    bracket_tol: Optional[float] = None,
) -> GreenTable:
    """Solve the window system for the column G_delta(., y).

    Stored values are the Dirichlet-0 solution; `error` is the largest gap
    to the Dirichlet-1/(1-delta) solution over the window, an upper bound
    on the truncation error at every vertex.
    """
    if not 0 <= delta < 1:
        raise ValueError("green_exact needs delta in [0, 1); see the expansion "
                         "module for the driftful delta=1 route")
    if y not in box:
        raise ValueError("target outside the window")
    kern = build_box_kernel(config, bias, box, universe)
    lower = green_column(kern, delta, y)
    if delta > 0 and kern.leak.any():
        lu = kern.system_lu(delta, ())
        g_max = 1.0 / (1.0 - delta)
        rhs = np.zeros(len(kern.vertices))
        rhs[kern.index[y]] = 1.0
        rhs += delta * kern.leak * g_max
        upper = lu.solve(rhs)
        err = float(np.max(upper - lower))
    else:
        err = 0.0
    if bracket_tol is not None and err > bracket_tol:
        raise ValueError(
            f"truncation bracket {err:.3g} above tol {bracket_tol:g}; "
            f"grow the window beyond radius {box.radius}"
        )
    values = {x: float(lower[i]) for i, x in enumerate(kern.vertices)}
    return GreenTable(
        target=y, box=box, values=values, delta=delta,
        method="exact-solve", error=err,
    )


def table_residual(config: EdgeConfig, bias: Bias, table: GreenTable) -> float:
    """Max defect of the defining relation at interior vertices.

    Interior means the full one-step law stays inside the window, so the
    Dirichlet truncation does not enter the row.
    """
    kern = build_box_kernel(config, bias, table.box, LATTICE)
    g = np.array([table.values[x] for x in kern.vertices])
    e_y = np.zeros(len(kern.vertices))
    e_y[kern.index[table.target]] = 1.0
    defect = g - e_y - table.delta * (kern.P @ g)
    interior = kern.leak == 0.0
    return float(np.max(np.abs(defect[interior]))) if interior.any() else 0.0


def green_stopped(
    config: EdgeConfig,
    bias: Bias,
    delta: float,
    x: Vertex,
    y: Vertex,
    Z: Iterable[Vertex],
    box: Ball,
    universe: str = LATTICE,
) -> float:
    """G_{delta, Z}(x, y): visits to y up to the arrival step at Z.

    Rows at Z are Dirichlet (the walk is absorbed on arrival, and the
    arrival visit is counted: the column solve keeps value 1{z = y} at
    z in Z).
    """
    if not 0 <= delta < 1:
        raise ValueError("green_stopped needs delta in [0, 1)")
    zs = sorted(set(Z))
    for z in zs:
        if z not in box:
            raise ValueError(f"absorbing vertex {z} outside the window")
    kern = build_box_kernel(config, bias, box, universe)
    col = green_column(kern, delta, y, rows_absorbed=zs)
    return float(col[kern.index[x]])


def hitting_before_death(
    config: EdgeConfig,
    bias: Bias,
    delta: float,
    Z: Iterable[Vertex],
    box: Ball,
    universe: str = LATTICE,
) -> Dict[Vertex, float]:
    """x -> E_x[delta^{T_Z}; T_Z < infinity]: hit Z before the clock kills.

    Dirichlet data 1 on Z, 0 outside the window; the independent system
    behind the first-hit factorization G(x, y) = h(x) G(y, y).
    """
    zs = sorted(set(Z))
    kern = build_box_kernel(config, bias, box, universe)
    n = len(kern.vertices)
    z_idx = [kern.index[z] for z in zs]
    in_z = np.zeros(n, dtype=bool)
    in_z[z_idx] = True
    # Zeroing the rows at Z pins h to the rhs there; the off-Z rows keep
    # their columns into Z, so with h = 1 on Z they read exactly
    # h(x) = delta sum_y p(x, y) h(y).
    P = kern.P.tolil(copy=True)
    for i in z_idx:
        P.rows[i] = []
        P.data[i] = []
    P = P.tocsr()
    rhs = np.zeros(n)
    rhs[in_z] = 1.0
    sys = sparse.csc_matrix(sparse.identity(n) - delta * P)
    h = splu(sys).solve(rhs)
    return {x: float(h[i]) for i, x in enumerate(kern.vertices)}


@dataclass(frozen=True)
class GreenEstimate:
    mean: float
    se: float
    bias_bound: float
    n_walks: int
    horizon: int


def _mc_chunk(
    config: EdgeConfig,
    bias: Bias,
    delta: float,
    x: Vertex,
    y: Vertex,
    horizon: int,
    seeds: Sequence[int],
) -> List[float]:
    d = len(x)
    dirs = directions(d)
    row_cache: Dict[Vertex, Tuple[List[float], List[Vertex]]] = {}
    out: List[float] = []
    for s in seeds:
        rnd = random.Random(s)
        pos = x
        visits = 1.0 if pos == y else 0.0
        for _ in range(horizon):
            if rnd.random() >= delta:
                break
            cached = row_cache.get(pos)
            if cached is None:
                cum: List[float] = []
                targets: List[Vertex] = []
                total = 0.0
                for e_dir in dirs:
                    nxt = tuple(a + b for a, b in zip(pos, e_dir))
                    if config.edge_open(canonical_edge(pos, nxt)):
                        w = math.exp(
                            sum((a + b) * l for a, b, l in zip(pos, nxt, bias.ell))
                        )
                        total += w
                        cum.append(total)
                        targets.append(nxt)
                if total > 0:
                    cum = [c / total for c in cum]
                cached = (cum, targets)
                row_cache[pos] = cached
            cum, targets = cached
            if targets:
                u = rnd.random()
                k = 0
                while k < len(cum) - 1 and u >= cum[k]:
                    k += 1
                pos = targets[k]
            if pos == y:
                visits += 1.0
        out.append(visits)
    return out


def green_mc(
    config: EdgeConfig,
    bias: Bias,
    delta: float,
    x: Vertex,
    y: Vertex,
    n_walks: int,
    horizon: Optional[int] = None,
    seed: int = 0,
    threads: int = 1,
) -> GreenEstimate:
    """Monte Carlo visit counts under the geometric killing clock.

    Per-walk seeds derive from the master seed by walk index, and the
    reduction is by index, so the estimate is identical for any thread
    count.  The horizon cutoff's bias is at most delta^horizon / (1-delta),
    reported on the estimate.
    """
    if not 0 <= delta < 1:
        raise ValueError("green_mc needs delta in [0, 1)")
    if n_walks < 1:
        raise ValueError("need at least one walk")
    if horizon is None:
        horizon = default_horizon(delta) if delta > 0 else 1
    seeds = [rng.derive_seed(seed, _WALK_TAG, i) for i in range(n_walks)]
    if threads <= 1 or n_walks < 4 * threads:
        counts = _mc_chunk(config, bias, delta, x, y, horizon, seeds)
    else:
        from concurrent.futures import ThreadPoolExecutor

        chunk = (n_walks + threads - 1) // threads
        parts = [seeds[i : i + chunk] for i in range(0, n_walks, chunk)]
        with ThreadPoolExecutor(max_workers=threads) as ex:
            results = list(
                ex.map(
                    lambda part: _mc_chunk(config, bias, delta, x, y, horizon, part),
                    parts,
                )
            )
        counts = [c for part in results for c in part]
    arr = np.asarray(counts)
    mean = float(arr.mean())
    se = float(arr.std(ddof=1) / math.sqrt(n_walks)) if n_walks > 1 else math.inf
    bias_bound = delta**horizon / (1.0 - delta) if delta > 0 else 0.0
    return GreenEstimate(
        mean=mean, se=se, bias_bound=bias_bound, n_walks=n_walks, horizon=horizon
    )


@dataclass
class PerturbSeries:
    """Terms of the finite resolvent expansion between two kernels.

    terms[k] is the order-k column [delta G (P' - P)]^k G e_y for k = 0..n;
    `remainder` is the exact closing term [delta G (P' - P)]^(n+1) G' e_y.
    Their sum reproduces the perturbed column G' e_y identically.
    """

    terms: List[np.ndarray]
    remainder: np.ndarray
    direct: np.ndarray

    @property
    def reconstruction(self) -> np.ndarray:
        return sum(self.terms) + self.remainder

    @property
    def residual(self) -> float:
        return float(np.max(np.abs(self.reconstruction - self.direct)))


def perturb_expand(
    kern_base: BoxKernel,
    kern_pert: BoxKernel,
    delta: float,
    n: int,
    y: Vertex,
) -> PerturbSeries:
    """Expand the perturbed Green column around the base kernel to order n."""
    if kern_base.vertices != kern_pert.vertices:
        raise ValueError("kernels must share one window")
    if n < 0:
        raise ValueError("n must be >= 0")
    diff = sparse.csr_matrix(kern_pert.P - kern_base.P)
    lu = kern_base.system_lu(delta, ())
    rhs = np.zeros(len(kern_base.vertices))
    rhs[kern_base.index[y]] = 1.0
    terms = [lu.solve(rhs)]
    for _ in range(n):
        terms.append(delta * lu.solve(diff @ terms[-1]))
    direct = kern_pert.system_lu(delta, ()).solve(rhs)
    s = direct
    for _ in range(n + 1):
        s = delta * lu.solve(diff @ s)
    return PerturbSeries(terms=terms, remainder=s, direct=direct)


def save_green_table(table: GreenTable, csv_path: str) -> None:
    """CSV of (coordinates, value) rows plus a JSON sidecar with metadata."""
    d = len(table.target)
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"x{i}" for i in range(d)] + ["value"])
        for x in sorted(table.values):
            writer.writerow(list(x) + [repr(table.values[x])])
    meta = {
        "delta": table.delta,
        "method": table.method,
        "error": table.error,
        "target": list(table.target),
        "box_center": list(table.box.center),
        "box_radius": table.box.radius,
    }
    with open(csv_path + ".json", "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_green_table(csv_path: str) -> GreenTable:
    with open(csv_path + ".json") as fh:
        meta = json.load(fh)
    values: Dict[Vertex, float] = {}
    with open(csv_path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        d = len(header) - 1
        for row in reader:
            values[tuple(int(c) for c in row[:d])] = float(row[d])
    return GreenTable(
        target=tuple(meta["target"]),
        box=Ball(tuple(meta["box_center"]), meta["box_radius"]),
        values=values,
        delta=meta["delta"],
        method=meta["method"],
        error=meta["error"],
    )
