"""Local trap statistics around a closed ball of edges.

All four statistics live on the modified configuration in which every edge
of the ball B^E(x, r) is closed, and they look only at edges within a
growing window around x:

  M: the largest pairwise graph distance among sphere vertices that the
     reach proxy declares part of the infinite cluster (0 when none are).
  T: the largest edge boundary |d_E K| over sphere vertices whose cluster
     is finite (0 when all escape).
  L1: the first window radius at which all sphere vertices still touching
     the window boundary are interconnected inside the window.
  L: the first window radius at which the sphere connects, inside the
     window, to the forward half-space at offset eta * L1 along the bias
     direction, or at which no sphere vertex touches the window boundary
     any more (the disconnection alternative).

L is a stopping time of the window filtration by construction: the test at
radius k reads only edges with both endpoints within distance k.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import Dict, FrozenSet, List, Optional, Sequence, Set, Tuple

import numpy as np

from . import rng
from .environment import (
    EdgeConfig,
    EnvironmentOracle,
    apply_surgery,
    close_ball_spec,
    clusters,
    materialize,
)
from .kernel import Bias, ModelConstants, constants as compute_constants
from .lattice import (
    Ball,
    Vertex,
    ball_inner_edges,
    dot,
    graph_distance,
    ring_edges,
    sphere,
)

_SAMPLE_TAG = 0x54524150
_RESAMPLE_TAG = 0x52455350


class TrapGrowthError(RuntimeError):
    """Window growth budget exhausted before the statistic resolved."""

    def __init__(self, message: str, partial: Dict[str, object]):
        self.partial = partial
        super().__init__(message)


def _closed_ball_config(config: EdgeConfig, x: Vertex, r: int) -> EdgeConfig:
    return apply_surgery(config, close_ball_spec(x, r))


def compute_M(
    config: EdgeConfig,
    x: Vertex,
    r: int,
    search_radius: Optional[int] = None,
    growth_budget: int = 8,
) -> int:
    """Max pairwise distance among proxy-infinite sphere vertices.

    Distances are certified: a value D measured inside radius k is exact
    once k >= r + D, since any shorter path would stay inside the window.
    The reach proxy (cluster touches the window boundary) is re-evaluated
    at each growth step; a window either certifies `no boundary vertex
    escapes` (return 0) or eventually merges all escaping vertices into one
    cluster with certified distances.
    """
    cfg = _closed_ball_config(config, x, r)
    bdry = sphere(x, r)
    k = max(search_radius or 0, r + 2)
    for _ in range(growth_budget):
        lab = clusters(cfg, Ball(x, k))
        reach = [y for y in bdry if lab.touches_boundary[lab.labels[y]]]
        if not reach:
            return 0
        if len({lab.labels[y] for y in reach}) == 1:
            box = Ball(x, k)
            dmax = 0
            for i in range(len(reach)):
                for j in range(i + 1, len(reach)):
                    dist = graph_distance(cfg.edge_open, reach[i], reach[j], box)
                    dmax = max(dmax, dist)
            if k >= r + dmax:
                return dmax
        k *= 2
    raise TrapGrowthError(
        f"M around {x} unresolved at radius {k // 2}",
        {"statistic": "M", "radius": k // 2},
    )


def _edge_boundary_size(members: Set[Vertex], d: int) -> int:
    internal = 0
    for v in members:
        for axis in range(d):
            w = tuple(c + (1 if a == axis else 0) for a, c in enumerate(v))
            if w in members:
                internal += 1
    return 2 * d * len(members) - 2 * internal


def compute_T(
    config: EdgeConfig,
    x: Vertex,
    r: int,
    search_radius: Optional[int] = None,
    growth_budget: int = 8,
) -> int:
    """Largest edge boundary among finite clusters meeting the sphere.

    A cluster strictly inside the window is fully resolved, so its edge
    boundary (all lattice edges leaving the vertex set, open or closed) is
    exact.  Clusters still touching the window boundary count as infinite
    once the touching set is stable across one window doubling.
    """
    d = len(x)
    cfg = _closed_ball_config(config, x, r)
    bdry = sphere(x, r)
    k = max(search_radius or 0, r + 3)
    prev_touch: Optional[FrozenSet[Vertex]] = None
    for _ in range(growth_budget):
        lab = clusters(cfg, Ball(x, k))
        touch = frozenset(y for y in bdry if lab.touches_boundary[lab.labels[y]])
        if not touch or touch == prev_touch:
            finite = [y for y in bdry if y not in touch]
            if not finite:
                return 0
            by_label: Dict[Vertex, Set[Vertex]] = {}
            wanted = {lab.labels[y] for y in finite}
            for v, lb in lab.labels.items():
                if lb in wanted:
                    by_label.setdefault(lb, set()).add(v)
            return max(_edge_boundary_size(by_label[lab.labels[y]], d) for y in finite)
        prev_touch = touch
        k *= 2
    raise TrapGrowthError(
        f"T around {x} unresolved at radius {k // 2}",
        {"statistic": "T", "radius": k // 2},
    )


@dataclass(frozen=True)
class TrapStats:
    """The four local statistics for one sampled configuration.

    M_A and T_A are None when the caller asked only for the window radii
    (surveys of L1/L skip them for speed).  `proxy_radius` records the
    largest window used by any reach-proxy decision.
    """

    M_A: Optional[int]
    T_A: Optional[int]
    L_A1: int
    L_A: int
    H_offset: int
    disconnected_flag: bool
    proxy_radius: int


def _find(parent: Dict[Vertex, Vertex], v: Vertex) -> Vertex:
    while parent[v] != v:
        parent[v] = parent[parent[v]]
        v = parent[v]
    return v


def compute_L1_L(
    config: EdgeConfig,
    x: Vertex,
    r: int,
    model: ModelConstants,
    bias: Bias,
    growth_budget: int = 600,
    include_MT: bool = True,
) -> TrapStats:
    """The window radii L1 and L by incremental ring growth.

    Rings are added one radius at a time and only ever add edges, so a
    single union-find pass answers every window test; each test at radius k
    therefore reads exactly the edges of B^E(x, k), which is the
    stopping-time property.  The union-find carries per-root maxima of
    (distance from x, projection on the bias direction), which is all the
    window tests consume.
    """
    cfg = _closed_ball_config(config, x, r)
    bdry = sphere(x, r)
    dirv = bias.direction
    base_proj = dot(x, dirv)
    nz_axes = [i for i, c in enumerate(dirv) if c != 0.0]
    proj_axis = nz_axes[0] if len(nz_axes) == 1 else None
    # survey-rate hot loop: inline state resolution and union-find on local
    # dicts; parent maps vertex -> parent, meta maps root -> (size, max
    # distance from x, max projection)
    overlay_get = cfg.overlay.get
    index_get = cfg.window_index.get
    bit_list = cfg.bits.tolist()
    parent: Dict[Vertex, Vertex] = {}
    meta: Dict[Vertex, Tuple[int, int, float]] = {}

    def seed_ring(verts: List[Vertex], dist: int) -> None:
        if proj_axis is not None:
            coef = dirv[proj_axis]
            for v in verts:
                parent[v] = v
                meta[v] = (1, dist, v[proj_axis] * coef - base_proj)
        else:
            for v in verts:
                parent[v] = v
                meta[v] = (1, dist, dot(v, dirv) - base_proj)

    seed_ring(bdry, r)
    L1: Optional[int] = None
    L: Optional[int] = None
    H: int = 0
    disconnected = False
    k = r
    while L1 is None or L is None:
        if k > r:
            seed_ring(sphere(x, k), k)
            for v, u, e in ring_edges(x, k):
                st = overlay_get(e)
                if st is None:
                    i = index_get(e)
                    st = bit_list[i] if i is not None else cfg.edge_open(e)
                if not st:
                    continue
                ra = _find(parent, u)
                rb = _find(parent, v)
                if ra == rb:
                    continue
                sa, da, pa = meta[ra]
                sb, db, pb = meta[rb]
                if sa < sb:
                    ra, rb = rb, ra
                parent[rb] = ra
                meta[ra] = (
                    sa + sb,
                    da if da >= db else db,
                    pa if pa >= pb else pb,
                )
                del meta[rb]
        roots = {_find(parent, y) for y in bdry}
        touch_count = sum(1 for rt in roots if meta[rt][1] == k)
        if L1 is None and touch_count <= 1:
            L1 = k
            H = int(math.ceil(model.eta * L1 - 1e-9))
        if L1 is not None and L is None:
            reaches_halfspace = any(meta[rt][2] >= H - 1e-9 for rt in roots)
            if reaches_halfspace or not touch_count:
                L = k
                disconnected = not touch_count and not reaches_halfspace
        k += 1
        if k - r > growth_budget:
            raise TrapGrowthError(
                f"L around {x} unresolved at radius {k - 1}",
                {"statistic": "L", "radius": k - 1, "L1": L1},
            )
    proxy = L
    m_val: Optional[int] = None
    t_val: Optional[int] = None
    if include_MT:
        m_val = compute_M(config, x, r)
        t_val = compute_T(config, x, r)
        proxy = max(proxy, 2 * (r + 3))
    return TrapStats(
        M_A=m_val,
        T_A=t_val,
        L_A1=L1,
        L_A=L,
        H_offset=H,
        disconnected_flag=disconnected,
        proxy_radius=proxy,
    )


# ---------------------------------------------------------------------------
# surveys


@dataclass
class TailSurvey:
    statistic: str
    d: int
    p: float
    r: int
    n_samples: int
    seed: int
    counts: Dict[int, int]
    fitted_rate: float
    rate_se: float
    intercept: float
    r_squared: float
    fit_ns: List[int]
    proxy_radius: int


def survival_curve(counts: Dict[int, int], n_samples: int) -> List[Tuple[int, int]]:
    """(n, number of samples with value >= n) for n over the observed range."""
    if not counts:
        return []
    lo, hi = min(counts), max(counts)
    out = []
    acc = n_samples
    below = 0
    for n in range(lo, hi + 1):
        acc = n_samples - below
        out.append((n, acc))
        below += counts.get(n, 0)
    return out


def fit_log_survival(
    counts: Dict[int, int],
    n_samples: int,
    min_count: int = 30,
    min_n: Optional[int] = None,
) -> Tuple[float, float, float, float, List[int]]:
    """OLS of log survival against n at well-populated histogram levels.

    Fit points are the n with counts[n] >= min_count (their survival count
    is then automatically >= min_count too).  Between observed levels the
    survival function is constant, so grid points without mass would only
    duplicate their left neighbour and drag the fit toward plateaus;
    restricting to populated levels reads the decay where the data is.
    `min_n` additionally drops the head below that value.  Returns
    (slope, slope SE, intercept, R^2, fitted n values).
    """
    surv = dict(survival_curve(counts, n_samples))
    pts = [
        (n, surv[n])
        for n in sorted(counts)
        if counts[n] >= min_count and (min_n is None or n >= min_n)
    ]
    if len(pts) < 3:
        return math.nan, math.nan, math.nan, math.nan, [n for n, _ in pts]
    xs = np.array([n for n, _ in pts], dtype=float)
    ys = np.log(np.array([s for _, s in pts], dtype=float))
    n_pts = len(xs)
    xbar = xs.mean()
    ybar = ys.mean()
    sxx = float(((xs - xbar) ** 2).sum())
    slope = float(((xs - xbar) * (ys - ybar)).sum() / sxx)
    intercept = ybar - slope * xbar
    resid = ys - (intercept + slope * xs)
    ss_res = float((resid**2).sum())
    ss_tot = float(((ys - ybar) ** 2).sum())
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    se = math.sqrt(ss_res / (n_pts - 2) / sxx) if n_pts > 2 else math.nan
    return slope, se, intercept, r2, [int(v) for v in xs]


def _survey_one(
    statistic: str,
    d: int,
    p: float,
    r: int,
    sample_seed: int,
    bias: Bias,
    model: ModelConstants,
    prefetch_radius: int,
    variant_spec=None,
) -> Tuple[int, int]:
    origin: Vertex = (0,) * d
    oracle = EnvironmentOracle(seed=sample_seed, p=p)
    cfg = materialize(oracle, Ball(origin, prefetch_radius))
    if variant_spec is not None:
        cfg = apply_surgery(cfg, variant_spec)
    if statistic == "M":
        return compute_M(cfg, origin, r), 0
    if statistic == "T":
        return compute_T(cfg, origin, r), 0
    stats = compute_L1_L(cfg, origin, r, model, bias, include_MT=False)
    value = stats.L_A1 if statistic == "L1" else stats.L_A
    return value, stats.proxy_radius


def tail_survey(
    statistic: str,
    d: int,
    p: float,
    r: int,
    n_samples: int,
    seed: int,
    bias: Optional[Bias] = None,
    model: Optional[ModelConstants] = None,
    variant_spec=None,
    threads: int = 1,
    prefetch_radius: Optional[int] = None,
) -> TailSurvey:
    """Monte Carlo tail survey of one trap statistic at the origin.

    Per-sample seeds derive from the master seed by index and aggregation
    is index-ordered, so the survey is identical for any thread count.
    `variant_spec` (a SurgerySpec) is applied to every sampled
    configuration first, which is how conditioned-variant surveys reuse
    this code path.
    """
    if statistic not in ("M", "T", "L1", "L"):
        raise ValueError(f"unknown statistic {statistic!r}")
    if not p > 0.6:
        raise ValueError("surveys need p > 0.6 (safely supercritical)")
    if n_samples < 1000:
        raise ValueError("surveys need at least 10^3 samples")
    if bias is None:
        bias = Bias(lam=0.5, direction=tuple(1.0 if i == 0 else 0.0 for i in range(d)))
    if model is None:
        model = compute_constants(bias, d)
    if prefetch_radius is None:
        prefetch_radius = max(4 * r + 8, model.eta * (r + 2) + 4)
    seeds = [rng.derive_seed(seed, _SAMPLE_TAG, i) for i in range(n_samples)]

    def run(chunk: Sequence[int]) -> List[Tuple[int, int]]:
        return [
            _survey_one(
                statistic, d, p, r, s, bias, model, prefetch_radius, variant_spec
            )
            for s in chunk
        ]

    if threads <= 1:
        results = run(seeds)
    else:
        from concurrent.futures import ThreadPoolExecutor

        chunk = (n_samples + threads - 1) // threads
        parts = [seeds[i : i + chunk] for i in range(0, n_samples, chunk)]
        with ThreadPoolExecutor(max_workers=threads) as ex:
            results = [v for part in ex.map(run, parts) for v in part]
    values = [v for v, _ in results]
    proxy = max((pr for _, pr in results), default=0)
    counts = dict(sorted(Counter(values).items()))
    rate, se, intercept, r2, ns = fit_log_survival(counts, n_samples)
    return TailSurvey(
        statistic=statistic,
        d=d,
        p=p,
        r=r,
        n_samples=n_samples,
        seed=seed,
        counts=counts,
        fitted_rate=rate,
        rate_se=se,
        intercept=intercept,
        r_squared=r2,
        fit_ns=ns,
        proxy_radius=proxy,
    )


def resample_edges_outside(
    config: EdgeConfig,
    x: Vertex,
    keep_radius: int,
    p: float,
    seed: int,
    window_radius: int,
) -> EdgeConfig:
    """Re-randomize every window edge not inside B^E(x, keep_radius).

    Used by the stopping-time checks: a statistic determined by the kept
    edges must not move.  Edges beyond the window keep their backing state
    (the checks never read that far).
    """
    fresh = EnvironmentOracle(seed=rng.derive_seed(seed, _RESAMPLE_TAG), p=p)
    keep = set(ball_inner_edges(x, keep_radius))
    overlay = dict(config.overlay)
    for e in ball_inner_edges(x, window_radius):
        if e not in keep:
            overlay[e] = fresh.edge_state(e)
    return EdgeConfig(
        window=config.window,
        window_index=config.window_index,
        bits=config.bits,
        overlay=overlay,
        backing=config.backing,
    )


def resample_edges_inside(
    config: EdgeConfig, x: Vertex, r: int, p: float, seed: int
) -> EdgeConfig:
    """Re-randomize only the edges of B^E(x, r) (the trap ball itself)."""
    fresh = EnvironmentOracle(seed=rng.derive_seed(seed, _RESAMPLE_TAG, 1), p=p)
    overlay = dict(config.overlay)
    for e in ball_inner_edges(x, r):
        overlay[e] = fresh.edge_state(e)
    return EdgeConfig(
        window=config.window,
        window_index=config.window_index,
        bits=config.bits,
        overlay=overlay,
        backing=config.backing,
    )
