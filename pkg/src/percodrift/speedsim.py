"""Direct simulation of the biased walk and the slope test of the sweep.

A walk lives on the lazily revealed infinite lattice: edge states come from
the counter-based oracle on first touch and are memoized per site, with
entries far behind the walker evicted so memory stays bounded.  Transition
rows only depend on the local open/closed pattern (the common factor
e^{2x.l} cancels in the normalization), so all 2^(2d) rows are precomputed
once per bias.

Speeds are plain time averages over independent (environment, walk)
replicas, with t-interval confidence bounds from the replica spread; the
sweep fits the projected speed against the closing density and compares the
slope to the analytic derivative supplied by the caller.
"""

from __future__ import annotations

import json
import math
import random
import warnings
from dataclasses import dataclass
from functools import lru_cache
from operator import add as _add
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import stats

from . import rng
from .environment import _EDGE_STREAM_TAG, EnvironmentOracle, condition_on_I
from .kernel import Bias, direction_weight
from .lattice import Vertex, directions, dot

_ENV_TAG = 0x53454E56
_WALK_TAG = 0x53574C4B
_POINT_TAG = 0x53504E54

_MASK = 0xFFFFFFFFFFFFFFFF


@lru_cache(maxsize=32)
def _row_table(
    bias: Bias,
) -> Tuple[Tuple[Tuple[float, ...], Tuple[Vertex, ...], Tuple[float, ...]], ...]:
    """Per open-pattern transition rows: (cumulative probs, moves, dprojs).

    Bit i of the pattern marks the edge toward directions(d)[i] open.  The
    last cumulative entry is pinned to 1.0 so uniform draws in [0, 1) always
    land.  Pattern 0 (isolated site) gets empty tuples: the walk stays put.
    """
    d = bias.d
    dirs = directions(d)
    ws = [direction_weight(e, bias) for e in dirs]
    table = []
    for m in range(1 << (2 * d)):
        moves = [e for i, e in enumerate(dirs) if m >> i & 1]
        weights = [w for i, w in enumerate(ws) if m >> i & 1]
        if not moves:
            table.append(((), (), ()))
            continue
        total = sum(weights)
        cums: List[float] = []
        acc = 0.0
        for w in weights:
            acc += w / total
            cums.append(acc)
        cums[-1] = 1.0
        dprojs = tuple(dot(e, bias.direction) for e in moves)
        table.append((tuple(cums), tuple(moves), dprojs))
    return tuple(table)


@dataclass(frozen=True)
class WalkResult:
    """One quenched walk: endpoint plus ballisticity and cache diagnostics.

    max_backtrack is the largest drop of the walker's projection on the
    bias direction below its running maximum, in normalized-direction units.
    """

    final: Vertex
    n_steps: int
    proj: float
    max_backtrack: float
    distinct_sites: int
    cache_peak: int
    evictions: int
    eviction_distance: float


def run_walk(
    oracle: EnvironmentOracle,
    bias: Bias,
    n_steps: int,
    walk_seed: int,
    eviction_distance: float = 96.0,
    evict_every: int = 32768,
) -> WalkResult:
    """Simulate n_steps of the quenched walk from the origin.

    Edge states are revealed through the oracle exactly as environment
    queries would see them (same hash stream), so a walk and any window
    materialization of the same oracle agree on every edge.
    """
    if n_steps < 0:
        raise ValueError("n_steps must be >= 0")
    d = bias.d
    table = _row_table(bias)
    sm = rng.splitmix64
    h_tag = sm((sm(oracle.seed & _MASK) ^ _EDGE_STREAM_TAG) & _MASK)
    dirv = bias.direction

    # splitmix64 rounds are inlined below and the acceptance test
    # u01(h) < p is done in integer space: (h >> 11) < p * 2^53.  The
    # scaling is an exact exponent shift for p in (0, 1], so the comparison
    # matches EnvironmentOracle.edge_state bit for bit.
    golden, mix1, mix2, mask = rng._GOLDEN, rng._MIX1, rng._MIX2, _MASK
    ithresh = oracle.p * 9007199254740992.0
    # at p = 1 every threshold test is true, so the revealed pattern is
    # always all-open; skip the hashing but keep the cache bookkeeping
    full_pattern = (1 << (2 * d)) - 1 if oracle.p >= 1.0 else None

    hbase: Dict[Vertex, int] = {}
    pattern: Dict[Vertex, int] = {}

    def reveal(x: Vertex) -> int:
        m = 0
        hx = hbase.get(x)
        if hx is None:
            h = h_tag
            for c in x:
                h = ((h ^ (c & mask)) + golden) & mask
                h = ((h ^ (h >> 30)) * mix1) & mask
                h = ((h ^ (h >> 27)) * mix2) & mask
                h ^= h >> 31
            hx = h
            hbase[x] = hx
        for ia in range(d):
            h = ((hx ^ ia) + golden) & mask
            h = ((h ^ (h >> 30)) * mix1) & mask
            h = ((h ^ (h >> 27)) * mix2) & mask
            h ^= h >> 31
            if (h >> 11) < ithresh:
                m |= 1 << ia
            below = x[:ia] + (x[ia] - 1,) + x[ia + 1 :]
            hb = hbase.get(below)
            if hb is None:
                h = h_tag
                for c in below:
                    h = ((h ^ (c & mask)) + golden) & mask
                    h = ((h ^ (h >> 30)) * mix1) & mask
                    h = ((h ^ (h >> 27)) * mix2) & mask
                    h ^= h >> 31
                hb = h
                hbase[below] = hb
            h = ((hb ^ ia) + golden) & mask
            h = ((h ^ (h >> 30)) * mix1) & mask
            h = ((h ^ (h >> 27)) * mix2) & mask
            h ^= h >> 31
            if (h >> 11) < ithresh:
                m |= 1 << (d + ia)
        return m

    nonzero = [i for i, c in enumerate(dirv) if c != 0.0]
    proj_axis = nonzero[0] if len(nonzero) == 1 else None

    rnd = random.Random(walk_seed).random
    x: Vertex = (0,) * d
    proj = 0.0
    best = 0.0
    maxback = 0.0
    distinct = 0
    cache_peak = 0
    evictions = 0
    steps_done = 0
    till_sweep = evict_every
    while steps_done < n_steps:
        pat = pattern.get(x)
        if pat is None:
            pat = full_pattern if full_pattern is not None else reveal(x)
            pattern[x] = pat
            distinct += 1
            if len(pattern) > cache_peak:
                cache_peak = len(pattern)
        cums, moves, dprojs = table[pat]
        if not moves:
            steps_done = n_steps
            break
        u = rnd()
        j = 0
        while u > cums[j]:
            j += 1
        x = tuple(map(_add, x, moves[j]))
        proj += dprojs[j]
        if proj > best:
            best = proj
        elif best - proj > maxback:
            maxback = best - proj
        steps_done += 1
        till_sweep -= 1
        if till_sweep == 0:
            till_sweep = evict_every
            threshold = best - eviction_distance
            before = len(pattern)
            if proj_axis is not None:
                ax, coef = proj_axis, dirv[proj_axis]
                pattern = {
                    v: pv for v, pv in pattern.items() if v[ax] * coef >= threshold
                }
                hbase = {
                    v: hv for v, hv in hbase.items() if v[ax] * coef >= threshold
                }
            else:
                pattern = {
                    v: pv
                    for v, pv in pattern.items()
                    if sum(a * b for a, b in zip(v, dirv)) >= threshold
                }
                hbase = {
                    v: hv
                    for v, hv in hbase.items()
                    if sum(a * b for a, b in zip(v, dirv)) >= threshold
                }
            evictions += before - len(pattern)
    return WalkResult(
        final=x,
        n_steps=n_steps,
        proj=proj,
        max_backtrack=maxback,
        distinct_sites=distinct,
        cache_peak=cache_peak,
        evictions=evictions,
        eviction_distance=eviction_distance,
    )


@dataclass
class SpeedEstimate:
    """Replica-averaged speed at one parameter point.

    ci holds per-component 95% half-widths from the t-interval on replica
    means.  Estimates meant for artifacts need n_reps >= 8; the emitters
    enforce that, smoke-scale runs may go lower.
    """

    p: float
    bias: Bias
    v_hat: Tuple[float, ...]
    ci: Tuple[float, ...]
    n_steps: int
    n_reps: int
    master_seed: int
    replica_proj: Tuple[float, ...]
    max_backtrack: float
    check_radius: int
    conditioning_rejections: int

    @property
    def proj_speed(self) -> float:
        return dot(self.v_hat, self.bias.direction)

    @property
    def proj_ci(self) -> float:
        sd = float(np.std(self.replica_proj, ddof=1))
        return float(
            stats.t.ppf(0.975, self.n_reps - 1) * sd / math.sqrt(self.n_reps)
        )


def estimate_speed(
    p: float,
    bias: Bias,
    n_steps: int,
    n_reps: int,
    master_seed: int,
    check_radius: int = 10,
    threads: int = 1,
    eviction_distance: float = 96.0,
    warn_lambda: float = 1.0,
) -> SpeedEstimate:
    """Speed from n_reps independent conditioned (environment, walk) pairs.

    Replica i derives its environment and walk seeds from the master seed
    by index and the reduction is by index, so the estimate is identical
    for any thread count.
    """
    if not p > 0.6:
        raise ValueError("speed estimation needs p > 0.6 (conditioning proxy)")
    if n_reps < 2:
        raise ValueError("need at least 2 replicas for a spread estimate")
    if n_steps < 1:
        raise ValueError("n_steps must be positive")
    if bias.lam > warn_lambda:
        warnings.warn(
            f"bias strength {bias.lam} is outside the validated weak-drift "
            "regime; at positive closing density the walk may be trapped and "
            "the time average then reflects the sub-ballistic phase",
            RuntimeWarning,
            stacklevel=2,
        )

    def one(i: int) -> Tuple[WalkResult, int]:
        env_master = rng.derive_seed(master_seed, _ENV_TAG, i)
        oracle, rejected = condition_on_I(p, check_radius, env_master, d=bias.d)
        walk = run_walk(
            oracle,
            bias,
            n_steps,
            rng.derive_seed(master_seed, _WALK_TAG, i),
            eviction_distance,
        )
        return walk, rejected

    if threads <= 1:
        results = [one(i) for i in range(n_reps)]
    else:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=threads) as ex:
            results = list(ex.map(one, range(n_reps)))
    walks = [w for w, _ in results]
    rejections = sum(r for _, r in results)
    per_rep = np.array([[c / n_steps for c in w.final] for w in walks])
    v_hat = per_rep.mean(axis=0)
    sd = per_rep.std(axis=0, ddof=1)
    half = stats.t.ppf(0.975, n_reps - 1) * sd / math.sqrt(n_reps)
    return SpeedEstimate(
        p=p,
        bias=bias,
        v_hat=tuple(float(v) for v in v_hat),
        ci=tuple(float(h) for h in half),
        n_steps=n_steps,
        n_reps=n_reps,
        master_seed=master_seed,
        replica_proj=tuple(float(dot(row, bias.direction)) for row in per_rep),
        max_backtrack=max(w.max_backtrack for w in walks),
        check_radius=check_radius,
        conditioning_rejections=rejections,
    )


@dataclass
class SweepResult:
    """Weighted-fit summary of projected speed against closing density."""

    grid: Tuple[float, ...]
    estimates: List[SpeedEstimate]
    slope: float
    slope_se: float
    slope_se_combined: float
    chi2_dof: float
    intercept: float
    theoretical: float
    z_score: float
    z_unscaled: float
    quad_coef: float
    quad_z: float
    master_seed: int


def _wls(
    xs: np.ndarray, ys: np.ndarray, ws: np.ndarray, order: int
) -> Tuple[np.ndarray, np.ndarray]:
    """Weighted polynomial fit; returns (coefficients, standard errors)."""
    X = np.vander(xs, order + 1, increasing=True)
    W = np.diag(ws)
    cov = np.linalg.inv(X.T @ W @ X)
    beta = cov @ X.T @ W @ ys
    return beta, np.sqrt(np.diag(cov))


def sweep_and_fit(
    eps_grid: Sequence[float],
    bias: Bias,
    n_steps: int,
    n_reps: int,
    master_seed: int,
    theoretical: float,
    theoretical_se: float = 0.0,
    check_radius: int = 10,
    threads: int = 1,
    max_eps: float = 0.05,
) -> SweepResult:
    """Estimate speeds on the grid and fit the first-order slope.

    `theoretical` is the analytic value the fitted slope is compared to
    (the negated projected derivative at full density); the z-score uses
    the fit SE combined with `theoretical_se` when the reference itself
    carries uncertainty.
    """
    grid = tuple(float(e) for e in eps_grid)
    if len(grid) < 3:
        raise ValueError("sweep fit needs at least 3 grid points")
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise ValueError("eps grid must be strictly increasing")
    if grid[0] != 0.0:
        raise ValueError("eps grid must start at 0 (the reference point)")
    if grid[-1] > max_eps:
        raise ValueError(
            f"max eps {grid[-1]} above the validated first-order window {max_eps}"
        )
    estimates = []
    for idx, eps in enumerate(grid):
        estimates.append(
            estimate_speed(
                1.0 - eps,
                bias,
                n_steps,
                n_reps,
                rng.derive_seed(master_seed, _POINT_TAG, idx),
                check_radius=check_radius,
                threads=threads,
            )
        )
    xs = np.array(grid)
    ys = np.array([est.proj_speed for est in estimates])
    variances = np.array(
        [
            np.var(est.replica_proj, ddof=1) / est.n_reps
            for est in estimates
        ]
    )
    ws = 1.0 / variances
    beta, ses = _wls(xs, ys, ws, order=1)
    slope, slope_se = float(beta[1]), float(ses[1])
    z = (slope - theoretical) / math.hypot(slope_se, theoretical_se)
    qbeta, qses = _wls(xs, ys, ws, order=2)
    quad_coef, quad_se = float(qbeta[2]), float(qses[2])
    return SweepResult(
        grid=grid,
        estimates=estimates,
        slope=slope,
        slope_se=slope_se,
        intercept=float(beta[0]),
        theoretical=theoretical,
        z_score=float(z),
        quad_coef=quad_coef,
        quad_z=float(quad_coef / quad_se) if quad_se > 0 else math.nan,
        master_seed=master_seed,
    )


# ---------------------------------------------------------------------------
# artifact emission (deterministic bytes: repr floats, \r\n rows, sorted keys)


def write_sweep_csv(sweep: SweepResult, path: str) -> None:
    for est in sweep.estimates:
        if est.n_reps < 8:
            raise ValueError("published estimates need n_reps >= 8")
    d = sweep.estimates[0].bias.d
    cols = ["epsilon"]
    for i in range(d):
        cols += [f"v{i}", f"ci{i}"]
    cols += ["proj_speed", "proj_ci", "n_steps", "n_reps"]
    lines = [",".join(cols)]
    for eps, est in zip(sweep.grid, sweep.estimates):
        row = [repr(eps)]
        for i in range(d):
            row += [repr(est.v_hat[i]), repr(est.ci[i])]
        row += [
            repr(est.proj_speed),
            repr(est.proj_ci),
            str(est.n_steps),
            str(est.n_reps),
        ]
        lines.append(",".join(row))
    with open(path, "w", newline="") as fh:
        fh.write("\r\n".join(lines) + "\r\n")


def sweep_summary(sweep: SweepResult, meta: Optional[dict] = None) -> dict:
    out = {
        "grid": list(sweep.grid),
        "slope": sweep.slope,
        "slope_se": sweep.slope_se,
        "intercept": sweep.intercept,
        "theoretical": sweep.theoretical,
        "z_score": sweep.z_score,
        "quad_coef": sweep.quad_coef,
        "quad_z": sweep.quad_z,
        "master_seed": sweep.master_seed,
        "points": [
            {
                "epsilon": eps,
                "v_hat": list(est.v_hat),
                "ci": list(est.ci),
                "proj_speed": est.proj_speed,
                "proj_ci": est.proj_ci,
                "replica_proj": list(est.replica_proj),
                "max_backtrack": est.max_backtrack,
                "n_steps": est.n_steps,
                "n_reps": est.n_reps,
                "check_radius": est.check_radius,
                "conditioning_rejections": est.conditioning_rejections,
            }
            for eps, est in zip(sweep.grid, sweep.estimates)
        ],
    }
    if meta:
        out["meta"] = meta
    return out


def write_sweep_json(
    sweep: SweepResult, path: str, meta: Optional[dict] = None
) -> None:
    with open(path, "w") as fh:
        json.dump(sweep_summary(sweep, meta), fh, sort_keys=True, indent=2)
        fh.write("\n")
