"""The auxiliary annealed chain built from Green-weighted averages.

The chain's row at z is the environment average of the quenched row at z
weighted by the killed Green value G_delta(0, z), conditioned on the origin
lying on the reaching cluster.  On a finite universe with an explicitly
enumerable environment law the defining identity (annealed Green values
equal the Green function of the auxiliary chain) holds exactly; the module
checks it by enumeration, estimates rows and drifts by Monte Carlo on the
lattice, and probes the boundedness of the per-local-pattern ratios that
control the drift decomposition.

Every estimator here shares one environment sample across the quantities
in a ratio (common random numbers), so the ratio noise is driven by the
Green fluctuations alone and not by independent-sample cancellation.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, FrozenSet, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from . import rng
from .environment import (
    EdgeConfig,
    EnvironmentOracle,
    condition_on_I,
    from_states,
    materialize,
    origin_cluster_reaches,
    with_local_config,
)
from .green import BOX, build_box_kernel, green_exact, green_row
from .kernel import Bias, LocalKernel, local_drift, transition_row
from .lattice import Ball, Edge, Vertex, ball_inner_edges, directions, dot, l1, sub
from .speedsim import run_walk

_MC_ENV_TAG = 0x4B524F57
_DEC_ENV_TAG = 0x4B444543
_RATIO_TAG = 0x4B524154
_TAU_TAG = 0x4B544155
_REP_ENV_TAG = 0x4B52454E
_REP_WALK_TAG = 0x4B52574B


class KalikowDiagnosticError(RuntimeError):
    """The denominator of an annealed ratio is statistically zero."""


def _indexed_map(fn, n: int, threads: int) -> list:
    """Run fn over range(n), keeping index order regardless of threads."""
    if threads <= 1:
        return [fn(i) for i in range(n)]
    from concurrent.futures import ThreadPoolExecutor

    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, range(n)))


# ---------------------------------------------------------------------------
# exhaustive check on an enumerable universe


@dataclass(frozen=True)
class EnumerableInstance:
    """A tiny box treated as the whole universe, with an enumerable law.

    Only the listed edges are random (edge i open with probability
    probs[i]); every other edge inside the box is open.  An optional
    predicate restricts the law to configurations where it holds, with
    weights renormalized.  The walk lives on the box alone: rows are
    renormalized over in-box neighbors, so the chain is honestly finite.
    """

    box: Ball
    bias: Bias
    random_edges: Tuple[Edge, ...]
    probs: Tuple[float, ...]
    condition: Optional[Callable[[EdgeConfig], bool]] = None

    def __post_init__(self) -> None:
        if len(self.random_edges) != len(self.probs):
            raise ValueError("one probability per random edge")
        if len(self.random_edges) > 20:
            raise ValueError("more than 2^20 configurations; not enumerable")
        allowed = set(ball_inner_edges(self.box.center, self.box.radius))
        for e in self.random_edges:
            if e not in allowed:
                raise ValueError(f"edge {e} is not inside the box")
        for q in self.probs:
            if not 0.0 <= q <= 1.0:
                raise ValueError("edge probabilities must lie in [0, 1]")

    def enumerate_configs(self) -> List[Tuple[EdgeConfig, float]]:
        """All admissible configurations with normalized weights."""
        base = {e: True for e in ball_inner_edges(self.box.center, self.box.radius)}
        raw: List[Tuple[EdgeConfig, float]] = []
        total = 0.0
        for m in range(1 << len(self.random_edges)):
            states = dict(base)
            w = 1.0
            for i, e in enumerate(self.random_edges):
                is_open = bool(m >> i & 1)
                states[e] = is_open
                w *= self.probs[i] if is_open else 1.0 - self.probs[i]
            total += w
            cfg = from_states(states)
            if self.condition is not None and not self.condition(cfg):
                continue
            raw.append((cfg, w))
        if abs(total - 1.0) > 1e-12:
            raise AssertionError(f"pre-conditioning weights sum to {total}")
        mass = sum(w for _, w in raw)
        if mass <= 0.0:
            raise ValueError("conditioning predicate rejects every configuration")
        return [(cfg, w / mass) for cfg, w in raw]


@dataclass
class ExhaustiveKalikow:
    """Exact auxiliary rows and the identity residual on one instance."""

    rows: Dict[Vertex, LocalKernel]
    residual: float
    annealed_green: Dict[Vertex, float]
    phat_green: Dict[Vertex, float]
    n_configs: int
    n_admissible: int


def kalikow_exhaustive(
    inst: EnumerableInstance, delta: float, z: Vertex
) -> ExhaustiveKalikow:
    """Enumerate the law, assemble the auxiliary chain, check the identity.

    Per configuration the exact Green row from the start vertex is solved
    on the box; the auxiliary row at y averages the quenched rows with
    weight G(0, y).  The returned residual is the absolute gap between the
    annealed Green value at z and the Green value of the auxiliary chain,
    which is zero in exact arithmetic for any environment law.
    """
    if not 0.0 <= delta < 1.0:
        raise ValueError("delta must lie in [0, 1)")
    d = len(inst.box.center)
    origin = (0,) * d
    configs = inst.enumerate_configs()
    annealed: Optional[np.ndarray] = None
    weighted_num: Optional[np.ndarray] = None
    mean_P: Optional[np.ndarray] = None
    kern = None
    for cfg, w in configs:
        kern = build_box_kernel(cfg, inst.bias, inst.box, universe=BOX)
        g = green_row(kern, delta, origin)
        P = kern.P.toarray() if hasattr(kern.P, "toarray") else np.asarray(kern.P)
        if annealed is None:
            annealed = np.zeros_like(g)
            weighted_num = np.zeros_like(P)
            mean_P = np.zeros_like(P)
        annealed += w * g
        weighted_num += w * g[:, None] * P
        mean_P += w * P
    assert annealed is not None and kern is not None
    verts = kern.vertices
    index = kern.index
    nv = len(verts)
    phat = np.array(mean_P)
    visited = annealed > 0.0
    phat[visited] = weighted_num[visited] / annealed[visited, None]
    u = np.linalg.solve((np.eye(nv) - delta * phat).T, _unit(nv, index[origin]))
    residual = abs(float(annealed[index[z]]) - float(u[index[z]]))
    rows: Dict[Vertex, LocalKernel] = {}
    for i, x in enumerate(verts):
        probs: Dict[Optional[Vertex], float] = {}
        for j in np.nonzero(phat[i])[0]:
            y = verts[j]
            probs[None if y == x else sub(y, x)] = float(phat[i, j])
        rows[x] = LocalKernel(probs=probs)
    return ExhaustiveKalikow(
        rows=rows,
        residual=residual,
        annealed_green={x: float(annealed[i]) for i, x in enumerate(verts)},
        phat_green={x: float(u[i]) for i, x in enumerate(verts)},
        n_configs=1 << len(inst.random_edges),
        n_admissible=len(configs),
    )


def _unit(n: int, i: int) -> np.ndarray:
    e = np.zeros(n)
    e[i] = 1.0
    return e


# ---------------------------------------------------------------------------
# Monte Carlo rows on the lattice


@dataclass
class KalikowRow:
    """One Monte Carlo auxiliary row with per-entry standard errors."""

    z: Vertex
    delta: float
    epsilon: float
    kernel: LocalKernel
    se: Dict[Optional[Vertex], float]
    n_envs: int
    green_mean: float
    green_se: float
    max_bracket: float
    rejections: int

    def drift(self) -> np.ndarray:
        return self.kernel.drift()


def kalikow_row_mc(
    p: float,
    bias: Bias,
    delta: float,
    z: Vertex,
    n_envs: int,
    seed: int,
    box: Ball,
    check_radius: int = 10,
    threads: int = 1,
) -> KalikowRow:
    """Estimate the auxiliary row at z over conditioned environments.

    Numerator and denominator are averaged over the same environment
    draws; the division happens once at the end, so the row sums to one
    exactly.  Standard errors come from the ratio's influence function.
    """
    if not 0.0 <= delta < 1.0:
        raise ValueError("delta must lie in [0, 1)")
    if n_envs < 2:
        raise ValueError("need at least 2 environments")
    d = bias.d
    origin = (0,) * d
    if l1(sub(z, box.center)) > box.radius - 2:
        raise ValueError("z needs a margin of 2 inside the Green window")
    if l1(sub(origin, box.center)) > box.radius:
        raise ValueError("the window must contain the start vertex")
    window = Ball(box.center, box.radius + 1)

    def one(i: int) -> Tuple[float, LocalKernel, float, int]:
        oracle, rejected = condition_on_I(
            p, check_radius, rng.derive_seed(seed, _MC_ENV_TAG, i), d=d
        )
        cfg = materialize(oracle, window)
        table = green_exact(cfg, bias, delta, z, box)
        return table.value(origin), transition_row(cfg, z, bias), table.error, rejected

    samples = _indexed_map(one, n_envs, threads)
    greens = np.array([g for g, _, _, _ in samples])
    den = float(greens.mean())
    den_se = float(greens.std(ddof=1) / math.sqrt(n_envs))
    if den <= 2.0 * den_se:
        raise KalikowDiagnosticError(
            f"annealed Green mass at {z} is {den:.3g} +- {den_se:.3g}; "
            "indistinguishable from zero (grow n_envs or move z closer)"
        )
    keys: List[Optional[Vertex]] = list(directions(d)) + [None]
    probs: Dict[Optional[Vertex], float] = {}
    ses: Dict[Optional[Vertex], float] = {}
    total_green = float(greens.sum())
    for key in keys:
        per_env = np.array([row.probs.get(key, 0.0) for _, row, _, _ in samples])
        ratio = float(np.dot(greens, per_env) / total_green)
        influence = greens * (per_env - ratio) / den
        probs[key] = ratio
        ses[key] = float(influence.std(ddof=1) / math.sqrt(n_envs))
    return KalikowRow(
        z=z,
        delta=delta,
        epsilon=1.0 - p,
        kernel=LocalKernel(probs={k: v for k, v in probs.items() if v != 0.0}),
        se=ses,
        n_envs=n_envs,
        green_mean=den,
        green_se=den_se,
        max_bracket=max(err for _, _, err, _ in samples),
        rejections=sum(r for _, _, _, r in samples),
    )


@dataclass
class KalikowField:
    """Auxiliary rows and drifts over a set of vertices, with errors."""

    rows: Dict[Vertex, LocalKernel]
    drift: Dict[Vertex, Tuple[float, ...]]
    delta: float
    epsilon: float
    sampling_error: Dict[Vertex, Dict[Optional[Vertex], float]]
    n_envs: int
    details: Dict[Vertex, KalikowRow] = field(default_factory=dict)


def build_field(
    p: float,
    bias: Bias,
    delta: float,
    z_list: Sequence[Vertex],
    n_envs: int,
    seed: int,
    box: Ball,
    check_radius: int = 10,
    threads: int = 1,
) -> KalikowField:
    """Monte Carlo rows at every listed vertex, one substream per vertex."""
    rows: Dict[Vertex, LocalKernel] = {}
    drift: Dict[Vertex, Tuple[float, ...]] = {}
    errs: Dict[Vertex, Dict[Optional[Vertex], float]] = {}
    details: Dict[Vertex, KalikowRow] = {}
    for j, z in enumerate(z_list):
        row = kalikow_row_mc(
            p,
            bias,
            delta,
            z,
            n_envs,
            rng.derive_seed(seed, _MC_ENV_TAG, 0x5A, j),
            box,
            check_radius=check_radius,
            threads=threads,
        )
        rows[z] = row.kernel
        drift[z] = tuple(float(c) for c in row.kernel.drift())
        errs[z] = row.se
        details[z] = row
    return KalikowField(
        rows=rows,
        drift=drift,
        delta=delta,
        epsilon=1.0 - p,
        sampling_error=errs,
        n_envs=n_envs,
        details=details,
    )


# ---------------------------------------------------------------------------
# drift decomposition over local patterns


@dataclass
class DecomposedDrift:
    """Auxiliary drift assembled from per-local-pattern ratios.

    weights[A] is the prior probability that exactly the directions in A
    are closed at z; ratios[A] re-weights it by the conditional annealed
    Green mass.  The effective weights weights[A] * ratios[A] are
    nonnegative and sum to one exactly, so the drift is a convex
    combination of the per-pattern one-step drifts.
    """

    z: Vertex
    delta: float
    epsilon: float
    drift: Tuple[float, ...]
    weights: Dict[FrozenSet[Vertex], float]
    ratios: Dict[FrozenSet[Vertex], float]
    ratio_se: Dict[FrozenSet[Vertex], float]
    n_envs: int
    green_mixture: float
    green_mixture_se: float


def _pattern_greens(
    p: float,
    bias: Bias,
    delta: float,
    z: Vertex,
    n_envs: int,
    seed: int,
    box: Ball,
    check_radius: int,
    threads: int,
) -> Tuple[List[FrozenSet[Vertex]], np.ndarray, np.ndarray]:
    """Per-environment Green values after forcing each local pattern at z.

    Environments are unconditioned; the reach indicator is re-evaluated on
    every surgered configuration and multiplies the Green value, which
    turns conditional expectations into plain averages.  Returns the
    pattern list, their prior probabilities, and the (n_envs, n_patterns)
    sample matrix.
    """
    d = bias.d
    origin = (0,) * d
    dirs = directions(d)
    eps = 1.0 - p
    patterns = [
        frozenset(dirs[i] for i in range(2 * d) if m >> i & 1)
        for m in range(1 << (2 * d))
    ]
    prior = np.array(
        [eps ** len(A) * (1.0 - eps) ** (2 * d - len(A)) for A in patterns]
    )
    window = Ball(box.center, box.radius + 1)

    def one(i: int) -> List[float]:
        oracle = EnvironmentOracle(
            seed=rng.derive_seed(seed, _DEC_ENV_TAG, i), p=p
        )
        cfg = materialize(oracle, window)
        out = []
        for A in patterns:
            cfg_A = with_local_config(cfg, z, A)
            if not origin_cluster_reaches(cfg_A, origin, check_radius):
                out.append(0.0)
                continue
            out.append(green_exact(cfg_A, bias, delta, z, box).value(origin))
        return out

    g = np.array(_indexed_map(one, n_envs, threads))
    return patterns, prior, g


def kalikow_drift_decomposed(
    p: float,
    bias: Bias,
    delta: float,
    z: Vertex,
    n_envs: int,
    seed: int,
    box: Optional[Ball] = None,
    check_radius: int = 10,
    threads: int = 1,
) -> DecomposedDrift:
    """Auxiliary drift at z via the local-pattern decomposition."""
    if not 0.0 <= delta < 1.0:
        raise ValueError("delta must lie in [0, 1)")
    if n_envs < 2:
        raise ValueError("need at least 2 environments")
    d = bias.d
    origin = (0,) * d
    if box is None:
        box = Ball(origin, max(check_radius, l1(z) + 2) + 2)
    patterns, prior, g = _pattern_greens(
        p, bias, delta, z, n_envs, seed, box, check_radius, threads
    )
    mixture_per_env = g @ prior
    den = float(mixture_per_env.mean())
    den_se = float(mixture_per_env.std(ddof=1) / math.sqrt(n_envs))
    if den <= 2.0 * den_se:
        raise KalikowDiagnosticError(
            f"mixture Green mass at {z} is {den:.3g} +- {den_se:.3g}; "
            "indistinguishable from zero (grow n_envs or move z closer)"
        )
    gbar = g.mean(axis=0)
    ratios = gbar / den
    drift_vec = np.zeros(d)
    for A, w, r in zip(patterns, prior, ratios):
        if w > 0.0 and r > 0.0:
            drift_vec += w * r * local_drift(A, bias, d)
    ratio_se: Dict[FrozenSet[Vertex], float] = {}
    for a, A in enumerate(patterns):
        influence = (g[:, a] - ratios[a] * mixture_per_env) / den
        ratio_se[A] = float(influence.std(ddof=1) / math.sqrt(n_envs))
    return DecomposedDrift(
        z=z,
        delta=delta,
        epsilon=1.0 - p,
        drift=tuple(float(c) for c in drift_vec),
        weights={A: float(w) for A, w in zip(patterns, prior)},
        ratios={A: float(r) for A, r in zip(patterns, ratios)},
        ratio_se=ratio_se,
        n_envs=n_envs,
        green_mixture=den,
        green_mixture_se=den_se,
    )


# ---------------------------------------------------------------------------
# boundedness probe for the per-pattern ratio


@dataclass
class RatioEntry:
    z: Vertex
    delta: float
    ratio: float
    se: float


@dataclass
class RatioTable:
    """Conditional-ratio estimates across vertices and killing levels.

    No bound is asserted: `spread` maps each vertex to max/first ratio over
    the delta list, and the caller judges whether the trend stays flat.
    """

    pattern: FrozenSet[Vertex]
    epsilon: float
    n_envs: int
    entries: List[RatioEntry]
    spread: Dict[Vertex, float]


def conditional_ratio_experiment(
    p: float,
    bias: Bias,
    z_list: Sequence[Vertex],
    A: Iterable[Vertex],
    delta_list: Sequence[float],
    n_envs: int,
    seed: int,
    check_radius: int = 10,
    threads: int = 1,
) -> RatioTable:
    """Track the pattern-A ratio as the killing is turned off.

    The same environment substream is reused across the delta list for
    each vertex, so the delta trend is not drowned by sampling noise.
    """
    pattern = frozenset(A)
    d = bias.d
    if len(pattern) >= 2 * d:
        raise ValueError("the closed pattern must be a proper subset")
    for e in pattern:
        if e not in set(directions(d)):
            raise ValueError(f"{e} is not a signed unit direction")
    entries: List[RatioEntry] = []
    spread: Dict[Vertex, float] = {}
    for j, z in enumerate(z_list):
        per_delta: List[float] = []
        for delta in delta_list:
            dec = kalikow_drift_decomposed(
                p,
                bias,
                delta,
                z,
                n_envs,
                rng.derive_seed(seed, _RATIO_TAG, j),
                check_radius=check_radius,
                threads=threads,
            )
            entries.append(
                RatioEntry(
                    z=z,
                    delta=delta,
                    ratio=dec.ratios[pattern],
                    se=dec.ratio_se[pattern],
                )
            )
            per_delta.append(dec.ratios[pattern])
        spread[z] = (
            max(per_delta) / per_delta[0] if per_delta[0] > 0 else math.inf
        )
    return RatioTable(
        pattern=pattern,
        epsilon=1.0 - p,
        n_envs=n_envs,
        entries=entries,
        spread=spread,
    )


# ---------------------------------------------------------------------------
# the stopped-walk speed representation


@dataclass
class SpeedRepresentation:
    """Ratio-of-expectations speed from geometrically stopped walks."""

    speed: float
    se: float
    delta: float
    epsilon: float
    mean_lifetime: float
    mean_proj: float
    n_walks: int


def speed_representation(
    p: float,
    bias: Bias,
    delta: float,
    n_walks: int,
    seed: int,
    check_radius: int = 10,
    threads: int = 1,
) -> SpeedRepresentation:
    """E[projected endpoint] / E[lifetime] under per-step survival delta.

    Each walk runs for an independently pre-drawn geometric lifetime
    (P[tau >= k] = delta^k) in a conditioned environment.  As delta
    approaches 1 the ratio approaches the long-run speed projection.
    """
    if not 0.0 < delta < 1.0:
        raise ValueError("delta must lie in (0, 1)")
    if n_walks < 2:
        raise ValueError("need at least 2 walks")
    d = bias.d
    log_delta = math.log(delta)

    def one(i: int) -> Tuple[float, int]:
        u = rng.uniform01(rng.mix(seed, _TAU_TAG, i))
        tau = int(math.log(1.0 - u) / log_delta)
        oracle, _ = condition_on_I(
            p, check_radius, rng.derive_seed(seed, _REP_ENV_TAG, i), d=d
        )
        walk = run_walk(
            oracle, bias, tau, rng.derive_seed(seed, _REP_WALK_TAG, i)
        )
        return dot(walk.final, bias.direction), tau

    samples = _indexed_map(one, n_walks, threads)
    projs = np.array([pr for pr, _ in samples])
    taus = np.array([t for _, t in samples], dtype=float)
    mean_tau = float(taus.mean())
    if mean_tau <= 0.0:
        raise KalikowDiagnosticError("all lifetimes were zero; raise delta")
    speed = float(projs.mean() / mean_tau)
    influence = (projs - speed * taus) / mean_tau
    return SpeedRepresentation(
        speed=speed,
        se=float(influence.std(ddof=1) / math.sqrt(n_walks)),
        delta=delta,
        epsilon=1.0 - p,
        mean_lifetime=mean_tau,
        mean_proj=float(projs.mean()),
        n_walks=n_walks,
    )


# ---------------------------------------------------------------------------
# artifact emission


def _dir_label(e: Vertex) -> str:
    axis = next(i for i, c in enumerate(e) if c != 0)
    return f"{'plus' if e[axis] > 0 else 'minus'}{axis}"


def write_field_csv(field_: KalikowField, path: str) -> None:
    zs = sorted(field_.rows)
    d = len(zs[0])
    dirs = directions(d)
    cols = [f"z{i}" for i in range(d)]
    cols += [f"p_{_dir_label(e)}" for e in dirs]
    cols += [f"se_{_dir_label(e)}" for e in dirs]
    cols += ["self_loop", "se_self_loop"]
    cols += [f"drift{i}" for i in range(d)]
    lines = [",".join(cols)]
    for z in zs:
        row = [str(c) for c in z]
        kern = field_.rows[z]
        errs = field_.sampling_error[z]
        row += [repr(kern.probs.get(e, 0.0)) for e in dirs]
        row += [repr(errs.get(e, 0.0)) for e in dirs]
        row += [repr(kern.self_loop), repr(errs.get(None, 0.0))]
        row += [repr(c) for c in field_.drift[z]]
        lines.append(",".join(row))
    with open(path, "w", newline="") as fh:
        fh.write("\r\n".join(lines) + "\r\n")


def write_ratio_csv(table: RatioTable, path: str) -> None:
    d = len(table.entries[0].z) if table.entries else 0
    cols = [f"z{i}" for i in range(d)] + ["delta", "ratio", "se"]
    lines = [",".join(cols)]
    for ent in table.entries:
        row = [str(c) for c in ent.z]
        row += [repr(ent.delta), repr(ent.ratio), repr(ent.se)]
        lines.append(",".join(row))
    with open(path, "w", newline="") as fh:
        fh.write("\r\n".join(lines) + "\r\n")


def write_meta_json(path: str, meta: dict) -> None:
    with open(path, "w") as fh:
        json.dump(meta, fh, sort_keys=True, indent=2)
        fh.write("\n")
