"""First-order behavior of the speed at full density.

Everything here lives on the homogeneous lattice (all edges open, or all
open except finitely many deletions), where the zero-killing Green function
is finite by transience and can be solved on a truncated window.  The
window is a box, not a ball: the Green column decays fast ahead of the
drift and slowly behind and sideways, so the box extends twice as far
against the drift and 1.5x transversally.  Truncation error is estimated
by doubling the extent until successive values stabilize.

Two independent routes to the derivative of the speed in the density are
assembled and compared: the per-direction route through deleted-edge Green
differences, and the closed-form route through the open-lattice Green
differences alone.  Their agreement is an end-to-end check of every Green
value involved.
"""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass
from functools import lru_cache
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .kernel import Bias, direction_weight, local_drift, local_row
from .lattice import Edge, Vertex, canonical_edge, directions, edge_endpoints

_MC_WALK_TAG = 0x4A4D4357


class TruncationError(RuntimeError):
    """The window doubling budget ran out before values stabilized."""


class InconsistencyError(RuntimeError):
    """Inputs violate a relation that exact values must satisfy."""


# ---------------------------------------------------------------------------
# the rectangular window solver at zero killing


@dataclass(frozen=True)
class RectWindow:
    """A product-of-intervals vertex set, inclusive on both ends."""

    lo: Tuple[int, ...]
    hi: Tuple[int, ...]

    def __post_init__(self) -> None:
        if any(h < l for l, h in zip(self.lo, self.hi)):
            raise ValueError("empty window")

    @property
    def shape(self) -> Tuple[int, ...]:
        return tuple(h - l + 1 for l, h in zip(self.lo, self.hi))

    @property
    def size(self) -> int:
        out = 1
        for s in self.shape:
            out *= s
        return out

    def contains(self, v: Vertex) -> bool:
        return all(l <= c <= h for c, l, h in zip(v, self.lo, self.hi))

    def flat_index(self, v: Vertex) -> int:
        idx = 0
        for c, l, s in zip(v, self.lo, self.shape):
            idx = idx * s + (c - l)
        return idx


def drift_window(bias: Bias, extent: int) -> RectWindow:
    """The asymmetric box for a Green column targeted at the origin.

    Per axis: `extent` ahead of the drift, twice that behind, and 1.5x on
    each side for axes orthogonal to the drift.
    """
    lo = []
    hi = []
    side = int(math.ceil(1.5 * extent))
    for c in bias.direction:
        if c > 1e-12:
            lo.append(-2 * extent)
            hi.append(extent)
        elif c < -1e-12:
            lo.append(-extent)
            hi.append(2 * extent)
        else:
            lo.append(-side)
            hi.append(side)
    return RectWindow(tuple(lo), tuple(hi))


@dataclass
class HomogeneousTable:
    """The column x -> G(x, 0) on a window, Dirichlet-0 outside."""

    window: RectWindow
    bias: Bias
    closed: Tuple[Edge, ...]
    values: np.ndarray

    def value(self, v: Vertex) -> float:
        if not self.window.contains(v):
            raise KeyError(f"{v} outside the solved window")
        return float(self.values[self.window.flat_index(v)])


@lru_cache(maxsize=64)
def green_homogeneous(
    bias: Bias, closed: Tuple[Edge, ...], extent: int
) -> HomogeneousTable:
    """Solve (I - P) g = e_0 on the drift window with the listed deletions.

    The transition law is translation invariant away from the closed
    edges, so the bulk of the sparse system is assembled with shifted
    index slices; only the rows of vertices touching a deletion are
    rebuilt individually.
    """
    if bias.lam <= 0:
        raise ValueError("zero-killing Green values need a strict drift")
    d = bias.d
    window = drift_window(bias, extent)
    shape = window.shape
    n = window.size
    ids = np.arange(n).reshape(shape)

    special: Dict[Vertex, set] = {}
    for e in closed:
        x, y = edge_endpoints(e)
        if window.contains(x):
            special.setdefault(x, set()).add(tuple(b - a for a, b in zip(x, y)))
        if window.contains(y):
            special.setdefault(y, set()).add(tuple(a - b for a, b in zip(x, y)))

    open_row = local_row(frozenset(), bias, d)
    rows: List[np.ndarray] = []
    cols: List[np.ndarray] = []
    vals: List[np.ndarray] = []
    for e_dir in directions(d):
        axis = next(i for i, c in enumerate(e_dir) if c != 0)
        step = e_dir[axis]
        src = [slice(None)] * d
        dst = [slice(None)] * d
        if step > 0:
            src[axis] = slice(0, shape[axis] - 1)
            dst[axis] = slice(1, shape[axis])
        else:
            src[axis] = slice(1, shape[axis])
            dst[axis] = slice(0, shape[axis] - 1)
        s = ids[tuple(src)].ravel()
        t = ids[tuple(dst)].ravel()
        rows.append(s)
        cols.append(t)
        vals.append(np.full(len(s), open_row[e_dir]))
    row_idx = np.concatenate(rows)
    col_idx = np.concatenate(cols)
    data = np.concatenate(vals)

    if special:
        special_ids = np.array([window.flat_index(x) for x in special])
        keep = ~np.isin(row_idx, special_ids)
        row_idx, col_idx, data = row_idx[keep], col_idx[keep], data[keep]
        extra_r: List[int] = []
        extra_c: List[int] = []
        extra_v: List[float] = []
        for x, closed_dirs in special.items():
            row = local_row(frozenset(closed_dirs), bias, d)
            if not row:
                raise ValueError(f"deletions isolate {x}; the column diverges")
            i = window.flat_index(x)
            for e_dir, q in row.items():
                y = tuple(a + b for a, b in zip(x, e_dir))
                if window.contains(y):
                    extra_r.append(i)
                    extra_c.append(window.flat_index(y))
                    extra_v.append(q)
        row_idx = np.concatenate([row_idx, np.array(extra_r, dtype=row_idx.dtype)])
        col_idx = np.concatenate([col_idx, np.array(extra_c, dtype=col_idx.dtype)])
        data = np.concatenate([data, np.array(extra_v)])

    P = sp.csr_matrix((data, (row_idx, col_idx)), shape=(n, n))
    A = (sp.identity(n, format="csr") - P).tocsc()
    rhs = np.zeros(n)
    rhs[window.flat_index((0,) * d)] = 1.0
    g = spla.splu(A).solve(rhs)
    return HomogeneousTable(window=window, bias=bias, closed=closed, values=g)


def _column_pair(
    bias: Bias, closed: Tuple[Edge, ...], extent: int
) -> Tuple[HomogeneousTable, HomogeneousTable]:
    """Tables at the extent and at double the extent, for error control."""
    return (
        green_homogeneous(bias, closed, extent),
        green_homogeneous(bias, closed, 2 * extent),
    )


# ---------------------------------------------------------------------------
# exact one-step objects


def v_one(bias: Bias) -> np.ndarray:
    """The speed at full density: the one-step drift of the open row."""
    return local_drift(frozenset(), bias)


def drift_with_closed(bias: Bias, e: Vertex) -> np.ndarray:
    """One-step drift at a vertex whose edge toward e is closed."""
    return local_drift(frozenset([e]), bias)


# ---------------------------------------------------------------------------
# Green differences


@dataclass
class JValue:
    """A single open-lattice Green difference with its error estimates."""

    e: Vertex
    value: float
    truncation_gap: float
    extent: int
    reversibility_residual: float
    mc_value: Optional[float] = None
    mc_se: Optional[float] = None

    @property
    def error(self) -> float:
        gaps = [self.truncation_gap]
        if self.mc_value is not None and self.mc_se is not None:
            gaps.append(abs(self.value - self.mc_value))
        return max(gaps)


def _mc_visits(
    bias: Bias, start: Vertex, n_walks: int, n_steps: int, seed: int
) -> Tuple[float, float]:
    """Mean and standard error of visit counts to the origin from `start`.

    A direct simulation oracle for the open lattice: by transience the
    visits beyond the step horizon contribute an exponentially small tail,
    so a few thousand steps per walk saturate the expectation.
    """
    d = bias.d
    dirs = directions(d)
    weights = [direction_weight(e, bias) for e in dirs]
    total = sum(weights)
    cums = []
    acc = 0.0
    for w in weights:
        acc += w / total
        cums.append(acc)
    cums[-1] = 1.0
    origin = (0,) * d
    counts = np.zeros(n_walks)
    for i in range(n_walks):
        rnd = random.Random(seed + i).random
        x = start
        hits = 1 if x == origin else 0
        for _ in range(n_steps):
            u = rnd()
            j = 0
            while u > cums[j]:
                j += 1
            x = tuple(a + b for a, b in zip(x, dirs[j]))
            if x == origin:
                hits += 1
        counts[i] = hits
    return float(counts.mean()), float(counts.std(ddof=1) / math.sqrt(n_walks))


def compute_J(
    bias: Bias,
    e: Vertex,
    tol: float = 1e-8,
    extent: int = 30,
    max_extent: int = 240,
    mc_walks: int = 0,
    mc_steps: int = 4000,
    seed: int = 0,
) -> JValue:
    """The open-lattice Green difference G(0,0) - G(e,0), with certification.

    Doubles the window extent until the difference moves by less than tol,
    then optionally cross-checks both Green values against the simulation
    oracle.  The reversibility residual compares the two detailed-balance
    sides built from the same solve.
    """
    d = bias.d
    origin = (0,) * d
    minus_e = tuple(-c for c in e)
    cur = extent
    small, big = _column_pair(bias, (), cur)
    while True:
        j_small = small.value(origin) - small.value(e)
        j_big = big.value(origin) - big.value(e)
        gap = abs(j_big - j_small)
        if gap < tol:
            break
        cur *= 2
        if 2 * cur > max_extent:
            raise TruncationError(
                f"J at {e}: gap {gap:.3e} after extent {cur} (budget {max_extent})"
            )
        small, big = big, green_homogeneous(bias, (), 2 * cur)
    row = local_row(frozenset(), bias, d)
    lhs = row[e] * big.value(e)
    rhs = row[minus_e] * big.value(minus_e)
    rev = abs(lhs - rhs) / max(abs(lhs), abs(rhs))
    result = JValue(
        e=e,
        value=j_big,
        truncation_gap=gap,
        extent=2 * cur,
        reversibility_residual=rev,
    )
    if mc_walks > 0:
        g00, se0 = _mc_visits(
            bias, origin, mc_walks, mc_steps, _mc_seed(seed, origin)
        )
        ge0, se1 = _mc_visits(bias, e, mc_walks, mc_steps, _mc_seed(seed, e))
        result.mc_value = g00 - ge0
        result.mc_se = math.hypot(se0, se1)
    return result


def _mc_seed(seed: int, start: Vertex) -> int:
    from . import rng

    return rng.mix(seed, _MC_WALK_TAG, *start)


def compute_J_ee(bias: Bias, e: Vertex, J_plus: float, J_minus: float) -> float:
    """Deleted-edge Green difference from open-lattice inputs, closed form.

    J_plus and J_minus are the open-lattice differences for e and -e.  The
    denominator is an escape-probability expression and must lie in (0, 1)
    for correct inputs; anything else signals bad Green values.
    """
    d = bias.d
    row = local_row(frozenset(), bias, d)
    minus_e = tuple(-c for c in e)
    den = 1.0 - row[e] * J_plus - row[minus_e] * J_minus
    if not 0.0 < den < 1.0:
        raise InconsistencyError(
            f"escape denominator {den:.6g} outside (0, 1); J inputs inconsistent"
        )
    return (1.0 - row[e]) * J_plus / den


def compute_J_ee_direct(
    bias: Bias, e: Vertex, extent: int = 30
) -> Tuple[float, float]:
    """The same difference from a solve with the edge [0, e] deleted.

    Returns (value, truncation gap) at the requested extent; independent
    of the closed-form route and used to cross-validate it.
    """
    d = bias.d
    origin = (0,) * d
    edge = canonical_edge(origin, e)
    small, big = _column_pair(bias, (edge,), extent)
    val_small = small.value(origin) - small.value(e)
    val_big = big.value(origin) - big.value(e)
    return val_big, abs(val_big - val_small)


# ---------------------------------------------------------------------------
# the per-direction correction coefficients


@dataclass
class AlphaValue:
    """Correction coefficient for one direction with its identity residuals."""

    e: Vertex
    phi: float
    psi: float
    alpha: float
    lemma_residual: float
    identity_residual: float
    table_gap: float


def compute_phi_psi_alpha(
    bias: Bias,
    e: Vertex,
    extent: int = 30,
    residual_tol: float = 1e-5,
) -> AlphaValue:
    """Evaluate the two correction sums on the deleted-edge Green column.

    phi weighs the neighbor values of the column by the row perturbation
    at the origin-side endpoint; psi does the same at the far endpoint
    (shifted by e).  Two exact relations are asserted within tolerance:
    the collapse of phi + psi to a two-value expression, and the identity
    tying alpha = 1 + phi + psi to the deleted-edge Green difference.
    """
    d = bias.d
    origin = (0,) * d
    minus_e = tuple(-c for c in e)
    edge = canonical_edge(origin, e)
    small, big = _column_pair(bias, (edge,), extent)
    probe = [origin, e] + list(directions(d)) + [
        tuple(a + b for a, b in zip(e, ed)) for ed in directions(d)
    ]
    table_gap = max(abs(big.value(v) - small.value(v)) for v in probe)
    open_row = local_row(frozenset(), bias, d)
    row_e = local_row(frozenset([e]), bias, d)
    row_minus = local_row(frozenset([minus_e]), bias, d)
    phi = sum(
        (row_e.get(ep, 0.0) - open_row[ep]) * big.value(ep) for ep in directions(d)
    )
    psi = sum(
        (row_minus.get(ep, 0.0) - open_row[ep])
        * big.value(tuple(a + b for a, b in zip(e, ep)))
        for ep in directions(d)
    )
    j_ee = big.value(origin) - big.value(e)
    lemma_rhs = (open_row[e] - open_row[minus_e]) * j_ee - open_row[e]
    lemma_residual = abs(phi + psi - lemma_rhs)
    alpha = 1.0 + phi + psi
    pi_ratio = 1.0 - open_row[e]
    v1_dot_e = float(np.dot(v_one(bias), e))
    identity_residual = abs(alpha - (pi_ratio + v1_dot_e * j_ee))
    budget = max(residual_tol, 20.0 * table_gap)
    if lemma_residual > budget:
        raise InconsistencyError(
            f"collapse identity residual {lemma_residual:.3e} exceeds {budget:.3e}"
        )
    if identity_residual > budget:
        raise InconsistencyError(
            f"alpha identity residual {identity_residual:.3e} exceeds {budget:.3e}"
        )
    return AlphaValue(
        e=e,
        phi=phi,
        psi=psi,
        alpha=alpha,
        lemma_residual=lemma_residual,
        identity_residual=identity_residual,
        table_gap=table_gap,
    )


# ---------------------------------------------------------------------------
# the derivative report


@dataclass
class PairingTerm:
    """Combined contribution of an antipodal direction pair."""

    axis: int
    H: Tuple[float, ...]
    beta: float
    H_dot_v1: float
    pairing_residual: float


@dataclass
class ExpansionReport:
    """First-order data of the speed near full density.

    Sign convention: derivative_* is the derivative of the speed in the
    density at density one, so speed(1 - eps) = v1 - eps * derivative + o(eps)
    and a positive projected derivative means closing edges slows the walk.
    """

    bias: Bias
    v1: Tuple[float, ...]
    d_e: Dict[Vertex, Tuple[float, ...]]
    J: Dict[Vertex, float]
    J_ee: Dict[Vertex, float]
    J_ee_direct: Dict[Vertex, float]
    phi: Dict[Vertex, float]
    psi: Dict[Vertex, float]
    alpha: Dict[Vertex, float]
    derivative_thm: Tuple[float, ...]
    derivative_prop: Tuple[float, ...]
    derivative_alpha: Tuple[float, ...]
    forms_rel_gap: float
    truncation_extent: int
    J_error: float
    slowdown_condition: Dict[Vertex, bool]
    v1_dot_derivative: float
    pairing: List[PairingTerm]


def derivative(
    bias: Bias,
    extent: int = 30,
    tol: float = 1e-8,
    forms_tol: float = 1e-6,
) -> ExpansionReport:
    """Assemble the full first-order report, checking every cross relation.

    The theorem-style sum uses deleted-edge Green differences directly;
    the closed-form sum rebuilds them from open-lattice differences; the
    alpha-style sum reassembles the same vector through the correction
    coefficients.  All three must agree.
    """
    d = bias.d
    dirs = directions(d)
    v1 = v_one(bias)
    open_row = local_row(frozenset(), bias, d)

    J: Dict[Vertex, float] = {}
    J_gap: Dict[Vertex, float] = {}
    for e in dirs:
        jv = compute_J(bias, e, tol=tol, extent=extent)
        J[e] = jv.value
        J_gap[e] = jv.truncation_gap
        if jv.reversibility_residual > 1e-6:
            raise InconsistencyError(
                f"reversibility residual {jv.reversibility_residual:.3e} at {e}"
            )

    d_e: Dict[Vertex, np.ndarray] = {e: drift_with_closed(bias, e) for e in dirs}
    J_ee: Dict[Vertex, float] = {}
    J_ee_direct: Dict[Vertex, float] = {}
    alphas: Dict[Vertex, AlphaValue] = {}
    for e in dirs:
        minus_e = tuple(-c for c in e)
        J_ee[e] = compute_J_ee(bias, e, J[e], J[minus_e])
        val, _ = compute_J_ee_direct(bias, e, extent=extent)
        J_ee_direct[e] = val
        alphas[e] = compute_phi_psi_alpha(bias, e, extent=extent)

    thm = np.zeros(d)
    prop = np.zeros(d)
    via_alpha = np.zeros(d)
    for e in dirs:
        minus_e = tuple(-c for c in e)
        proj = float(np.dot(v1, e))
        thm += proj * J_ee_direct[e] * (v1 - d_e[e])
        den = 1.0 - open_row[e] * J[e] - open_row[minus_e] * J[minus_e]
        prop += proj * (open_row[e] * J[e] / den) * (np.asarray(e, float) - v1)
        # identity form of the coefficient: the pi-ratio part telescopes to
        # zero over the direction sum, which is what makes this assembly
        # match the theorem-style sum at roundoff level
        alpha_identity = (1.0 - open_row[e]) + proj * J_ee_direct[e]
        via_alpha += alpha_identity * (v1 - d_e[e])
    scale = max(float(np.linalg.norm(thm)), float(np.linalg.norm(prop)))
    forms_gap = float(np.linalg.norm(thm - prop)) / scale if scale > 0 else 0.0
    if forms_gap > forms_tol:
        raise InconsistencyError(
            f"derivative forms disagree by {forms_gap:.3e} relative"
        )

    pairing: List[PairingTerm] = []
    for axis in range(d):
        e = tuple(1 if i == axis else 0 for i in range(d))
        minus_e = tuple(-c for c in e)
        proj = float(np.dot(v1, e))
        if proj < 0:
            e, minus_e, proj = minus_e, e, -proj
        if proj == 0.0:
            continue
        den = 1.0 - open_row[e] * J[e] - open_row[minus_e] * J[minus_e]
        a = open_row[e] * J[e]
        b = open_row[minus_e] * J[minus_e]
        H = proj * ((a + b) / den * np.asarray(e, float) - (a - b) / den * v1)
        term = proj * (a / den) * (np.asarray(e, float) - v1) + (-proj) * (
            b / den
        ) * (np.asarray(minus_e, float) - v1)
        pairing.append(
            PairingTerm(
                axis=axis,
                H=tuple(float(c) for c in H),
                beta=proj / den,
                H_dot_v1=float(np.dot(H, v1)),
                pairing_residual=float(np.linalg.norm(H - term)),
            )
        )

    slowdown = {}
    v1_norm2 = float(np.dot(v1, v1))
    for e in dirs:
        proj = float(np.dot(v1, e))
        if proj > 0:
            slowdown[e] = proj >= v1_norm2
    return ExpansionReport(
        bias=bias,
        v1=tuple(float(c) for c in v1),
        d_e={e: tuple(float(c) for c in v) for e, v in d_e.items()},
        J=J,
        J_ee=J_ee,
        J_ee_direct=J_ee_direct,
        phi={e: alphas[e].phi for e in dirs},
        psi={e: alphas[e].psi for e in dirs},
        alpha={e: alphas[e].alpha for e in dirs},
        derivative_thm=tuple(float(c) for c in thm),
        derivative_prop=tuple(float(c) for c in prop),
        derivative_alpha=tuple(float(c) for c in via_alpha),
        forms_rel_gap=forms_gap,
        truncation_extent=extent,
        J_error=max(J_gap.values()),
        slowdown_condition=slowdown,
        v1_dot_derivative=float(np.dot(v1, prop)),
        pairing=pairing,
    )


def slowdown_holds(bias: Bias) -> bool:
    """Whether every positively projected axis satisfies the speed condition.

    The condition v1 . e >= |v1|^2 depends on the one-step drift alone, so
    no Green solve is needed.
    """
    v1 = v_one(bias)
    norm2 = float(np.dot(v1, v1))
    ok = True
    for e in directions(bias.d):
        proj = float(np.dot(v1, e))
        if proj > 0:
            ok = ok and proj >= norm2
    return ok


def critical_lambda_estimate(
    direction: Sequence[float],
    lam_lo: float = 0.05,
    lam_hi: float = 8.0,
    tol: float = 1e-6,
) -> float:
    """Largest strength at which the slow-down condition still holds.

    Bisects on the strength for a fixed direction.  The condition always
    holds for weak drift (the projection is first order, the squared norm
    second order) and typically fails for strong drift.
    """
    dirvec = tuple(float(c) for c in direction)
    if not slowdown_holds(Bias(lam=lam_lo, direction=dirvec)):
        raise ValueError(f"condition already fails at strength {lam_lo}")
    if slowdown_holds(Bias(lam=lam_hi, direction=dirvec)):
        return math.inf
    lo, hi = lam_lo, lam_hi
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if slowdown_holds(Bias(lam=mid, direction=dirvec)):
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


# ---------------------------------------------------------------------------
# emission


def report_to_dict(report: ExpansionReport, meta: Optional[dict] = None) -> dict:
    def vkey(v: Vertex) -> str:
        return ",".join(str(c) for c in v)

    out = {
        "sign_convention": "speed(1 - eps) = v1 - eps * derivative + o(eps)",
        "lam": report.bias.lam,
        "direction": list(report.bias.direction),
        "v1": list(report.v1),
        "d_e": {vkey(e): list(v) for e, v in report.d_e.items()},
        "J": {vkey(e): v for e, v in report.J.items()},
        "J_ee": {vkey(e): v for e, v in report.J_ee.items()},
        "J_ee_direct": {vkey(e): v for e, v in report.J_ee_direct.items()},
        "phi": {vkey(e): v for e, v in report.phi.items()},
        "psi": {vkey(e): v for e, v in report.psi.items()},
        "alpha": {vkey(e): v for e, v in report.alpha.items()},
        "derivative_thm": list(report.derivative_thm),
        "derivative_prop": list(report.derivative_prop),
        "derivative_alpha": list(report.derivative_alpha),
        "forms_rel_gap": report.forms_rel_gap,
        "truncation_extent": report.truncation_extent,
        "J_error": report.J_error,
        "slowdown_condition": {
            vkey(e): v for e, v in report.slowdown_condition.items()
        },
        "v1_dot_derivative": report.v1_dot_derivative,
        "pairing": [
            {
                "axis": t.axis,
                "H": list(t.H),
                "beta": t.beta,
                "H_dot_v1": t.H_dot_v1,
                "pairing_residual": t.pairing_residual,
            }
            for t in report.pairing
        ],
    }
    if meta:
        out["meta"] = meta
    return out


def write_expansion_json(
    report: ExpansionReport, path: str, meta: Optional[dict] = None
) -> None:
    with open(path, "w") as fh:
        json.dump(report_to_dict(report, meta), fh, sort_keys=True, indent=2)
        fh.write("\n")
