"""Operator entry point: config files, subcommands, deterministic artifacts.

Five subcommands drive the experiment families:

  identity-suite   bundle of exact identities; exit 0 iff every residual passes
  expansion        first-order expansion report at full density
  speed-sweep      dilute-speed sweep fitted against the predicted slope
  kalikow-check    exhaustive auxiliary-chain identity on a small instance
  trap-tails       tail surveys of the trap statistic L over a p grid

Configuration is a single JSON document; precedence is flags > file >
defaults, and --threads falls back to PERCODRIFT_THREADS before the file
value.  Exit codes: 0 pass, 1 identity or gate failure, 2 config
validation, 3 I/O, 4 budget exhaustion.  Every artifact embeds the
resolved config and the model constants, and re-running a subcommand with
the same config byte-reproduces the numeric artifact contents (runtimes
go to stdout, never into files).

The trap-tails exit gate checks the decay-rate ordering across the p
grid; goodness-of-fit numbers are reported in the artifacts but not
gated, since the tail concentrates on a few levels at high p and a
straight-line fit through the staircase is diagnostic, not a pass/fail
quantity.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import random
import sys
import time
from dataclasses import dataclass
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from . import expansion, kalikow, rng, speedsim, traps
from .environment import (
    ConditioningBudgetError,
    EnvironmentOracle,
    from_states,
    materialize,
)
from .green import (
    BOX,
    build_box_kernel,
    green_exact,
    green_stopped,
    perturb_expand,
)
from .kalikow import EnumerableInstance, _dir_label, kalikow_exhaustive
from .kernel import (
    Bias,
    ModelConstants,
    constants,
    direction_weight,
    local_drift,
    local_row,
    open_weight_sum,
)
from .lattice import Ball, ball_inner_edges, canonical_edge, directions, unit
from .network import TruncationBracketError, build_killed, green_diag_from_network

EXIT_OK = 0
EXIT_IDENTITY = 1
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_BUDGET = 4

_SUITE_ENV_TAG = 0x43534556
_EDGE_PICK_TAG = 0x434B4547

_N_DICT_CONFIGS = 10
_DICT_P = 0.7


class ConfigError(ValueError):
    """A config document or flag set that fails validation."""


@dataclass(frozen=True)
class RunConfig:
    """Resolved run parameters shared by every subcommand.

    Fields unused by a subcommand are ignored by it; each subcommand
    validates the fields it consumes before any computation starts.
    `direction` is kept as given; the unit vector lives on `bias()` and is
    emitted alongside the raw input in every artifact.
    """

    d: int = 2
    lam: float = 0.5
    direction: Optional[Tuple[float, ...]] = None
    p: Optional[float] = None
    p_grid: Optional[Tuple[float, ...]] = None
    eps_grid: Optional[Tuple[float, ...]] = None
    delta: Optional[float] = None
    delta_grid: Optional[Tuple[float, ...]] = None
    box_radius: int = 4
    check_radius: int = 10
    trap_radius: int = 1
    n_envs: int = 200
    n_steps: int = 1_000_000
    n_reps: int = 8
    n_samples: int = 10_000
    n_edges: int = 8
    extent: int = 30
    max_extent: int = 240
    tol: float = 1e-8
    identity_tol: float = 1e-10
    master_seed: int = 0
    threads: int = 1
    out_dir: str = "artifacts"

    def __post_init__(self) -> None:
        if self.d < 2:
            raise ConfigError("d must be >= 2")
        if not self.lam > 0 or not math.isfinite(self.lam):
            raise ConfigError("lambda must be positive and finite")
        if self.direction is not None:
            if len(self.direction) != self.d:
                raise ConfigError("direction length must equal d")
            if not all(math.isfinite(c) for c in self.direction):
                raise ConfigError("direction must be finite")
            if all(c == 0 for c in self.direction):
                raise ConfigError("direction must be nonzero")
        for name, value in (("delta", self.delta),):
            if value is not None and not 0.0 < value < 1.0:
                raise ConfigError(f"{name} must lie strictly inside (0, 1)")
        if self.delta_grid is not None:
            if not self.delta_grid:
                raise ConfigError("delta_grid must be non-empty")
            for v in self.delta_grid:
                if not 0.0 < v < 1.0:
                    raise ConfigError("delta_grid values must lie in (0, 1)")
        for name, value in (("p", self.p),):
            if value is not None and not 0.0 < value <= 1.0:
                raise ConfigError("p must lie in (0, 1]")
        if self.p_grid is not None:
            if not self.p_grid:
                raise ConfigError("p_grid must be non-empty")
            for v in self.p_grid:
                if not 0.0 < v <= 1.0:
                    raise ConfigError("p_grid values must lie in (0, 1]")
        if self.box_radius < 2:
            raise ConfigError("box_radius must be >= 2")
        if self.check_radius < 1 or self.trap_radius < 1:
            raise ConfigError("radii must be >= 1")
        for name, value in (
            ("n_envs", self.n_envs),
            ("n_steps", self.n_steps),
            ("n_reps", self.n_reps),
            ("n_samples", self.n_samples),
            ("n_edges", self.n_edges),
        ):
            if value < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.extent < 4:
            raise ConfigError("extent must be >= 4")
        if self.max_extent < self.extent:
            raise ConfigError("max_extent must be >= extent")
        if not self.tol > 0 or not self.identity_tol > 0:
            raise ConfigError("tolerances must be positive")
        if self.master_seed < 0:
            raise ConfigError("master_seed must be >= 0")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")

    def bias(self) -> Bias:
        direction = self.direction
        if direction is None:
            direction = tuple(1.0 if i == 0 else 0.0 for i in range(self.d))
        return Bias(lam=self.lam, direction=direction)


_CONFIG_KEYS = {
    "d": int,
    "lambda": float,
    "direction": tuple,
    "p": float,
    "p_grid": tuple,
    "eps_grid": tuple,
    "delta": float,
    "delta_grid": tuple,
    "box_radius": int,
    "check_radius": int,
    "trap_radius": int,
    "n_envs": int,
    "n_steps": int,
    "n_reps": int,
    "n_samples": int,
    "n_edges": int,
    "extent": int,
    "max_extent": int,
    "tol": float,
    "identity_tol": float,
    "master_seed": int,
    "threads": int,
    "out_dir": str,
}


def _coerce(key: str, value, kind) -> object:
    try:
        if kind is tuple:
            if not isinstance(value, (list, tuple)):
                raise TypeError
            return tuple(float(v) for v in value)
        if kind is int:
            if isinstance(value, bool) or int(value) != value:
                raise TypeError
            return int(value)
        if kind is float:
            if isinstance(value, bool):
                raise TypeError
            return float(value)
        if kind is str:
            if not isinstance(value, str):
                raise TypeError
            return value
    except (TypeError, ValueError):
        pass
    raise ConfigError(f"field {key!r} has the wrong type: {value!r}")


def load_config_file(path: str) -> Dict[str, object]:
    """Parse and type-check a JSON config document."""
    with open(path, "r", encoding="utf-8") as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as err:
            raise ConfigError(f"config is not valid JSON: {err}") from err
    if not isinstance(raw, dict):
        raise ConfigError("config document must be a JSON object")
    out: Dict[str, object] = {}
    for key, value in raw.items():
        if key not in _CONFIG_KEYS:
            raise ConfigError(f"unknown config field {key!r}")
        out["lam" if key == "lambda" else key] = _coerce(
            key, value, _CONFIG_KEYS[key]
        )
    return out


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """Merge defaults, config file, environment, and flags (flags win)."""
    fields: Dict[str, object] = {}
    if args.config is not None:
        fields.update(load_config_file(args.config))
    if "threads" not in fields:
        env = os.environ.get("PERCODRIFT_THREADS")
        if env is not None:
            try:
                fields["threads"] = int(env)
            except ValueError as err:
                raise ConfigError(
                    f"PERCODRIFT_THREADS is not an integer: {env!r}"
                ) from err
    if args.seed is not None:
        fields["master_seed"] = args.seed
    if args.out is not None:
        fields["out_dir"] = args.out
    if args.threads is not None:
        fields["threads"] = args.threads
    return RunConfig(**fields)


def config_dict(cfg: RunConfig) -> dict:
    """The resolved config as embedded in artifacts, unit direction included."""
    bias = cfg.bias()
    return {
        "d": cfg.d,
        "lambda": cfg.lam,
        "direction": None if cfg.direction is None else list(cfg.direction),
        "direction_unit": list(bias.direction),
        "p": cfg.p,
        "p_grid": None if cfg.p_grid is None else list(cfg.p_grid),
        "eps_grid": None if cfg.eps_grid is None else list(cfg.eps_grid),
        "delta": cfg.delta,
        "delta_grid": None if cfg.delta_grid is None else list(cfg.delta_grid),
        "box_radius": cfg.box_radius,
        "check_radius": cfg.check_radius,
        "trap_radius": cfg.trap_radius,
        "n_envs": cfg.n_envs,
        "n_steps": cfg.n_steps,
        "n_reps": cfg.n_reps,
        "n_samples": cfg.n_samples,
        "n_edges": cfg.n_edges,
        "extent": cfg.extent,
        "max_extent": cfg.max_extent,
        "tol": cfg.tol,
        "identity_tol": cfg.identity_tol,
        "master_seed": cfg.master_seed,
        "threads": cfg.threads,
        "out_dir": cfg.out_dir,
    }


def constants_dict(model: ModelConstants) -> dict:
    return {
        "kappa0": model.kappa0,
        "kappa1": model.kappa1,
        "eta": model.eta,
        "rho": model.rho,
    }


def artifact_meta(cfg: RunConfig) -> dict:
    return {
        "config": config_dict(cfg),
        "constants": constants_dict(constants(cfg.bias(), cfg.d)),
    }


def _write_json(path: str, obj: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, sort_keys=True, indent=2)
        fh.write("\n")


def _write_csv(
    path: str, header: Sequence[str], rows: Iterable[Sequence[object]]
) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow(
                [repr(v) if isinstance(v, float) else v for v in row]
            )


@dataclass(frozen=True)
class IdentityCheck:
    name: str
    residual: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.residual < self.tolerance


def _dictionary_checks(cfg: RunConfig, bias: Bias) -> List[IdentityCheck]:
    """Killed-walk diagonal and stopped diagonal against the network route."""
    d = cfg.d
    o = (0,) * d
    z = tuple(1 if i < 2 else 0 for i in range(d))
    box = Ball(o, cfg.box_radius)
    window = Ball(o, cfg.box_radius + 1)
    deltas = cfg.delta_grid or (0.5, 0.9)
    worst_diag = 0.0
    worst_stop = 0.0
    for i in range(_N_DICT_CONFIGS):
        oracle = EnvironmentOracle(
            seed=rng.derive_seed(cfg.master_seed, _SUITE_ENV_TAG, i), p=_DICT_P
        )
        config = materialize(oracle, window)
        for delta in deltas:
            net = build_killed(config, bias, delta, box)
            g_diag = green_exact(config, bias, delta, o, box).value(o)
            n_diag = green_diag_from_network(net, o)
            worst_diag = max(worst_diag, abs(g_diag - n_diag) / abs(g_diag))
            g_stop = green_stopped(config, bias, delta, o, o, [z], box)
            n_stop = green_diag_from_network(net, o, z=z)
            worst_stop = max(worst_stop, abs(g_stop - n_stop) / abs(g_stop))
    return [
        IdentityCheck("green_network_diagonal", worst_diag, 1e-8),
        IdentityCheck("green_network_stopped", worst_stop, 1e-8),
    ]


def _kalikow_check(cfg: RunConfig, bias: Bias, delta: float) -> IdentityCheck:
    inst = _enumerable_instance(cfg, bias, n_edges=6)
    z = tuple(1 if i < 2 else 0 for i in range(cfg.d))
    result = kalikow_exhaustive(inst, delta, z)
    return IdentityCheck("kalikow_exhaustive", result.residual, cfg.identity_tol)


def _resolvent_check(cfg: RunConfig, bias: Bias, delta: float) -> IdentityCheck:
    d = cfg.d
    o = (0,) * d
    box = Ball(o, 5)
    base_cfg = from_states({}, backing=EnvironmentOracle(seed=0, p=1.0))
    closed = canonical_edge(o, unit(d, 0))
    pert_cfg = from_states({closed: False}, backing=EnvironmentOracle(seed=0, p=1.0))
    kern_base = build_box_kernel(base_cfg, bias, box, BOX)
    kern_pert = build_box_kernel(pert_cfg, bias, box, BOX)
    series = perturb_expand(kern_base, kern_pert, delta, 3, o)
    return IdentityCheck("resolvent_order3", series.residual, cfg.identity_tol)


def _local_balance_check(cfg: RunConfig, bias: Bias) -> IdentityCheck:
    """pi^e (d_open - d_e) = c(e) (e - d_open), per closed direction e."""
    d = cfg.d
    d_open = local_drift(frozenset(), bias, d)
    worst = 0.0
    for e in directions(d):
        pi_e = open_weight_sum(frozenset({e}), bias, d)
        d_e = local_drift(frozenset({e}), bias, d)
        lhs = pi_e * (d_open - d_e)
        rhs = direction_weight(e, bias) * (np.array(e, dtype=float) - d_open)
        worst = max(worst, float(np.max(np.abs(lhs - rhs))))
    return IdentityCheck("local_balance", worst, 1e-12)


def cmd_identity_suite(cfg: RunConfig) -> int:
    """Run every exact-identity check and write the residual report."""
    bias = cfg.bias()
    delta = cfg.delta if cfg.delta is not None else 0.9
    t0 = time.perf_counter()
    checks = _dictionary_checks(cfg, bias)
    checks.append(_kalikow_check(cfg, bias, delta))
    checks.append(_resolvent_check(cfg, bias, delta))
    checks.append(_local_balance_check(cfg, bias))

    report = expansion.derivative(bias, extent=cfg.extent, tol=cfg.tol)
    open_row = local_row(frozenset(), bias, cfg.d)
    first_step = abs(
        sum(open_row[e] * report.J[e] for e in directions(cfg.d)) - 1.0
    )
    checks.append(IdentityCheck("first_step_total", first_step, 1e-10))
    checks.append(IdentityCheck("j_truncation_gap", report.J_error, cfg.tol))

    e1 = unit(cfg.d, 0)
    lemma = 0.0
    assembly = 0.0
    for e in (e1, tuple(-c for c in e1)):
        alpha = expansion.compute_phi_psi_alpha(bias, e, extent=cfg.extent)
        lemma = max(lemma, alpha.lemma_residual)
        assembly = max(assembly, alpha.identity_residual)
    checks.append(IdentityCheck("simplify_tech", lemma, 1e-5))
    checks.append(IdentityCheck("alpha_assembly", assembly, 1e-5))
    checks.append(
        IdentityCheck("derivative_forms", report.forms_rel_gap, 1e-6)
    )
    elapsed = time.perf_counter() - t0

    for check in checks:
        verdict = "pass" if check.passed else "FAIL"
        print(
            f"identity {check.name}: residual {check.residual:.3e} "
            f"(tol {check.tolerance:.1e}) {verdict}"
        )
    out = artifact_meta(cfg)
    out["checks"] = [
        {
            "name": c.name,
            "residual": c.residual,
            "tolerance": c.tolerance,
            "passed": c.passed,
        }
        for c in checks
    ]
    out["all_passed"] = all(c.passed for c in checks)
    _write_json(os.path.join(cfg.out_dir, "identity_suite.json"), out)
    print(f"{len(checks)} identities in {elapsed:.1f} s")
    if not out["all_passed"]:
        failed = ", ".join(c.name for c in checks if not c.passed)
        print(f"failing identities: {failed}", file=sys.stderr)
        return EXIT_IDENTITY
    return EXIT_OK


def cmd_expansion(cfg: RunConfig) -> int:
    """Compute the full expansion report and write it as JSON."""
    bias = cfg.bias()
    t0 = time.perf_counter()
    report = expansion.derivative(bias, extent=cfg.extent, tol=cfg.tol)
    elapsed = time.perf_counter() - t0
    expansion.write_expansion_json(
        report,
        os.path.join(cfg.out_dir, "expansion.json"),
        meta=artifact_meta(cfg),
    )
    print(f"v(1) = {tuple(report.v1)}")
    print(f"derivative = {tuple(report.derivative_thm)}")
    print(
        f"forms gap {report.forms_rel_gap:.1e}, truncation extent "
        f"{report.truncation_extent}, J gap {report.J_error:.1e}"
    )
    for e, holds in sorted(report.slowdown_condition.items()):
        print(f"slow-down condition at {e}: {'holds' if holds else 'fails'}")
    print(f"expansion in {elapsed:.1f} s")
    return EXIT_OK


def cmd_speed_sweep(cfg: RunConfig) -> int:
    """Sweep the dilute speed over the eps grid and gate on the fitted slope."""
    bias = cfg.bias()
    grid = cfg.eps_grid or (0.0, 0.01, 0.02, 0.04)
    if cfg.n_reps < 8:
        raise ConfigError("published sweeps need n_reps >= 8")
    if min(1.0 - e for e in grid) <= 0.6:
        raise ConfigError("eps grid leaves the safely supercritical regime")
    report = expansion.derivative(bias, extent=cfg.extent, tol=cfg.tol)
    theoretical = -bias.proj(report.derivative_thm)
    v1_proj = bias.proj(report.v1)
    t0 = time.perf_counter()
    sweep = speedsim.sweep_and_fit(
        grid,
        bias,
        cfg.n_steps,
        cfg.n_reps,
        cfg.master_seed,
        theoretical=theoretical,
        check_radius=cfg.check_radius,
        threads=cfg.threads,
    )
    elapsed = time.perf_counter() - t0

    meta = artifact_meta(cfg)
    meta["theoretical_slope"] = theoretical
    meta["v1_proj"] = v1_proj
    meta["slope_source"] = "expansion.derivative"
    speedsim.write_sweep_csv(sweep, os.path.join(cfg.out_dir, "sweep.csv"))
    speedsim.write_sweep_json(
        sweep, os.path.join(cfg.out_dir, "sweep.json"), meta=meta
    )
    _write_csv(
        os.path.join(cfg.out_dir, "sweep_line.csv"),
        ["epsilon", "proj_speed", "proj_ci", "theoretical_line"],
        [
            [eps, est.proj_speed, est.proj_ci, v1_proj + theoretical * eps]
            for eps, est in zip(sweep.grid, sweep.estimates)
        ],
    )

    print(
        f"slope {sweep.slope:.6f} +- {sweep.slope_se:.6f}, theoretical "
        f"{theoretical:.6f}, z = {sweep.z_score:.2f}"
    )
    slowdown_ok = True
    for eps, est in zip(sweep.grid, sweep.estimates):
        if eps == 0.0:
            continue
        below = est.proj_speed + est.proj_ci < v1_proj
        slowdown_ok = slowdown_ok and below
        print(
            f"eps {eps}: v.l = {est.proj_speed:.6f} +- {est.proj_ci:.6f} "
            f"{'below' if below else 'NOT below'} v(1).l = {v1_proj:.6f}"
        )
    print(f"sweep in {elapsed:.1f} s")
    if abs(sweep.z_score) > 2.0:
        print("slope outside 2 SE of the expansion value", file=sys.stderr)
        return EXIT_IDENTITY
    if not slowdown_ok:
        print("a dilute point is not below the full-density speed", file=sys.stderr)
        return EXIT_IDENTITY
    return EXIT_OK


def _enumerable_instance(
    cfg: RunConfig, bias: Bias, n_edges: Optional[int] = None
) -> EnumerableInstance:
    d = cfg.d
    o = (0,) * d
    n = cfg.n_edges if n_edges is None else n_edges
    pool = ball_inner_edges(o, 3)
    picker = random.Random(rng.derive_seed(cfg.master_seed, _EDGE_PICK_TAG))
    edges = tuple(sorted(picker.sample(pool, n)))
    q = cfg.p if cfg.p is not None else _DICT_P
    return EnumerableInstance(
        box=Ball(o, 3),
        bias=bias,
        random_edges=edges,
        probs=(q,) * len(edges),
    )


def cmd_kalikow_check(cfg: RunConfig) -> int:
    """Exhaustive auxiliary-chain identity over a delta grid."""
    if cfg.n_edges > 12:
        raise ConfigError("kalikow-check enumerates at most 12 random edges")
    bias = cfg.bias()
    deltas = cfg.delta_grid or (0.5, 0.9, 0.99)
    z = tuple(1 if i < 2 else 0 for i in range(cfg.d))
    inst = _enumerable_instance(cfg, bias)
    t0 = time.perf_counter()
    results = [(delta, kalikow_exhaustive(inst, delta, z)) for delta in deltas]
    elapsed = time.perf_counter() - t0

    out = artifact_meta(cfg)
    out["z"] = list(z)
    out["random_edges"] = [
        [list(base), axis] for base, axis in inst.random_edges
    ]
    out["edge_open_prob"] = inst.probs[0]
    out["results"] = [
        {
            "delta": delta,
            "residual": res.residual,
            "annealed_green_z": res.annealed_green[z],
            "n_configs": res.n_configs,
            "n_admissible": res.n_admissible,
        }
        for delta, res in results
    ]
    all_ok = all(res.residual < cfg.identity_tol for _, res in results)
    out["all_passed"] = all_ok
    _write_json(os.path.join(cfg.out_dir, "kalikow_check.json"), out)

    last = results[-1][1]
    dirs = directions(cfg.d)
    header = [f"x{i}" for i in range(cfg.d)]
    header += [_dir_label(e) for e in dirs] + ["self_loop"]
    _write_csv(
        os.path.join(cfg.out_dir, "kalikow_rows.csv"),
        header,
        [
            list(v)
            + [row.probs.get(e, 0.0) for e in dirs]
            + [row.probs.get(None, 0.0)]
            for v, row in sorted(last.rows.items())
        ],
    )

    for delta, res in results:
        verdict = "pass" if res.residual < cfg.identity_tol else "FAIL"
        print(
            f"delta {delta}: residual {res.residual:.3e} over "
            f"{res.n_admissible}/{res.n_configs} configs {verdict}"
        )
    print(f"kalikow check in {elapsed:.1f} s")
    return EXIT_OK if all_ok else EXIT_IDENTITY


def cmd_trap_tails(cfg: RunConfig) -> int:
    """Tail surveys of the trap statistic L at each p; gate on rate ordering."""
    bias = cfg.bias()
    if cfg.p_grid is not None:
        ps = cfg.p_grid
    elif cfg.p is not None:
        ps = (cfg.p,)
    else:
        ps = (0.9, 0.98)
    for p in ps:
        if not p > 0.6:
            raise ConfigError("trap surveys need p > 0.6")
    model = constants(bias, cfg.d)
    t0 = time.perf_counter()
    surveys = [
        traps.tail_survey(
            "L",
            cfg.d,
            p,
            cfg.trap_radius,
            cfg.n_samples,
            cfg.master_seed,
            bias=bias,
            model=model,
            threads=cfg.threads,
        )
        for p in ps
    ]
    elapsed = time.perf_counter() - t0

    out = artifact_meta(cfg)
    out["statistic"] = "L"
    out["surveys"] = []
    for p, survey in zip(ps, surveys):
        out["surveys"].append(
            {
                "p": p,
                "n_samples": survey.n_samples,
                "fitted_rate": survey.fitted_rate,
                "rate_se": survey.rate_se,
                "intercept": survey.intercept,
                "r_squared": survey.r_squared,
                "fit_ns": list(survey.fit_ns),
                "proxy_radius": survey.proxy_radius,
            }
        )
        curve = dict(traps.survival_curve(survey.counts, survey.n_samples))
        _write_csv(
            os.path.join(cfg.out_dir, f"trap_tails_p{p}.csv"),
            ["n", "count", "survivors", "log_survival"],
            [
                [
                    n,
                    survey.counts.get(n, 0),
                    curve[n],
                    math.log(curve[n] / survey.n_samples),
                ]
                for n in sorted(curve)
                if curve[n] > 0
            ],
        )
        print(
            f"p {p}: rate {survey.fitted_rate:.4f} +- {survey.rate_se:.4f}, "
            f"R^2 {survey.r_squared:.3f}, fit levels {survey.fit_ns}"
        )
    rates = [s.fitted_rate for s in surveys]
    ordered = all(b < a for a, b in zip(rates, rates[1:]))
    out["rate_ordering_strict"] = ordered
    _write_json(os.path.join(cfg.out_dir, "trap_tails.json"), out)
    print(f"tail surveys in {elapsed:.1f} s")
    if len(rates) > 1 and not ordered:
        print("decay rates are not strictly ordered in p", file=sys.stderr)
        return EXIT_IDENTITY
    return EXIT_OK


COMMANDS: Dict[str, Callable[[RunConfig], int]] = {
    "identity-suite": cmd_identity_suite,
    "expansion": cmd_expansion,
    "speed-sweep": cmd_speed_sweep,
    "kalikow-check": cmd_kalikow_check,
    "trap-tails": cmd_trap_tails,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="percodrift",
        description="Biased walks on percolation clusters: experiments and checks.",
    )
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", help="JSON config document")
    parser.add_argument("--seed", type=int, help="override master_seed")
    parser.add_argument("--out", help="override the output directory")
    parser.add_argument("--threads", type=int, help="override the thread count")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as err:
        print(f"cannot read config: {err}", file=sys.stderr)
        return EXIT_IO
    try:
        os.makedirs(cfg.out_dir, exist_ok=True)
    except OSError as err:
        print(f"cannot create output directory: {err}", file=sys.stderr)
        return EXIT_IO
    try:
        return COMMANDS[args.command](cfg)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except (
        expansion.TruncationError,
        traps.TrapGrowthError,
        ConditioningBudgetError,
        kalikow.KalikowDiagnosticError,
    ) as err:
        print(f"budget exhausted: {err}", file=sys.stderr)
        return EXIT_BUDGET
    except (expansion.InconsistencyError, TruncationBracketError) as err:
        print(f"identity failure: {err}", file=sys.stderr)
        return EXIT_IDENTITY
    except ValueError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as err:
        print(f"i/o error: {err}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
