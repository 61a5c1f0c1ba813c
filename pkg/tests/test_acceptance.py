"""Acceptance gate: the eleven release criteria, one verdict line each.

The headline sweep and the trap surveys run through the command line (once
per thread count) so the byte-determinism criterion can compare the very
artifacts the other criteria are judged on.  Everything else calls the
library directly at the documented tolerances.
"""

import json
import random

import numpy as np
import pytest

from percodrift import cli, expansion, rng
from percodrift.environment import EnvironmentOracle, from_states, materialize
from percodrift.expansion import compute_J, compute_J_ee, compute_J_ee_direct
from percodrift.green import BOX, build_box_kernel, green_exact, green_stopped, perturb_expand
from percodrift.kalikow import EnumerableInstance, kalikow_exhaustive
from percodrift.kernel import bias_along_axis, constants
from percodrift.lattice import Ball, ball_inner_edges, canonical_edge, directions, unit
from percodrift.network import build_killed, close_edge, green_diag_from_network, resistance_to_delta
from percodrift.traps import compute_L1_L, resample_edges_inside, resample_edges_outside

BIAS = bias_along_axis(0.5)
O = (0, 0)
E1 = (1, 0)
Z = (1, 1)

_ENV_TAG = 0x41435054


def _run_cli(argv):
    return cli.main(argv)


@pytest.fixture(scope="session")
def headline(tmp_path_factory):
    """Criterion 6 sweep through the CLI, once per thread count (for 11)."""
    base = tmp_path_factory.mktemp("headline")
    cfg = base / "config.json"
    cfg.write_text(
        json.dumps(
            {
                "eps_grid": [0.0, 0.01, 0.02, 0.04],
                "n_steps": 1_000_000,
                "n_reps": 8,
                "master_seed": 0,
                "check_radius": 10,
            }
        )
    )
    dirs = {1: base / "t1", 3: base / "t3"}
    rcs = {
        t: _run_cli(
            ["speed-sweep", "--config", str(cfg), "--out", str(d), "--threads", str(t)]
        )
        for t, d in dirs.items()
    }
    summary = json.loads((dirs[1] / "sweep.json").read_text())
    return {"rcs": rcs, "dirs": dirs, "summary": summary}


@pytest.fixture(scope="session")
def trap_runs(tmp_path_factory):
    """Criterion 8 surveys through the CLI, once per thread count (for 11)."""
    base = tmp_path_factory.mktemp("traps")
    cfg = base / "config.json"
    cfg.write_text(
        json.dumps(
            {
                "p_grid": [0.9, 0.98],
                "n_samples": 10_000,
                "trap_radius": 1,
                "master_seed": 0,
            }
        )
    )
    dirs = {1: base / "t1", 3: base / "t3"}
    rcs = {
        t: _run_cli(
            ["trap-tails", "--config", str(cfg), "--out", str(d), "--threads", str(t)]
        )
        for t, d in dirs.items()
    }
    summary = json.loads((dirs[1] / "trap_tails.json").read_text())
    return {"rcs": rcs, "dirs": dirs, "summary": summary}


def test_criterion_01_green_resistance_dictionary(criterion_report):
    box, window = Ball(O, 4), Ball(O, 5)
    worst_diag = worst_stop = 0.0
    accepted = skipped = 0
    i = 0
    while accepted < 100:
        oracle = EnvironmentOracle(seed=rng.derive_seed(0, _ENV_TAG, i), p=0.7)
        i += 1
        config = materialize(oracle, window)
        net_probe = build_killed(config, BIAS, 0.5, box)
        if O not in net_probe.index or Z not in net_probe.index:
            skipped += 1  # isolated endpoint: the identity's pi factor is void
            continue
        accepted += 1
        for delta in (0.5, 0.9):
            net = net_probe if delta == 0.5 else build_killed(config, BIAS, delta, box)
            g_diag = green_exact(config, BIAS, delta, O, box).value(O)
            n_diag = green_diag_from_network(net, O)
            worst_diag = max(worst_diag, abs(g_diag - n_diag) / abs(g_diag))
            g_stop = green_stopped(config, BIAS, delta, O, O, [Z], box)
            n_stop = green_diag_from_network(net, O, z=Z)
            worst_stop = max(worst_stop, abs(g_stop - n_stop) / abs(g_stop))
    ok = worst_diag < 1e-8 and worst_stop < 1e-8
    criterion_report(
        1,
        ok,
        f"dictionary on 100 configs (skipped {skipped} with isolated endpoints), "
        f"worst rel residual diagonal {worst_diag:.2e}, stopped {worst_stop:.2e} "
        f"(tol 1e-8)",
    )


def test_criterion_02_kalikow_identity_exhaustive(criterion_report):
    picker = random.Random(12345)
    edges = tuple(sorted(picker.sample(ball_inner_edges(O, 3), 12)))
    inst = EnumerableInstance(
        box=Ball(O, 3), bias=BIAS, random_edges=edges, probs=(0.7,) * 12
    )
    worst = 0.0
    for delta in (0.5, 0.9, 0.99):
        res = kalikow_exhaustive(inst, delta, Z)
        assert res.n_configs == 4096
        worst = max(worst, res.residual)
    criterion_report(
        2,
        worst < 1e-10,
        f"annealed vs auxiliary-chain Green on 2^12 configs, deltas "
        f"{{0.5, 0.9, 0.99}}, worst residual {worst:.2e} (tol 1e-10)",
    )


def test_criterion_03_resolvent_reconstruction(criterion_report):
    box = Ball(O, 5)
    base = from_states({}, backing=EnvironmentOracle(seed=0, p=1.0))
    closed = canonical_edge(O, unit(2, 0))
    pert = from_states({closed: False}, backing=EnvironmentOracle(seed=0, p=1.0))
    kern_base = build_box_kernel(base, BIAS, box, BOX)
    kern_pert = build_box_kernel(pert, BIAS, box, BOX)
    series = perturb_expand(kern_base, kern_pert, 0.9, 3, O)
    criterion_report(
        3,
        series.residual < 1e-10,
        f"order-3 resolvent series with exact remainder on a radius-5 box, "
        f"one closed edge, residual {series.residual:.2e} (tol 1e-10)",
    )


def test_criterion_04_closed_form_vs_direct(criterion_report):
    worst_rel = 0.0
    improving = True
    for e in (E1, (-1, 0), (0, 1)):
        minus_e = tuple(-c for c in e)
        j_plus = compute_J(BIAS, e, extent=30).value
        j_minus = compute_J(BIAS, minus_e, extent=30).value
        closed_form = compute_J_ee(BIAS, e, j_plus, j_minus)
        direct30, gap30 = compute_J_ee_direct(BIAS, e, extent=30)
        _, gap15 = compute_J_ee_direct(BIAS, e, extent=15)
        worst_rel = max(worst_rel, abs(closed_form - direct30) / abs(direct30))
        improving = improving and gap30 < gap15
    criterion_report(
        4,
        worst_rel < 1e-3 and improving,
        f"deleted-edge difference closed form vs direct solve at radius 30: "
        f"worst rel {worst_rel:.2e} (tol 1e-3), truncation gap shrinks under "
        f"radius doubling: {improving}",
    )


def test_criterion_05_two_derivative_forms(criterion_report):
    rep = expansion.derivative(BIAS, extent=30)
    thm = np.array(rep.derivative_thm)
    prop = np.array(rep.derivative_prop)
    alpha = np.array(rep.derivative_alpha)
    scale = float(np.linalg.norm(thm))
    alpha_gap = max(
        float(np.max(np.abs(alpha - thm))), float(np.max(np.abs(alpha - prop)))
    ) / scale
    ok = rep.forms_rel_gap < 1e-6 and alpha_gap < 1e-6
    criterion_report(
        5,
        ok,
        f"theorem vs proposition derivative forms rel gap "
        f"{rep.forms_rel_gap:.2e}, alpha-assembly rel gap {alpha_gap:.2e} "
        f"(tol 1e-6)",
    )


def test_criterion_06_headline_slope_and_slowdown(criterion_report, headline):
    summary = headline["summary"]
    slope = summary["slope"]
    se = summary["slope_se"]
    z = summary["z_score"]
    theory = summary["meta"]["theoretical_slope"]
    v1_proj = summary["meta"]["v1_proj"]
    slow_ok = all(
        pt["proj_speed"] + pt["proj_ci"] < v1_proj
        for pt in summary["points"]
        if pt["epsilon"] > 0
    )
    ok = headline["rcs"][1] == 0 and abs(z) <= 2.0 and slow_ok
    criterion_report(
        6,
        ok,
        f"weighted slope {slope:.4f} +- {se:.4f} vs theory {theory:.4f} "
        f"(z = {z:.2f}, gate 2 SE); every dilute point below the full-density "
        f"speed outside its 95% CI: {slow_ok}",
    )


def test_criterion_07_rayleigh_monotonicity(criterion_report):
    picker = random.Random(777)
    closures = violations = 0
    i = 0
    while closures < 200:
        config = materialize(
            EnvironmentOracle(seed=rng.derive_seed(7, _ENV_TAG, i), p=0.75),
            Ball(O, 4),
        )
        i += 1
        net = build_killed(config, BIAS, 0.8, Ball(O, 3))
        if O not in net.index:
            continue
        r_before = resistance_to_delta(net, O).value
        open_edges = sorted(net.edge_conductances)
        for e in picker.sample(open_edges, min(5, len(open_edges))):
            after = close_edge(net, e)
            closures += 1
            if O not in after.index:
                continue  # origin cut off entirely: resistance diverges
            if resistance_to_delta(after, O).value < r_before - 1e-12:
                violations += 1
            if closures == 200:
                break
    criterion_report(
        7,
        violations == 0,
        f"200 random closures with cemetery conductances updated: "
        f"{violations} resistance decreases",
    )


def test_criterion_08_trap_tail_qualitative_law(criterion_report, trap_runs):
    surveys = trap_runs["summary"]["surveys"]
    by_p = {s["p"]: s for s in surveys}
    r2_09 = by_p[0.9]["r_squared"]
    r2_098 = by_p[0.98]["r_squared"]
    rate_09 = by_p[0.9]["fitted_rate"]
    rate_098 = by_p[0.98]["fitted_rate"]
    linear_ok = r2_09 > 0.9 and r2_098 > 0.9
    order_ok = rate_098 < rate_09 and trap_runs["rcs"][1] == 0
    criterion_report(
        8,
        linear_ok and order_ok,
        f"log-survival linearity R^2 = {r2_09:.3f} (p=0.9) / {r2_098:.3f} "
        f"(p=0.98), gate 0.9 on counts >= 30; decay rate strictly more "
        f"negative at higher p: {rate_098:.3f} < {rate_09:.3f} is {order_ok}",
    )


def test_criterion_09_stopping_time_and_interior_independence(criterion_report):
    model = constants(BIAS, 2)
    interior_viol = stopping_viol = 0
    for i in range(500):
        amb = from_states(
            {}, backing=EnvironmentOracle(seed=rng.derive_seed(9, _ENV_TAG, i), p=0.9)
        )
        st = compute_L1_L(amb, O, 1, model, BIAS)
        scrambled = resample_edges_inside(amb, O, 1, 0.3, seed=i)
        st_in = compute_L1_L(scrambled, O, 1, model, BIAS)
        if (st.M_A, st.T_A, st.L_A1, st.L_A) != (
            st_in.M_A,
            st_in.T_A,
            st_in.L_A1,
            st_in.L_A,
        ):
            interior_viol += 1
        outside = resample_edges_outside(
            amb, O, st.L_A, 0.9, seed=i, window_radius=st.L_A + 10
        )
        st_out = compute_L1_L(outside, O, 1, model, BIAS, include_MT=False)
        if (st.L_A1, st.L_A) != (st_out.L_A1, st_out.L_A):
            stopping_viol += 1
    criterion_report(
        9,
        interior_viol == 0 and stopping_viol == 0,
        f"500 resampling trials each: {interior_viol} interior-independence "
        f"violations, {stopping_viol} stopping-time violations",
    )


def test_criterion_10_collapse_lemma_and_alpha_identity(criterion_report):
    worst_lemma = worst_assembly = 0.0
    for lam in (0.3, 0.5, 1.0):
        bias = bias_along_axis(lam)
        for e in directions(2):
            a = expansion.compute_phi_psi_alpha(bias, e, extent=30)
            worst_lemma = max(worst_lemma, a.lemma_residual)
            worst_assembly = max(worst_assembly, a.identity_residual)
    ok = worst_lemma < 1e-5 and worst_assembly < 1e-5
    criterion_report(
        10,
        ok,
        f"collapse-lemma residual {worst_lemma:.2e} and alpha identity "
        f"residual {worst_assembly:.2e} over lambda in {{0.3, 0.5, 1.0}} "
        f"(tol 1e-5)",
    )


def test_criterion_11_thread_count_byte_determinism(
    criterion_report, headline, trap_runs
):
    mismatches = []
    for name in ("sweep.csv", "sweep_line.csv"):
        a = (headline["dirs"][1] / name).read_bytes()
        b = (headline["dirs"][3] / name).read_bytes()
        if a != b:
            mismatches.append(name)
    for name in ("trap_tails_p0.9.csv", "trap_tails_p0.98.csv"):
        a = (trap_runs["dirs"][1] / name).read_bytes()
        b = (trap_runs["dirs"][3] / name).read_bytes()
        if a != b:
            mismatches.append(name)
    criterion_report(
        11,
        not mismatches,
        "criteria 6 and 8 artifacts byte-identical across thread counts"
        + ("" if not mismatches else f"; mismatched: {', '.join(mismatches)}"),
    )
