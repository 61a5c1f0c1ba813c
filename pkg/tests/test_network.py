"""Cemetery-augmented electrical networks and the resistance dictionary."""

import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from percodrift.environment import EnvironmentOracle, all_open, materialize
from percodrift.green import green_exact, green_stopped
from percodrift.kernel import bias_along_axis
from percodrift.lattice import Ball, canonical_edge
from percodrift.network import (
    TruncationBracketError,
    build_killed,
    close_edge,
    green_diag_from_network,
    insert_edge_ratio_experiment,
    resistance_to_delta,
    resistance_to_target,
    thomson_energy,
    unit_current_flow,
)

BIAS = bias_along_axis(0.5)
O = (0, 0)


def _random_config(seed, radius, p=0.7):
    return materialize(EnvironmentOracle(seed=seed, p=p), Ball(O, radius))


def test_build_killed_rejects_bad_delta():
    cfg = _random_config(0, 4)
    for delta in (0.0, 1.0, -0.2, 1.3):
        with pytest.raises(ValueError):
            build_killed(cfg, BIAS, delta, Ball(O, 3))


def test_isolated_vertices_are_excluded():
    cfg = _random_config(11, 4, p=0.4)
    net = build_killed(cfg, BIAS, 0.5, Ball(O, 3))
    for v in net.vertices:
        assert net.pis[v] > 0.0


def test_pi_killed_scales_by_delta():
    net = build_killed(all_open(), BIAS, 0.5, Ball(O, 3))
    assert net.pi_killed(O) == pytest.approx(net.pis[O] / 0.5, rel=1e-15)


@given(st.integers(min_value=0, max_value=2**32))
@settings(max_examples=15, deadline=None)
def test_dictionary_identity_on_random_configs(seed):
    # G_delta(0,0) of the killed walk equals pi_killed(0) R(0 <-> cemetery):
    # the Dirichlet-zero walk truncation pairs with the grounded boundary.
    cfg = _random_config(seed, 4)
    box = Ball(O, 3)
    for delta in (0.5, 0.9):
        g = green_exact(cfg, BIAS, delta, O, box).value(O)
        net = build_killed(cfg, BIAS, delta, box)
        assert green_diag_from_network(net, O) == pytest.approx(g, rel=1e-10)


@given(st.integers(min_value=0, max_value=2**32))
@settings(max_examples=10, deadline=None)
def test_stopped_dictionary_identity(seed):
    cfg = _random_config(seed, 4)
    box = Ball(O, 3)
    z = (1, 1)
    g = green_stopped(cfg, BIAS, 0.8, O, O, [z], box)
    net = build_killed(cfg, BIAS, 0.8, box)
    assert green_diag_from_network(net, O, z=z) == pytest.approx(g, rel=1e-10)


def test_grounded_free_bracket_orders():
    cfg = _random_config(3, 4)
    net = build_killed(cfg, BIAS, 0.7, Ball(O, 3))
    r = resistance_to_delta(net, O)
    assert r.lower <= r.upper
    assert r.value == r.lower


def test_bracket_tol_triggers():
    net = build_killed(all_open(), BIAS, 0.9, Ball(O, 2))
    with pytest.raises(TruncationBracketError):
        resistance_to_delta(net, O, bracket_tol=1e-18)


def test_absorbing_target_lowers_resistance():
    net = build_killed(all_open(), BIAS, 0.7, Ball(O, 3))
    plain = resistance_to_delta(net, O).value
    stopped = resistance_to_target(net, O, (1, 0)).value
    assert stopped < plain


def test_rayleigh_monotonicity_under_closure():
    # Closing any open edge can only increase the resistance to the
    # cemetery: conductances only shrink (the edge and both pi's).
    net = build_killed(_random_config(7, 4), BIAS, 0.8, Ball(O, 3))
    r = resistance_to_delta(net, O).value
    for e in sorted(net.edge_conductances):
        after = close_edge(net, e)
        if O not in after.index:
            continue
        r_after = resistance_to_delta(after, O).value
        assert r_after >= r - 1e-12


def test_close_edge_rejects_absent_edge():
    net = build_killed(all_open(), BIAS, 0.5, Ball(O, 2))
    ghost = canonical_edge((7, 7), (8, 7))
    with pytest.raises(ValueError):
        close_edge(net, ghost)


def test_unit_current_flow_conserves_and_matches_energy():
    net = build_killed(_random_config(2, 4), BIAS, 0.6, Ball(O, 3))
    flow = unit_current_flow(net, O)
    # Thomson: the energy of the true current flow is the resistance.
    r = resistance_to_delta(net, O).value
    assert thomson_energy(net, flow, O) == pytest.approx(r, rel=1e-9)


def test_thomson_principle_perturbed_flow_costs_more():
    net = build_killed(all_open(), BIAS, 0.6, Ball(O, 3))
    r = resistance_to_delta(net, O).value
    flow = unit_current_flow(net, O)
    # Reroute some current around a cycle: still a unit flow, more energy.
    cycle = [O, (1, 0), (1, 1), (0, 1)]
    bumped = dict(flow)
    eps = 0.05
    for a, b in zip(cycle, cycle[1:] + [cycle[0]]):
        bumped[(a, b)] = bumped.get((a, b), 0.0) + eps
    energy = thomson_energy(net, bumped, O)
    assert energy > r + 1e-6


def test_thomson_rejects_unbalanced_flow():
    net = build_killed(all_open(), BIAS, 0.6, Ball(O, 2))
    flow = unit_current_flow(net, O)
    broken = dict(flow)
    key = next(iter(broken))
    broken[key] += 0.5
    with pytest.raises(ValueError):
        thomson_energy(net, broken, O)


def test_insert_edge_experiment_records_sane_ratio():
    cfg = _random_config(21, 6, p=0.75)
    rec = insert_edge_ratio_experiment(
        cfg,
        BIAS,
        0.8,
        Ball(O, 5),
        ball_center=(2, 0),
        ball_radius=1,
        y=(2, 0),
        trap_length=2.0,
        length_exponent=1.0,
    )
    assert rec.r_ball_open > 0
    assert rec.r_ambient >= 0
    assert math.isfinite(rec.ratio)
    assert rec.ratio >= 0.0
