"""Averaged auxiliary chain: exact identity, MC rows, drift decomposition."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from percodrift.environment import origin_cluster_reaches
from percodrift.kalikow import (
    EnumerableInstance,
    build_field,
    conditional_ratio_experiment,
    kalikow_drift_decomposed,
    kalikow_exhaustive,
    kalikow_row_mc,
    speed_representation,
)
from percodrift.kernel import bias_along_axis, local_drift, local_row
from percodrift.lattice import Ball, ball_inner_edges, canonical_edge, directions
from percodrift.speedsim import estimate_speed

BIAS = bias_along_axis(0.5)
O = (0, 0)
BOX2 = Ball(O, 2)
EDGES2 = ball_inner_edges(O, 2)


def _instance(edge_idx, probs, condition=None, box=BOX2):
    pool = ball_inner_edges(box.center, box.radius)
    edges = tuple(pool[i % len(pool)] for i in edge_idx)
    return EnumerableInstance(
        box=box,
        bias=BIAS,
        random_edges=tuple(dict.fromkeys(edges)),
        probs=probs[: len(dict.fromkeys(edges))],
        condition=condition,
    )


def test_instance_validation():
    with pytest.raises(ValueError):
        EnumerableInstance(BOX2, BIAS, (EDGES2[0],), (0.5, 0.5))
    with pytest.raises(ValueError):
        EnumerableInstance(BOX2, BIAS, (EDGES2[0],), (1.5,))
    far = (((9, 9), 0),)
    with pytest.raises(ValueError):
        EnumerableInstance(BOX2, BIAS, far, (0.5,))


def test_enumeration_weights_sum_to_one():
    inst = _instance([0, 3, 5], (0.3, 0.6, 0.9))
    configs = inst.enumerate_configs()
    assert len(configs) == 8
    assert sum(w for _, w in configs) == pytest.approx(1.0, abs=1e-12)


@given(
    st.sets(st.integers(min_value=0, max_value=15), min_size=1, max_size=5),
    st.floats(min_value=0.05, max_value=0.95),
    st.sampled_from([0.3, 0.7, 0.95]),
)
@settings(max_examples=15, deadline=None)
def test_exhaustive_identity_holds_for_any_law(idx, q, delta):
    # The annealed Green function IS the Green function of the auxiliary
    # chain, for any finite environment law and any killing level.
    inst = _instance(sorted(idx), (q,) * len(idx))
    result = kalikow_exhaustive(inst, delta, (1, 1))
    assert result.residual < 1e-12
    assert result.n_admissible == result.n_configs == 2 ** len(inst.random_edges)


def test_exhaustive_identity_under_conditioning():
    # Restricting the law by an arbitrary predicate (here: the origin keeps
    # its cluster reaching the box shell) must not break the identity.  The
    # random edges are the four spokes at the origin plus one more, so the
    # all-spokes-closed configurations really are inadmissible.
    spokes = tuple(canonical_edge(O, e) for e in directions(2))
    inst = EnumerableInstance(
        box=BOX2,
        bias=BIAS,
        random_edges=spokes + (EDGES2[0],),
        probs=(0.5,) * 5,
        condition=lambda cfg: origin_cluster_reaches(cfg, O, 2),
    )
    result = kalikow_exhaustive(inst, 0.9, (1, 1))
    assert result.residual < 1e-12
    assert result.n_admissible < result.n_configs


def test_exhaustive_rows_are_probability_rows():
    inst = _instance([0, 2, 7], (0.4,) * 3)
    result = kalikow_exhaustive(inst, 0.8, (1, 0))
    for v, row in result.rows.items():
        assert sum(row.probs.values()) == pytest.approx(1.0, abs=1e-12)
        assert all(q >= 0 for q in row.probs.values())


def test_deterministic_law_gives_quenched_rows():
    # All probabilities 1: a point mass, so the auxiliary chain is the
    # quenched chain itself (restricted to the box).
    inst = _instance([1, 4], (1.0, 1.0))
    result = kalikow_exhaustive(inst, 0.9, (1, 1))
    positive = [(cfg, w) for cfg, w in inst.enumerate_configs() if w > 0]
    assert len(positive) == 1
    assert positive[0][1] == pytest.approx(1.0)
    # Interior vertex: box truncation does not touch its row.
    row = result.rows[O].probs
    ref = local_row(frozenset(), BIAS, 2)
    for e, val in ref.items():
        assert row[e] == pytest.approx(val, rel=1e-12)


def test_row_mc_at_full_density_is_exact():
    row = kalikow_row_mc(
        1.0, BIAS, 0.5, (1, 1), n_envs=8, seed=0, box=Ball(O, 4), check_radius=3
    )
    ref = local_row(frozenset(), BIAS, 2)
    assert row.epsilon == 0.0
    for e, val in ref.items():
        assert row.kernel.probs[e] == pytest.approx(val, rel=1e-12)
        assert row.se[e] == pytest.approx(0.0, abs=1e-12)
    np.testing.assert_allclose(row.drift(), local_drift(frozenset(), BIAS, 2))


def test_row_mc_dilute_rows_are_stochastic_and_deterministic():
    kwargs = dict(delta=0.8, z=(1, 0), n_envs=24, seed=7, box=Ball(O, 4), check_radius=3)
    a = kalikow_row_mc(0.9, BIAS, **kwargs)
    b = kalikow_row_mc(0.9, BIAS, threads=4, **kwargs)
    assert a.kernel.probs == b.kernel.probs
    assert sum(a.kernel.probs.values()) == pytest.approx(1.0, abs=1e-12)


def test_build_field_covers_requested_vertices():
    zs = [(0, 0), (1, 0), (0, 1)]
    field = build_field(
        0.9, BIAS, 0.7, zs, n_envs=16, seed=3, box=Ball(O, 4), check_radius=3
    )
    assert set(field.rows) == set(zs)
    assert set(field.drift) == set(zs)
    for z in zs:
        assert len(field.drift[z]) == 2


def test_decomposition_weights_form_a_convex_combination():
    dec = kalikow_drift_decomposed(
        0.9, BIAS, 0.7, (1, 1), n_envs=24, seed=5, check_radius=3
    )
    total = sum(
        dec.weights[A] * dec.ratios[A] for A in dec.weights
    )
    assert total == pytest.approx(1.0, abs=1e-12)
    assert len(dec.weights) == 2 ** 4
    assert all(w >= 0 for w in dec.weights.values())


def test_decomposition_at_full_density_recovers_the_open_drift():
    dec = kalikow_drift_decomposed(
        1.0, BIAS, 0.6, (1, 0), n_envs=4, seed=1, check_radius=3
    )
    assert dec.epsilon == 0.0
    np.testing.assert_allclose(
        dec.drift, local_drift(frozenset(), BIAS, 2), atol=1e-13
    )


def test_decomposition_matches_direct_row_drift():
    # Two independent estimators of the same auxiliary drift.
    seed = 11
    dec = kalikow_drift_decomposed(
        0.92, BIAS, 0.8, (1, 1), n_envs=48, seed=seed, check_radius=4
    )
    row = kalikow_row_mc(
        0.92, BIAS, 0.8, (1, 1), n_envs=48, seed=seed + 1,
        box=Ball(O, 5), check_radius=4,
    )
    gap = np.max(np.abs(np.array(dec.drift) - row.drift()))
    scale = max(np.max(np.abs(row.drift())), 0.1)
    assert gap < 0.5 * scale  # loose: both are small-sample MC


def test_ratio_experiment_reuses_environments_across_deltas():
    table = conditional_ratio_experiment(
        0.9,
        BIAS,
        z_list=[(1, 0), (2, 0)],
        A=[(0, 1)],
        delta_list=[0.5, 0.7, 0.9],
        n_envs=16,
        seed=2,
        check_radius=3,
    )
    assert table.epsilon == pytest.approx(0.1)
    assert len(table.entries) == 6  # two vertices, three deltas
    for z, spread in table.spread.items():
        assert math.isfinite(spread) and spread > 0


def test_ratio_experiment_rejects_full_pattern():
    with pytest.raises(ValueError):
        conditional_ratio_experiment(
            0.9, BIAS, [(1, 0)], directions(2), [0.5], 8, 0, check_radius=3
        )


def test_speed_representation_consistent_with_direct_simulation():
    p, delta = 0.95, 0.99
    rep = speed_representation(p, BIAS, delta, n_walks=400, seed=21, check_radius=5)
    direct = estimate_speed(p, BIAS, n_steps=20_000, n_reps=4, master_seed=22,
                            check_radius=5)
    se = math.hypot(rep.se, (direct.ci[0] / 1.96) if direct.ci[0] > 0 else 0.0)
    assert abs(rep.speed - direct.v_hat[0]) < 5 * se + 1e-3
    assert rep.mean_lifetime == pytest.approx(1.0 / (1.0 - delta), rel=0.2)
