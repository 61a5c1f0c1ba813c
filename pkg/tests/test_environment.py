"""Environment oracle, windows, surgery, clustering, conditioning."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from percodrift.environment import (
    ConditioningBudgetError,
    EdgeConfig,
    EnvironmentOracle,
    UnresolvableEdgeError,
    all_open,
    apply_surgery,
    close_ball_spec,
    clusters,
    condition_on_I,
    config_of,
    from_states,
    load_window,
    materialize,
    open_ball_spec,
    origin_cluster_reaches,
    save_window,
    with_local_config,
    SurgerySpec,
)
from percodrift.lattice import Ball, ball_inner_edges, canonical_edge, directions

E_RIGHT = canonical_edge((0, 0), (1, 0))
E_UP = canonical_edge((0, 0), (0, 1))


def test_oracle_is_deterministic_and_pure():
    a = EnvironmentOracle(seed=42, p=0.7)
    b = EnvironmentOracle(seed=42, p=0.7)
    edges = ball_inner_edges((0, 0), 5)
    assert [a.edge_state(e) for e in edges] == [b.edge_state(e) for e in edges]


def test_oracle_vectorized_matches_scalar():
    oracle = EnvironmentOracle(seed=9, p=0.55)
    edges = ball_inner_edges((2, -1), 4)
    vec = oracle.edge_states(edges)
    assert list(vec) == [oracle.edge_state(e) for e in edges]


def test_oracle_open_fraction_tracks_p():
    oracle = EnvironmentOracle(seed=1, p=0.8)
    edges = ball_inner_edges((0, 0), 20)
    frac = np.mean(oracle.edge_states(edges))
    # ~1650 edges; 5 sigma of a Bernoulli(0.8) mean is about 0.05.
    assert abs(frac - 0.8) < 0.05


def test_oracle_rejects_bad_p():
    with pytest.raises(ValueError):
        EnvironmentOracle(seed=0, p=1.5)


def test_unresolvable_edge_raises():
    with pytest.raises(UnresolvableEdgeError):
        EdgeConfig().edge_open(E_RIGHT)


def test_overlay_wins_over_backing():
    cfg = from_states({E_RIGHT: False}, backing=EnvironmentOracle(seed=0, p=1.0))
    assert not cfg.edge_open(E_RIGHT)
    assert cfg.edge_open(E_UP)


def test_all_open_opens_everything():
    cfg = all_open()
    for e in ball_inner_edges((0, 0), 3):
        assert cfg.edge_open(e)


@given(st.integers(min_value=0, max_value=2**32), st.integers(min_value=1, max_value=4))
@settings(max_examples=25, deadline=None)
def test_materialize_agrees_with_oracle(seed, radius):
    oracle = EnvironmentOracle(seed=seed, p=0.6)
    window = Ball((0, 0), radius)
    cfg = materialize(oracle, window)
    for e in ball_inner_edges((0, 0), radius):
        assert cfg.edge_open(e) == oracle.edge_state(e)


def test_materialize_falls_back_to_oracle_outside_window():
    oracle = EnvironmentOracle(seed=5, p=0.5)
    cfg = materialize(oracle, Ball((0, 0), 2))
    far = canonical_edge((10, 10), (11, 10))
    assert cfg.edge_open(far) == oracle.edge_state(far)


def test_surgery_b1_closes_inside_a1():
    base = all_open()
    edges = frozenset(ball_inner_edges((0, 0), 1))
    spec = SurgerySpec(A1=edges, B1=frozenset({E_RIGHT}))
    cfg = apply_surgery(base, spec)
    assert not cfg.edge_open(E_RIGHT)
    assert cfg.edge_open(E_UP)  # in A1, not in B1: forced open


def test_surgery_a2_defers_to_a1():
    # The same edge closed by B2 but opened by A1 \ B1 stays open.
    edges = frozenset({E_RIGHT})
    spec = SurgerySpec(A1=edges, B1=frozenset(), A2=edges, B2=edges)
    cfg = apply_surgery(from_states({}, backing=EnvironmentOracle(0, 0.0)), spec)
    assert cfg.edge_open(E_RIGHT)


def test_surgery_validates_subsets():
    with pytest.raises(ValueError):
        SurgerySpec(A1=frozenset(), B1=frozenset({E_RIGHT}))


def test_close_and_open_ball_specs():
    closed = apply_surgery(all_open(), close_ball_spec((0, 0), 1))
    for e in ball_inner_edges((0, 0), 1):
        assert not closed.edge_open(e)
    reopened = apply_surgery(closed, open_ball_spec((0, 0), 1))
    for e in ball_inner_edges((0, 0), 1):
        assert reopened.edge_open(e)


def test_with_local_config_and_readback():
    dirs = frozenset({(1, 0), (0, -1)})
    cfg = with_local_config(all_open(), (2, 2), dirs)
    assert config_of(cfg, (2, 2)) == dirs
    assert config_of(cfg, (0, 0)) == frozenset()


def test_clusters_on_split_configuration():
    # Close the four edges at the origin: the origin becomes its own cluster.
    cfg = with_local_config(all_open(), (0, 0), frozenset(directions(2)))
    lab = clusters(cfg, Ball((0, 0), 2))
    others = [v for v in lab.labels if v != (0, 0)]
    assert lab.labels[(0, 0)] not in {lab.labels[v] for v in others}
    first = others[0]
    assert all(lab.labels[v] == lab.labels[first] for v in others)
    assert lab.sizes[lab.labels[(0, 0)]] == 1


def test_origin_cluster_reaches_extremes():
    assert origin_cluster_reaches(all_open(), (0, 0), 5)
    isolated = with_local_config(all_open(), (0, 0), frozenset(directions(2)))
    assert not origin_cluster_reaches(isolated, (0, 0), 5)


def _first_failing_seed(p, check_radius):
    for s in range(10_000):
        cfg = materialize(EnvironmentOracle(seed=s, p=p), Ball((0, 0), check_radius))
        if not origin_cluster_reaches(cfg, (0, 0), check_radius):
            return s
    raise AssertionError("no failing seed found")


def test_condition_on_I_accepts_a_reaching_cluster():
    oracle, rejected = condition_on_I(0.65, 4, 123)
    cfg = materialize(oracle, Ball((0, 0), 4))
    assert origin_cluster_reaches(cfg, (0, 0), 4)
    assert rejected >= 0


def test_condition_on_I_exhausts_budget_on_failing_stream():
    bad = _first_failing_seed(0.65, 3)
    with pytest.raises(ConditioningBudgetError):
        condition_on_I(0.65, 3, [bad], max_attempts=1)


def test_condition_on_I_rejects_subcritical_p():
    with pytest.raises(ValueError):
        condition_on_I(0.5, 3, 0)


def test_save_load_roundtrip(tmp_path):
    oracle = EnvironmentOracle(seed=77, p=0.72)
    cfg = materialize(oracle, Ball((0, 0), 4))
    cfg.overlay[E_RIGHT] = False
    path = str(tmp_path / "window.bin")
    save_window(cfg, path)
    back = load_window(path)
    assert np.array_equal(back.bits, cfg.bits)
    assert back.overlay == cfg.overlay
    assert back.backing == cfg.backing
    for e in ball_inner_edges((0, 0), 4):
        assert back.edge_open(e) == cfg.edge_open(e)


def test_load_rejects_garbage(tmp_path):
    path = tmp_path / "junk.bin"
    path.write_bytes(b'{"format": "something-else"}\n\x00')
    with pytest.raises(ValueError):
        load_window(str(path))
