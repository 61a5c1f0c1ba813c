"""Walk simulation: replay equivalence, eviction invariance, sweep guards."""

import math
import random
from operator import add

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from percodrift.environment import EnvironmentOracle
from percodrift.kernel import Bias, bias_along_axis, direction_weight
from percodrift.lattice import canonical_edge, directions, dot
from percodrift.speedsim import (
    estimate_speed,
    run_walk,
    sweep_and_fit,
    write_sweep_csv,
)

BIAS = bias_along_axis(0.5)


def reference_walk(oracle, bias, n_steps, walk_seed):
    """Same walk law, written against the public edge oracle only.

    No pattern cache, no eviction, no inlined hashing: every step queries
    `edge_state` for all incident edges and rebuilds the row.  Agreement
    with `run_walk` certifies the fast path bit for bit.
    """
    d = bias.d
    dirs = directions(d)
    ws = [direction_weight(e, bias) for e in dirs]
    rnd = random.Random(walk_seed).random
    x = (0,) * d
    for _ in range(n_steps):
        incident = [
            (e, w)
            for e, w in zip(dirs, ws)
            if oracle.edge_state(canonical_edge(x, tuple(map(add, x, e))))
        ]
        if not incident:
            break
        total = sum(w for _, w in incident)
        cums = []
        acc = 0.0
        for _, w in incident:
            acc += w / total
            cums.append(acc)
        cums[-1] = 1.0
        u = rnd()
        j = 0
        while u > cums[j]:
            j += 1
        x = tuple(map(add, x, incident[j][0]))
    return x


@settings(max_examples=20, deadline=None)
@given(
    env_seed=st.integers(min_value=0, max_value=2**32),
    walk_seed=st.integers(min_value=0, max_value=2**32),
    p=st.sampled_from([0.65, 0.8, 0.95]),
)
def test_run_walk_replays_the_oracle_exactly(env_seed, walk_seed, p):
    oracle = EnvironmentOracle(seed=env_seed, p=p)
    fast = run_walk(oracle, BIAS, 150, walk_seed, eviction_distance=2.0, evict_every=8)
    assert fast.final == reference_walk(oracle, BIAS, 150, walk_seed)


def test_replay_holds_for_diagonal_bias():
    bias = Bias(lam=0.5, direction=(1.0, 1.0))
    oracle = EnvironmentOracle(seed=99, p=0.8)
    fast = run_walk(oracle, bias, 200, 17, eviction_distance=2.0, evict_every=8)
    assert fast.final == reference_walk(oracle, bias, 200, 17)


def test_full_density_walk_frozen_endpoint_and_drift():
    w = run_walk(EnvironmentOracle(seed=7, p=1.0), BIAS, 20000, walk_seed=3)
    assert w.final == (4906, -18)
    assert w.evictions == 0
    assert w.distinct_sites == w.cache_peak == 12534
    assert w.max_backtrack == 9.0
    # 4 sigma window around the exact one-step drift
    assert w.final[0] / 20000 == pytest.approx(math.tanh(0.25), abs=0.02)


def test_dilute_walk_frozen_endpoint():
    w = run_walk(EnvironmentOracle(seed=2026, p=0.98), BIAS, 50000, walk_seed=5)
    assert w.final == (11918, -106)
    assert w.proj == pytest.approx(11918.0)


def test_eviction_policy_never_moves_the_endpoint():
    oracle = EnvironmentOracle(seed=2026, p=0.98)
    lazy = run_walk(oracle, BIAS, 50000, walk_seed=5)
    eager = run_walk(
        oracle, BIAS, 50000, walk_seed=5, eviction_distance=8.0, evict_every=64
    )
    assert eager.final == lazy.final
    assert eager.evictions > 10000
    assert eager.cache_peak < lazy.cache_peak


def test_run_walk_rejects_negative_steps():
    with pytest.raises(ValueError):
        run_walk(EnvironmentOracle(seed=0, p=1.0), BIAS, -1, 0)


def test_estimate_speed_is_thread_invariant():
    kwargs = dict(n_steps=2000, n_reps=4, master_seed=11, check_radius=4)
    serial = estimate_speed(0.95, BIAS, **kwargs, threads=1)
    threaded = estimate_speed(0.95, BIAS, **kwargs, threads=3)
    assert serial.v_hat == threaded.v_hat
    assert serial.replica_proj == threaded.replica_proj
    assert serial.ci == threaded.ci
    assert serial.proj_speed == pytest.approx(dot(serial.v_hat, BIAS.direction))
    assert serial.proj_ci > 0
    assert serial.conditioning_rejections == threaded.conditioning_rejections


def test_estimate_speed_rejects_bad_parameters():
    with pytest.raises(ValueError, match="0.6"):
        estimate_speed(0.6, BIAS, n_steps=10, n_reps=2, master_seed=0)
    with pytest.raises(ValueError, match="replica"):
        estimate_speed(0.95, BIAS, n_steps=10, n_reps=1, master_seed=0)
    with pytest.raises(ValueError, match="positive"):
        estimate_speed(0.95, BIAS, n_steps=0, n_reps=2, master_seed=0)


def test_strong_bias_warns_about_the_trapped_phase():
    strong = bias_along_axis(1.6)
    with pytest.warns(RuntimeWarning, match="weak-drift"):
        estimate_speed(
            0.99, strong, n_steps=10, n_reps=2, master_seed=0, check_radius=4
        )


def test_sweep_grid_validation():
    common = dict(
        bias=BIAS, n_steps=10, n_reps=2, master_seed=0, theoretical=-0.24
    )
    with pytest.raises(ValueError, match="3 grid points"):
        sweep_and_fit((0.0, 0.01), **common)
    with pytest.raises(ValueError, match="increasing"):
        sweep_and_fit((0.0, 0.02, 0.01), **common)
    with pytest.raises(ValueError, match="start at 0"):
        sweep_and_fit((0.01, 0.02, 0.03), **common)
    with pytest.raises(ValueError, match="first-order window"):
        sweep_and_fit((0.0, 0.01, 0.2), **common)


def test_sweep_csv_guard_and_smoke_fit(tmp_path):
    sweep = sweep_and_fit(
        (0.0, 0.01, 0.02),
        BIAS,
        n_steps=200,
        n_reps=2,
        master_seed=3,
        theoretical=-0.2449,
        check_radius=4,
    )
    assert len(sweep.estimates) == 3
    assert math.isfinite(sweep.slope) and math.isfinite(sweep.z_score)
    with pytest.raises(ValueError, match="n_reps >= 8"):
        write_sweep_csv(sweep, str(tmp_path / "sweep.csv"))
