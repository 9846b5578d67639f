from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from jointshap.coefficients import arrival_size_distribution, compute_q
from jointshap.game import Game, majority
from jointshap.indices import joint_shapley_exact
from jointshap.sampler import (
    GameSource,
    SamplerConfig,
    SamplerError,
    _draw_present,
    arrival_process_expectation,
    arrival_process_simulate,
    convergence_trace,
    sample_joint_shapley,
    sampler_estimand,
    spawn_streams,
)

from conftest import rational_games


@given(rational_games(max_n=5), st.data())
def test_estimator_is_unbiased(game, data):
    """The sampling law reweighted by its scale reproduces the exact value."""
    k = data.draw(st.integers(1, game.n))
    exact = joint_shapley_exact(game, k)
    for T, val in exact.values.items():
        assert sampler_estimand(game, k, T) == val


@settings(max_examples=25)
@given(rational_games(max_n=4), st.data())
def test_arrival_enumeration_matches_formula(game, data):
    k = data.draw(st.integers(1, game.n))
    assert arrival_process_expectation(game, k).values == joint_shapley_exact(game, k).values


def test_majority_estimates():
    g = majority(3)
    exact = joint_shapley_exact(g, 2)
    res = sample_joint_shapley(g, 3, 2, cfg=SamplerConfig(iterations=100_000, seed=7))
    for T, val in exact.values.items():
        assert abs(res.values[T] - float(val)) < 0.01
        assert res.meta["sem"][T] < 0.005
    assert res.mode == "sampled"


def test_same_seed_same_answer_any_batch_or_threads():
    g = majority(4)
    base = sample_joint_shapley(g, 4, 2, cfg=SamplerConfig(iterations=5000, seed=3, batch=512))
    again = sample_joint_shapley(g, 4, 2, cfg=SamplerConfig(iterations=5000, seed=3, batch=512, threads=4))
    other_batch = sample_joint_shapley(g, 4, 2, cfg=SamplerConfig(iterations=5000, seed=3, batch=777))
    assert base.values == again.values
    for T in base.values:
        assert other_batch.values[T] == pytest.approx(base.values[T], abs=1e-12)
    different = sample_joint_shapley(g, 4, 2, cfg=SamplerConfig(iterations=5000, seed=4))
    assert different.values != base.values


def test_target_order_does_not_change_draws():
    g = majority(4)
    cfg = SamplerConfig(iterations=2000, seed=11)
    a = sample_joint_shapley(g, 4, 2, targets=[(0,), (1, 2)], cfg=cfg)
    b = sample_joint_shapley(g, 4, 2, targets=[(0,), (1, 2), (3,)], cfg=cfg)
    assert a[(0,)] == b[(0,)] and a[(1, 2)] == b[(1, 2)]


def test_bad_inputs():
    g = majority(3)
    with pytest.raises(SamplerError):
        sample_joint_shapley(g, 3, 2, targets=[(0, 1, 2)])
    with pytest.raises(SamplerError):
        sample_joint_shapley(g, 4, 2)
    with pytest.raises(SamplerError):
        SamplerConfig(iterations=0)
    with pytest.raises(SamplerError):
        sample_joint_shapley(g, 3, 2, targets=[])


def test_size_law_and_uniform_subsets():
    n, k, t = 5, 3, 1
    table = compute_q(n, k)
    dist = arrival_size_distribution(table, t)
    target = np.zeros(n, dtype=bool)
    target[0] = True
    size_rng, subset_rng, _ = spawn_streams(0, 1)[0]
    draws = 200_000
    present, sizes = _draw_present(target, np.asarray(dist.cdf()), draws, size_rng, subset_rng)
    assert not present[:, 0].any()
    assert (present.sum(axis=1) == sizes).all()
    freq = np.bincount(sizes, minlength=n - t + 1) / draws
    assert np.allclose(freq, dist.probs, atol=0.005)
    # size-2 subsets of the 4 others: six of them, equally likely
    rows = present[sizes == 2][:, 1:]
    codes = rows.astype(int) @ (1 << np.arange(4))
    counts = np.bincount(codes, minlength=16)[[3, 5, 6, 9, 10, 12]]
    assert np.allclose(counts / counts.sum(), 1 / 6, atol=0.01)


def test_arrival_simulation_close_to_exact():
    g = majority(3)
    res = arrival_process_simulate(g, 2, SamplerConfig(iterations=200_000, seed=1, batch=8192))
    exact = joint_shapley_exact(g, 2)
    for T, val in exact.values.items():
        assert abs(res.estimate.values[T] - float(val)) < 0.01
    q = np.array(compute_q(3, 2).as_floats())
    assert np.allclose(res.empirical_q(1), q, atol=0.01)
    assert np.allclose(res.empirical_q(2)[:2], q[:2], atol=0.01)


def test_arrival_expectation_full_order():
    res = arrival_process_expectation(majority(3), 3)
    assert res[(0, 1, 2)] == Fraction(1, 7)


def test_convergence_trace():
    g = majority(3)
    cfg = SamplerConfig(iterations=20_000, seed=5, batch=1000)
    ref = joint_shapley_exact(g, 2)
    trace = convergence_trace(g, 3, 2, cfg=cfg, reference=ref, checkpoint_every=1000)
    assert trace.iterations[0] == 1000 and trace.iterations[-1] == 20_000
    final = sample_joint_shapley(g, 3, 2, cfg=cfg)
    assert trace.estimates[-1] == pytest.approx(final.values, abs=1e-12)
    assert np.mean(trace.l2[-5:]) < np.mean(trace.l2[:5])
    rows = list(trace.rows())
    assert len(rows) == 20 * 6
    with pytest.raises(SamplerError):
        convergence_trace(g, 3, 2, cfg=cfg, checkpoint_every=0)
    with pytest.raises(SamplerError):
        convergence_trace(g, 3, 2, cfg=cfg, checkpoint_every=50_000)


def test_large_game_uses_row_loop():
    n = 22
    g = Game(n, lambda S: float(S.bit_count() >= 11), exact=False)
    src = GameSource(g)
    res = sample_joint_shapley(src, n, 1, targets=[(0,)], cfg=SamplerConfig(iterations=3000, seed=0))
    # by symmetry every agent gets 1/n
    assert abs(res[(0,)] - 1 / n) < 0.03
