import math

import numpy as np
import numpy.testing as npt
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from spikebeam.config import ScenarioConfig, dbm_to_watt
from spikebeam.rl import (Adam, AlignedPolicy, GaussianPolicy, RandomPolicy, RolloutBuffer, TrainConfig,
                          build_network, clip_grad_norm, clipped_objective, clipped_policy_loss,
                          compute_advantages, episode_seeds, evaluate, gaussian_log_prob, power_sweep, train,
                          value_loss)

SMALL = TrainConfig(iterations=2, batch_size=48, minibatch_size=16, epochs=2, hidden=(16, 16))


def make_policy(k=3, backend="spiking", seed=0, scenario=None):
    sc = scenario or ScenarioConfig(num_vehicles=k, initial_positions=((-5.0, 10.0),) * k)
    net = build_network(backend, (sc.obs_dim, 16, 16, 2 * k - 1), SMALL, np.random.default_rng(seed))
    return GaussianPolicy(net, sc), sc


# --- clipped objective -----------------------------------------------------------

def test_clip_binds_for_large_ratio():
    assert clipped_objective(1.3, 2.0, 0.2) == pytest.approx(2.4, abs=1e-15)


def test_clip_inactive_at_unit_ratio():
    assert clipped_objective(1.0, 2.0, 0.2) == 2.0
    assert clipped_objective(1.0, -1.5, 0.2) == -1.5


def test_clip_negative_advantage_branch():
    # min(0.5 * -1, 0.8 * -1) picks the clipped value
    assert clipped_objective(0.5, -1.0, 0.2) == pytest.approx(-0.8, abs=1e-15)


@given(st.lists(st.floats(-5, 5), min_size=1, max_size=20))
def test_clip_inactivity_gradient(adv):
    adv = np.array(adv)
    lp = np.zeros_like(adv)
    loss, grad = clipped_policy_loss(lp, lp, adv, 0.2)
    assert loss == pytest.approx(-adv.mean(), abs=1e-12)
    # d ratio / d logp = ratio = 1, so the gradient equals -A / n
    npt.assert_allclose(grad, -adv / len(adv), atol=1e-15)


def test_policy_loss_gradient_matches_fd():
    rng = np.random.default_rng(0)
    old = rng.normal(size=50)
    new = old + rng.normal(scale=0.3, size=50)
    adv = rng.normal(size=50)
    _, grad = clipped_policy_loss(new, old, adv, 0.2)
    h = 1e-7
    for i in range(50):
        e = np.zeros(50)
        e[i] = h
        fd = (clipped_policy_loss(new + e, old, adv, 0.2)[0] - clipped_policy_loss(new - e, old, adv, 0.2)[0]) / (2 * h)
        assert grad[i] == pytest.approx(fd, abs=1e-7)


def test_value_loss_examples():
    r = np.array([1.0, -2.0, 3.5])
    assert value_loss(r, r)[0] == 0.0
    assert value_loss(r + 0.7, r)[0] == pytest.approx(0.49)
    v = np.array([0.5, 1.0, -1.0])
    assert value_loss(v, r)[0] == pytest.approx(((0.5 - 1) ** 2 + 3 ** 2 + 4.5 ** 2) / 3)


# --- advantages ----------------------------------------------------------------

def test_gae_lambda_one_is_monte_carlo():
    rng = np.random.default_rng(1)
    r = rng.normal(size=40)
    adv, ret = compute_advantages(r, np.zeros(40), np.zeros(40), 0.0, 0.97, 1.0)
    npt.assert_allclose(adv, oracles.discounted_sum(list(r), 0.97), rtol=1e-10, atol=1e-12)
    npt.assert_allclose(ret, adv)


def test_gae_lambda_one_with_values_matches_mc_minus_v():
    rng = np.random.default_rng(2)
    r, v = rng.normal(size=30), rng.normal(size=30)
    adv, _ = compute_advantages(r, v, np.zeros(30), 0.0, 0.9, 1.0)
    npt.assert_allclose(adv, np.array(oracles.discounted_sum(list(r), 0.9)) - v, rtol=1e-10, atol=1e-10)


def test_gae_constant_reward_geometric_limit():
    adv, _ = compute_advantages(np.ones(5000), np.zeros(5000), np.zeros(5000), 0.0, 0.99, 1.0)
    assert adv[0] == pytest.approx(100.0 * (1 - 0.99 ** 5000), rel=1e-12)
    assert adv[0] == pytest.approx(100.0, abs=1e-12)


def test_gae_lambda_zero_is_td_residual():
    rng = np.random.default_rng(3)
    r, v = rng.normal(size=20), rng.normal(size=20)
    adv, _ = compute_advantages(r, v, np.zeros(20), 0.4, 0.99, 0.0)
    nxt = np.append(v[1:], 0.4)
    npt.assert_allclose(adv, r + 0.99 * nxt - v, rtol=1e-12)


def test_gae_does_not_bootstrap_across_done():
    r = np.array([1.0, 1.0, 1.0, 1.0])
    adv, _ = compute_advantages(r, np.zeros(4), np.array([0, 1, 0, 0.0]), 10.0, 0.5, 1.0)
    npt.assert_allclose(adv, [1.5, 1.0, 1.5 + 0.25 * 10, 1.0 + 0.5 * 10])


@given(st.lists(st.integers(-10_000, 10_000), min_size=2, max_size=30, unique=True), st.floats(1e-3, 1e3))
def test_advantage_normalisation_keeps_ranking(ints, scale):
    adv = np.array(ints) * scale
    norm = (adv - adv.mean()) / (adv.std() + 1e-8)
    assert np.argmax(norm) == np.argmax(adv)
    assert np.all(np.diff(norm[np.argsort(adv)]) >= 0)


def test_rollout_buffer():
    buf = RolloutBuffer(3, 2, 1)
    for i in range(3):
        buf.add(np.ones(2) * i, [0.1 * i], -1.0, 1.0, 0.0, i == 2)
    assert buf.full
    with pytest.raises(IndexError):
        buf.add(np.zeros(2), [0.0], 0, 0, 0, False)
    buf.finish(0.0, 0.5, 1.0)
    npt.assert_allclose(buf.advantages, [1.75, 1.5, 1.0])
    npt.assert_allclose(buf.returns, buf.advantages)
    buf.clear()
    assert buf.size == 0 and not buf.full


# --- optimiser ----------------------------------------------------------------

def test_adam_first_step_is_lr_sign():
    p = [np.array([1.0, -2.0, 3.0])]
    opt = Adam(p, lr=0.1)
    opt.step([np.array([0.5, -4.0, 0.0])])
    npt.assert_allclose(p[0], [0.9, -1.9, 3.0], atol=1e-7)


def test_adam_matches_hand_recursion():
    p = [np.array([0.3])]
    opt = Adam(p, lr=0.01)
    m = v = 0.0
    x = 0.3
    for t, g in enumerate([0.2, -0.1, 0.4], start=1):
        opt.step([np.array([g])])
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        x -= 0.01 * (m / (1 - 0.9 ** t)) / (math.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
    assert p[0][0] == pytest.approx(x, rel=1e-12)


def test_clip_grad_norm():
    g = [np.array([3.0]), np.array([4.0])]
    assert clip_grad_norm(g, 1.0) == pytest.approx(5.0)
    assert math.hypot(g[0][0], g[1][0]) == pytest.approx(1.0)


# --- policy head ------------------------------------------------------------------

def test_deterministic_act_is_repeatable():
    pol, _ = make_policy()
    obs = np.linspace(-1, 1, 12)
    a1, _, _ = pol.act(obs, deterministic=True)
    a2, _, _ = pol.act(obs, deterministic=True)
    assert np.array_equal(a1.beam_angles, a2.beam_angles)
    assert np.array_equal(a1.power_alloc, a2.power_alloc)


def test_sampled_actions_feasible():
    pol, sc = make_policy()
    rng = np.random.default_rng(0)
    raw = rng.normal(scale=6.0, size=(100_000, 5))
    for r in raw[::100]:
        a = pol.decode(r)
        assert np.all(a.power_alloc > 0) and a.power_alloc.sum() <= sc.max_power * (1 + 1e-12)
        assert np.all((a.beam_angles > 0) & (a.beam_angles < np.pi))


def test_power_fill_scales_budget():
    sc = ScenarioConfig()
    net = build_network("dense", (12, 4, 5), SMALL, np.random.default_rng(0))
    pol = GaussianPolicy(net, sc, power_fill=0.5)
    assert pol.decode(np.zeros(5)).power_alloc.sum() == pytest.approx(0.5 * sc.max_power)


def test_log_prob_integrates_to_one_angle_head():
    pol, _ = make_policy(k=1)
    pol.log_std[:] = -0.3
    mean = np.array([[0.4]])
    # midpoint rule over the decoded angle in (0, pi)
    n = 200_000
    a = (np.arange(n) + 0.5) * np.pi / n
    raw = np.log(a / (np.pi - a))[:, None]
    dens = np.exp(pol.log_prob(raw, np.repeat(mean, n, axis=0)))
    assert dens.sum() * np.pi / n == pytest.approx(1.0, abs=1e-6)


def test_log_prob_integrates_to_one_two_vehicles():
    pol, sc = make_policy(k=2)
    pol.log_std[:] = [-0.2, 0.1, -0.4]
    n = 90
    a = (np.arange(n) + 0.5) * np.pi / n
    p = (np.arange(n) + 0.5) * pol.budget / n
    A1, A2, P1 = np.meshgrid(a, a, p, indexing="ij")
    # invert the squash: angles via logit, first power via its log-ratio to the last
    raw = np.stack([np.log(A1 / (np.pi - A1)), np.log(A2 / (np.pi - A2)),
                    np.log(P1 / (pol.budget - P1))], axis=-1).reshape(-1, 3)
    mean = np.tile([0.3, -0.5, 0.2], (len(raw), 1))
    dens = np.exp(pol.log_prob(raw, mean))
    total = dens.sum() * (np.pi / n) ** 2 * (pol.budget / n)
    assert total == pytest.approx(1.0, abs=5e-3)


def test_decode_inverse_of_squash():
    pol, _ = make_policy(k=3)
    raw = np.array([0.3, -1.0, 2.0, 0.5, -0.7])
    a = pol.decode(raw)
    npt.assert_allclose(np.log(a.beam_angles / (np.pi - a.beam_angles)), raw[:3], rtol=1e-12)
    npt.assert_allclose(np.log(a.power_alloc[:2] / a.power_alloc[2]), raw[3:], rtol=1e-12)


def test_log_prob_gradients_used_in_update():
    # d logp / d mean = z / std and d logp / d log_std = z^2 - 1 (the squash term has no parameters)
    pol, _ = make_policy(k=2)
    rng = np.random.default_rng(0)
    raw, mean = rng.normal(size=(1, 3)), rng.normal(size=(1, 3))
    std = np.exp(pol.log_std)
    z = (raw - mean) / std
    h = 1e-6
    for j in range(3):
        e = np.zeros((1, 3))
        e[0, j] = h
        fd = (pol.log_prob(raw, mean + e) - pol.log_prob(raw, mean - e))[0] / (2 * h)
        assert fd == pytest.approx((z / std)[0, j], rel=1e-6)
        old = pol.log_std[j]
        pol.log_std[j] = old + h
        up = pol.log_prob(raw, mean)[0]
        pol.log_std[j] = old - h
        down = pol.log_prob(raw, mean)[0]
        pol.log_std[j] = old
        assert (up - down) / (2 * h) == pytest.approx(z[0, j] ** 2 - 1, rel=1e-6, abs=1e-8)


def test_gaussian_log_prob_standard_normal():
    assert gaussian_log_prob(np.zeros((1, 1)), np.zeros((1, 1)), np.zeros(1))[0] == pytest.approx(
        -0.5 * math.log(2 * math.pi))


def test_random_policy_feasible_and_reproducible():
    sc = ScenarioConfig()
    a = [RandomPolicy(sc, seed=3).act(None)[0] for _ in range(2)]
    assert np.array_equal(a[0].beam_angles, a[1].beam_angles)
    assert a[0].power_alloc.sum() == pytest.approx(sc.max_power)


# --- training and evaluation -------------------------------------------------

def test_training_is_bit_reproducible():
    sc = ScenarioConfig(horizon=20)
    m1 = train(SMALL, sc, "spiking").metrics
    m2 = train(SMALL, sc, "spiking").metrics
    assert m1 == m2 or all(
        all((a[k] == b[k]) or (a[k] != a[k] and b[k] != b[k]) for k in a) for a, b in zip(m1, m2))


def test_training_changes_weights_and_logs_energy():
    sc = ScenarioConfig(horizon=20)
    before, _ = make_policy(scenario=sc)
    res = train(SMALL, sc, "spiking")
    assert len(res.metrics) == 2
    tot = res.ledger.phase("training")
    assert tot.energy_pj > 0 and tot.baseline_pj > tot.energy_pj
    assert res.metrics[-1]["train_energy_pj"] == tot.energy_pj
    assert all(0 <= m["actor_rate_l1"] <= 1 for m in res.metrics)


def test_dense_backend_trains():
    res = train(SMALL, ScenarioConfig(horizon=20), "dense")
    assert res.policy.net.kind == "dense"
    assert res.ledger.phase("training").energy_pj == pytest.approx(res.ledger.phase("training").baseline_pj)


def test_random_backend_skips_updates():
    res = train(SMALL, ScenarioConfig(horizon=20), "random")
    assert res.critic is None
    assert all(math.isnan(m["policy_loss"]) for m in res.metrics)


def test_episode_seeds_stable():
    assert episode_seeds(5, 3) == episode_seeds(5, 3)
    assert episode_seeds(5, 3)[:2] == episode_seeds(5, 2)


def test_single_episode_equals_logged_rollout():
    sc = ScenarioConfig(horizon=15)
    pol = AlignedPolicy(sc)
    record = []
    rep = evaluate(pol, sc, 1, seed=2, record=record)
    per_slot = [r[14] for r in record[::3]]
    npt.assert_allclose(rep.sum_rate_per_slot, per_slot)
    assert rep.episode_sum_rates[0] == pytest.approx(np.mean(per_slot))
    assert len(rep.sum_rate_per_slot) == 15


def test_more_episodes_shrink_standard_error():
    sc = ScenarioConfig(horizon=10)
    pol = RandomPolicy(sc, seed=0)
    small = evaluate(pol, sc, 40, seed=0)
    large = evaluate(RandomPolicy(sc, seed=0), sc, 160, seed=0)
    # four times the episodes -> about half the standard error
    assert large.sem_sum_rate / small.sem_sum_rate == pytest.approx(0.5, rel=0.35)


def test_sweep_single_point_equals_evaluation():
    sc = ScenarioConfig(horizon=10)
    pol = AlignedPolicy(sc)
    ((dbm, rep),) = power_sweep(pol, sc, [40.0], 2, seed=1)
    direct = evaluate(pol, sc.replace(max_power=dbm_to_watt(40.0)), 2, seed=1)
    assert rep.mean_sum_rate == direct.mean_sum_rate


def test_aligned_sweep_monotone():
    sc = ScenarioConfig(horizon=30)
    res = power_sweep(AlignedPolicy(sc), sc, [20, 25, 30, 35, 40], 2, seed=0)
    rates = [r.mean_sum_rate for _, r in res]
    assert all(b >= a for a, b in zip(rates, rates[1:]))
