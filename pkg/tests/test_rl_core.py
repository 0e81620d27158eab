import math

import numpy as np
import pytest

from trs_engine.rl.env import INPUT_SCALE, OBS_DIM, NormalizationSpec, PlantEnv, make_env
from trs_engine.rl.network import AdamOptimizer, PolicyNetwork, log_softmax, softmax
from trs_engine.rl.ppo import (
    PPOConfig,
    act,
    act_batch,
    compute_returns,
    gae_advantages,
    greedy_act,
    load_checkpoint,
    new_policy,
    policy_entropy,
    ppo_loss_and_grads,
    ppo_update,
    save_checkpoint,
    train,
)
from trs_engine.simulator import energy_summary, la_rance_bundle
from trs_engine.tide import HarmonicConstituent, synthesize_tide

BUNDLE = la_rance_bundle()


def toy_policy(seed=0):
    return PolicyNetwork(obs_dim=3, branch_sizes=(2, 3), hidden=(4,), seed=seed)


def toy_batch(policy, n=8, seed=1, adv_scale=1.0, ratio_jitter=0.05):
    rng = np.random.default_rng(seed)
    obs = rng.normal(0, 1, (n, policy.obs_dim))
    cache = policy.forward(obs)
    actions = np.column_stack(
        [rng.integers(0, size, n) for size in policy.branch_sizes]
    )
    logp = np.zeros(n)
    for k, logits in enumerate(cache.logits):
        logp += log_softmax(logits)[np.arange(n), actions[:, k]]
    # keep ratios strictly inside the clip band so the loss is smooth
    logp_old = logp + rng.uniform(-ratio_jitter, ratio_jitter, n)
    return {
        "obs": obs,
        "actions": actions,
        "logp": logp_old,
        "returns": rng.normal(0, 1, n),
        "advantages": adv_scale * rng.normal(0, 1, n),
    }


class TestNetwork:
    def test_softmax_heads_sum_to_one(self):
        policy = new_policy(seed=3)
        obs = np.random.default_rng(0).normal(0, 1, (32, OBS_DIM))
        cache = policy.forward(obs)
        for logits in cache.logits:
            p = softmax(logits)
            assert np.all(p >= 0)
            np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-6)

    def test_gradient_check_against_central_differences(self):
        policy = toy_policy()
        batch = toy_batch(policy)
        clip_eps, beta, vf = 0.2, 0.01, 0.5
        _, grads, _ = ppo_loss_and_grads(policy, batch, clip_eps, beta, vf)

        def loss_at(flat):
            twin = policy.clone()
            twin.set_flat_params(flat)
            value, _, _ = ppo_loss_and_grads(twin, batch, clip_eps, beta, vf)
            return value

        flat0 = policy.flat_params()
        analytic = np.concatenate([grads[k].ravel() for k in sorted(grads)])
        fd = np.empty_like(flat0)
        h = 1e-6
        for j in range(flat0.size):
            up = flat0.copy()
            up[j] += h
            dn = flat0.copy()
            dn[j] -= h
            fd[j] = (loss_at(up) - loss_at(dn)) / (2 * h)
        denom = np.maximum(np.maximum(np.abs(fd), np.abs(analytic)), 1e-6)
        assert np.max(np.abs(analytic - fd) / denom) <= 1e-4

    def test_zero_advantage_batch_leaves_policy_heads_still(self):
        policy = toy_policy()
        batch = toy_batch(policy, adv_scale=0.0)
        _, grads, _ = ppo_loss_and_grads(policy, batch, 0.2, 0.0, 0.5)
        for k in range(len(policy.branch_sizes)):
            assert np.allclose(grads[f"Wh{k}"], 0.0)
            assert np.allclose(grads[f"bh{k}"], 0.0)
        assert not np.allclose(grads["Wv"], 0.0)

    def test_clipped_ratio_positive_advantage_contributes_nothing(self):
        policy = toy_policy()
        rng = np.random.default_rng(5)
        obs = rng.normal(0, 1, (1, 3))
        cache = policy.forward(obs)
        actions = np.array([[0, 1]])
        logp = sum(
            log_softmax(cache.logits[k])[0, actions[0, k]] for k in range(2)
        )
        batch = {
            "obs": obs,
            "actions": actions,
            # ratio = exp(logp - logp_old) = 1.5, outside 1 + eps
            "logp": np.array([logp - math.log(1.5)]),
            "returns": cache.value.copy(),  # no value error either
            "advantages": np.array([1.0]),
        }
        _, grads, diag = ppo_loss_and_grads(policy, batch, 0.2, 0.0, 0.5)
        assert diag["clip_fraction"] == 1.0
        for g in grads.values():
            assert np.allclose(g, 0.0)

    def test_one_hot_logits_sample_deterministically(self):
        policy = toy_policy()
        policy.params["Wh0"][:] = 0.0
        policy.params["bh0"][:] = np.array([100.0, -100.0])
        rng = np.random.default_rng(0)
        obs = np.zeros(3)
        for _ in range(20):
            action, _, _ = act(policy, obs, rng)
            assert action[0] == 0

    def test_uniform_logits_sampling_frequencies(self):
        policy = new_policy(seed=0)
        for k in range(3):
            policy.params[f"Wh{k}"][:] = 0.0
            policy.params[f"bh{k}"][:] = 0.0
        rng = np.random.default_rng(42)
        obs = np.tile(np.zeros(OBS_DIM), (100_000, 1))
        actions, _, _ = act_batch(policy, obs, rng)
        for k, size in enumerate((2, 5, 17)):
            counts = np.bincount(actions[:, k], minlength=size)
            p = 1.0 / size
            sigma = math.sqrt(p * (1 - p) / actions.shape[0])
            assert np.all(np.abs(counts / actions.shape[0] - p) < 3 * sigma + 1e-4)

    def test_greedy_mode_deterministic(self):
        policy = new_policy(seed=1)
        obs = np.random.default_rng(2).normal(0, 1, OBS_DIM)
        assert greedy_act(policy, obs) == greedy_act(policy, obs)

    def test_adam_moves_parameters(self):
        policy = toy_policy()
        before = policy.flat_params().copy()
        batch = toy_batch(policy)
        ppo_update(policy, batch, AdamOptimizer(lr=1e-3))
        assert not np.allclose(before, policy.flat_params())


class TestReturns:
    def test_gamma_zero(self):
        r = np.array([1.0, 2.0, 3.0])
        np.testing.assert_allclose(compute_returns(r, 0.0), r)

    def test_constant_reward_geometric(self):
        gamma, r, n = 0.95, 2.0, 60
        returns = compute_returns(np.full(n, r), gamma)
        closed = r * (1 - gamma**n) / (1 - gamma)
        assert returns[0] == pytest.approx(closed, rel=1e-12)
        assert returns[0] < r / (1 - gamma)

    def test_brute_force_oracle(self):
        rng = np.random.default_rng(9)
        rewards = rng.normal(0, 1, 200)
        gamma = 0.97
        fast = compute_returns(rewards, gamma)
        brute = np.array(
            [
                sum(gamma ** (k - t) * rewards[k] for k in range(t, rewards.size))
                for t in range(rewards.size)
            ]
        )
        np.testing.assert_allclose(fast, brute, rtol=1e-12, atol=1e-12)

    def test_bootstrap_and_done_cut(self):
        rewards = np.array([1.0, 1.0, 1.0, 1.0])
        dones = np.array([False, True, False, False])
        returns = compute_returns(rewards, 0.5, bootstrap_value=8.0, dones=dones)
        assert returns[2] == pytest.approx(1.0 + 0.5 * (1.0 + 0.5 * 8.0))
        assert returns[1] == pytest.approx(1.0)  # episode ends after reward 1
        assert returns[0] == pytest.approx(1.0 + 0.5 * 1.0)

    def test_gae_matches_returns_minus_value_at_lambda_one(self):
        rng = np.random.default_rng(4)
        rewards = rng.normal(0, 1, 50)
        values = rng.normal(0, 1, 50)
        dones = np.zeros(50, dtype=bool)
        boot = 0.7
        adv = gae_advantages(rewards, values, 0.99, 1.0, boot, dones)
        ret = compute_returns(rewards, 0.99, boot)
        np.testing.assert_allclose(adv, ret - values, rtol=1e-10, atol=1e-10)

    def test_rejects_bad_gamma(self):
        with pytest.raises(ValueError):
            compute_returns([1.0], 1.5)


def short_tide(steps=60, dt=360.0):
    return synthesize_tide(
        [HarmonicConstituent(4.0, 12.4206)], 6.75, 0.0, (steps + 2) * dt, dt
    )


class TestEnv:
    def test_reset_deterministic_with_seed(self):
        env = make_env(short_tide(), BUNDLE, episode_steps=20, seed=0)
        a = env.reset(seed=123)
        b = env.reset(seed=123)
        np.testing.assert_array_equal(a, b)

    def test_offline_steps_zero_reward(self):
        env = make_env(short_tide(), BUNDLE, episode_steps=10, seed=1)
        env.reset(start_index=0)
        for _ in range(10):
            _, reward, done, _ = env.step((0, 0, 0))
            assert reward == 0.0
        assert done

    def test_episode_length_exact(self):
        env = make_env(short_tide(), BUNDLE, episode_steps=7, seed=1)
        env.reset(start_index=0)
        transitions = 0
        done = False
        while not done:
            _, _, done, _ = env.step((0, 0, 0))
            transitions += 1
        assert transitions == 7
        with pytest.raises(RuntimeError):
            env.step((0, 0, 0))

    def test_observation_layout_and_normalization(self):
        env = make_env(short_tide(), BUNDLE, episode_steps=5, seed=1)
        obs = env.reset(start_index=0)
        assert obs.shape == (OBS_DIM,)
        assert np.all(obs[:4] >= 0) and np.all(obs[:4] <= 1)
        obs, _, _, _ = env.step((1, 3, 5))
        assert obs[4] == 1.0 and obs[6] == 3.0 and obs[8] == 5.0
        assert obs[5] == 0.0 and obs[7] == 0.0 and obs[9] == 0.0

    def test_invalid_action_coerced_and_flagged(self):
        env = make_env(short_tide(), BUNDLE, episode_steps=5, seed=1)
        env.reset(start_index=0)
        _, _, _, info = env.step((0, 4, 0))  # pump with zero drive
        assert info["coerced"]
        assert env.coerced_actions == 1
        assert info["record"].turbine_mode.name == "OFFLINE"

    def test_reward_identity_with_energy_summary(self):
        env = make_env(short_tide(200), BUNDLE, episode_steps=150, seed=3)
        env.reset(start_index=0)
        rng = np.random.default_rng(0)
        total = 0.0
        done = False
        while not done:
            action = (rng.integers(0, 2), rng.integers(0, 5), rng.integers(0, 17))
            _, reward, done, _ = env.step(tuple(int(x) for x in action))
            total += reward
        net = energy_summary(env.trace)["net_j"]
        assert total / env.reward_scale == pytest.approx(net, rel=1e-9, abs=1e-3)

    def test_env_requires_matching_dt(self):
        with pytest.raises(ValueError):
            make_env(short_tide(dt=360.0), BUNDLE, episode_steps=5, dt_s=180.0)


class TestTrainSmoke:
    def make_factory(self):
        tide = short_tide(80)

        def factory(seed):
            return make_env(tide, BUNDLE, episode_steps=24, seed=seed)

        return factory

    def test_two_update_smoke_and_curve(self):
        config = PPOConfig(rollout_steps=12, minibatch_size=24, epochs=2, hidden=(16, 16))
        policy, curve = train(
            self.make_factory(), n_envs=2, total_steps=48, seed=7, config=config
        )
        assert len(curve) == 2
        assert curve[0].beta == pytest.approx(0.038)
        assert curve[1].beta == pytest.approx(0.0)
        assert all(math.isfinite(p.entropy) for p in curve)

    def test_same_seed_identical_curves_and_params(self):
        config = PPOConfig(rollout_steps=10, minibatch_size=20, epochs=1, hidden=(8, 8))
        p1, c1 = train(self.make_factory(), 2, 40, seed=11, config=config)
        p2, c2 = train(self.make_factory(), 2, 40, seed=11, config=config)
        np.testing.assert_array_equal(p1.flat_params(), p2.flat_params())
        assert [(p.mean_episode_energy_j, p.entropy) for p in c1] == [
            (p.mean_episode_energy_j, p.entropy) for p in c2
        ]

    def test_jobs_fanout_identical_results(self):
        config = PPOConfig(rollout_steps=10, minibatch_size=20, epochs=1, hidden=(8, 8))
        p1, _ = train(self.make_factory(), 2, 40, seed=5, config=config, jobs=1)
        p2, _ = train(self.make_factory(), 2, 40, seed=5, config=config, jobs=2)
        np.testing.assert_array_equal(p1.flat_params(), p2.flat_params())


class TestCheckpoint:
    def test_roundtrip(self, tmp_path):
        policy = new_policy(seed=2)
        norm = NormalizationSpec(-0.5, 14.0)
        path = tmp_path / "policy.npz"
        save_checkpoint(path, policy, norm, 1.23e-10, extra={"note": "test"})
        loaded, norm2, meta = load_checkpoint(path)
        np.testing.assert_array_equal(loaded.flat_params(), policy.flat_params())
        assert norm2 == norm
        assert meta["reward_scale"] == 1.23e-10
        assert meta["note"] == "test"
        obs = np.random.default_rng(0).normal(0, 1, OBS_DIM)
        assert greedy_act(loaded, obs) == greedy_act(policy, obs)
