import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fac import nn
from fac.core import EpisodeRecord, Transition, make_rng
from fac.envs import make_env
from fac.learner import (FacConfig, FacLearner, NStepBatch, ReplayBuffer, SuccessBuffer, evaluate,
                         explore_std, train)
from fac.priors import build_bundle, corrupt_success, oracle_bundle, oracle_policy_prior


def constant_net(in_dim, value):
    return nn.MlpParams([np.zeros((in_dim, 1))], [np.array([float(value)])])


def linear_net(w, b=0.0):
    w = np.asarray(w, float)
    return nn.MlpParams([w[:, None]], [np.array([float(b)])])


def episode(length, sd=2, ad=2, success=False, start=0.0, reward=None):
    ts = []
    for t in range(length):
        last = t == length - 1
        s = np.full(sd, start + t)
        ts.append(Transition(s, np.full(ad, 0.1 * t), reward if reward is not None else start + t,
                             s + 1, last, success and last, success and last, np.zeros(ad)))
    return EpisodeRecord(ts)


def small_cfg(**kw):
    base = dict(batch_size=8, replay_capacity=1000, hidden=8, seed_frames=0)
    base.update(kw)
    return FacConfig(**base)


@pytest.mark.parametrize("frame, expected", [(0, 1.0), (10_000, 0.55), (20_000, 0.1), (90_000, 0.1)])
def test_explore_std_schedule(frame, expected):
    assert explore_std(frame, FacConfig()) == pytest.approx(expected)


def test_robot_preset_constant_std():
    cfg = FacConfig.robot()
    assert explore_std(0, cfg) == 0.1 and explore_std(10**6, cfg) == 0.1
    assert cfg.utd_ratio == 20 and cfg.better_action_mode and cfg.warmup_trajectories == 10


@pytest.mark.parametrize("kw", [dict(alpha=-1), dict(sigma_hat=0), dict(nstep=0), dict(target_tau=0),
                                dict(target_tau=1.5), dict(batch_size=512, replay_capacity=100)])
def test_config_invariants(kw):
    with pytest.raises(ValueError):
        FacConfig(**kw)


def test_nstep_no_bootstrap_on_terminal():
    learner = FacLearner(2, 2, small_cfg(), make_rng(0))
    batch = NStepBatch(np.zeros((1, 2)), np.zeros((1, 2)), np.zeros((1, 2)), np.array([[0.0, 0.0, 1.0]]),
                       np.array([3]), np.zeros((1, 2)), np.array([True]))
    assert learner.nstep_target(batch, make_rng(1))[0] == pytest.approx(0.9801)


def test_one_step_bootstrap_and_min_over_targets():
    learner = FacLearner(2, 2, small_cfg(), make_rng(0))
    learner.targets = [constant_net(4, 5.0), constant_net(4, 7.0)]
    batch = NStepBatch(np.zeros((1, 2)), np.zeros((1, 2)), np.zeros((1, 2)), np.zeros((1, 1)),
                       np.array([1]), np.zeros((1, 2)), np.array([False]))
    assert learner.nstep_target(batch, make_rng(1))[0] == pytest.approx(4.95)
    learner.targets = [constant_net(4, 9.0), constant_net(4, 5.0)]
    assert learner.nstep_target(batch, make_rng(1))[0] == pytest.approx(4.95)


def test_nstep_target_matches_scalar_formula():
    cfg = small_cfg()
    learner = FacLearner(3, 2, cfg, make_rng(2))
    learner.frame = 5000
    rng = make_rng(3)
    B, n = 16, 3
    lengths = rng.integers(n, size=B) + 1
    rewards = rng.normal(size=(B, n)) * (np.arange(n)[None, :] < lengths[:, None])
    terminal = rng.uniform(size=B) < 0.3
    boot = rng.normal(size=(B, 3))
    batch = NStepBatch(rng.normal(size=(B, 3)), rng.uniform(-1, 1, (B, 2)), np.zeros((B, 2)), rewards,
                       lengths, boot, terminal)
    y = learner.nstep_target(batch, make_rng(4))

    noise_rng = make_rng(4)
    std = explore_std(learner.frame, cfg)
    noise = np.clip(std * noise_rng.normal(size=(B, 2)), -cfg.noise_clip, cfg.noise_clip)
    for i in range(B):
        ret = sum(cfg.gamma ** j * rewards[i, j] for j in range(lengths[i]))
        if not terminal[i]:
            a = np.clip(nn.forward(learner.actor, boot[i])[0] + noise[i], -1, 1)
            x = np.concatenate([boot[i], a])
            q = min(nn.forward(t, x)[0][0] for t in learner.targets)
            ret += cfg.gamma ** lengths[i] * q
        assert y[i] == pytest.approx(ret, abs=1e-12)


def test_malformed_batch_rejected():
    with pytest.raises(ValueError, match="malformed"):
        NStepBatch(np.zeros((1, 2)), np.zeros((1, 2)), np.zeros((1, 2)), np.array([[0.0, 1.0]]),
                   np.array([1]), np.zeros((1, 2)), np.array([False]))
    with pytest.raises(ValueError, match="malformed"):
        NStepBatch(np.zeros((2, 2)), np.zeros((1, 2)), np.zeros((1, 2)), np.zeros((1, 2)),
                   np.array([1]), np.zeros((1, 2)), np.array([False]))


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(1, 7), min_size=1, max_size=12), st.integers(1, 5), st.integers(5, 40))
def test_nstep_never_crosses_episode_boundaries(lengths, n, capacity):
    lengths = [min(L, capacity) for L in lengths]
    buf = ReplayBuffer(capacity, 2, 2)
    for k, L in enumerate(lengths):
        buf.add_episode(episode(L, start=1000.0 * k))
    idx = np.arange(buf.size) if buf.size < capacity else (buf.ptr + np.arange(buf.size)) % capacity
    batch = buf.nstep(idx, n)
    for row in range(len(idx)):
        first = batch.rewards[row, 0]
        k = int(first // 1000)
        t = first - 1000 * k
        remaining = lengths[k] - int(t)
        assert batch.lengths[row] == min(n, remaining)
        assert np.array_equal(batch.rewards[row, :batch.lengths[row]], first + np.arange(batch.lengths[row]))
        assert np.all(batch.rewards[row, batch.lengths[row]:] == 0)


def test_replay_capacity_bound():
    buf = ReplayBuffer(10, 2, 2)
    for _ in range(5):
        buf.add_episode(episode(4))
    assert len(buf) == 10
    with pytest.raises(ValueError):
        buf.add_episode(episode(11))


def test_critic_underfilled():
    learner = FacLearner(2, 2, small_cfg(), make_rng(0))
    learner.commit_episode(episode(3))
    batch = learner.replay.nstep(np.arange(3), 3)
    with pytest.raises(RuntimeError, match="replay underfilled"):
        learner.critic_update(batch, make_rng(0))


def test_perfect_critic_zero_loss():
    learner = FacLearner(2, 2, small_cfg(), make_rng(0))
    learner.critics = [constant_net(4, 0.0), constant_net(4, 0.0)]
    learner.critic_opts = [nn.init_adam(c) for c in learner.critics]
    learner.targets = [c.copy() for c in learner.critics]
    for _ in range(4):
        learner.commit_episode(episode(3, success=True, reward=0.0))
    batch = learner.replay.nstep(np.array([2, 5, 8, 11] * 2), 3)
    assert learner.critic_update(batch, make_rng(1)) == 0.0
    assert all(np.all(a == 0) for c in learner.critics for a in c.arrays())


def test_critic_loss_matches_independent_computation():
    learner = FacLearner(2, 2, small_cfg(), make_rng(0))
    for _ in range(5):
        learner.commit_episode(episode(4))
    batch = learner.replay.nstep(learner.replay.sample_idx(make_rng(1), 8), 3)
    y = learner.nstep_target(batch, make_rng(2))
    x = np.concatenate([batch.states, batch.actions], axis=1)
    expected = np.mean([np.mean((nn.forward(c, x)[0][:, 0] - y) ** 2) for c in learner.critics])
    assert learner.critic_update(batch, make_rng(2)) == pytest.approx(expected, rel=1e-12)


def test_critic_learns_bandit_values():
    cfg = small_cfg(batch_size=64, hidden=32, lr=3e-3, target_tau=1.0)
    learner = FacLearner(1, 1, cfg, make_rng(5))
    values = {(0.0, -0.5): 1.0, (0.0, 0.5): -1.0, (1.0, -0.5): 0.5, (1.0, 0.5): 2.0}
    for (s, a), r in values.items():
        for _ in range(20):
            t = Transition(np.array([s]), np.array([a]), r, np.array([s]), True, True, True, np.zeros(1))
            learner.commit_episode(EpisodeRecord([t]))
    rng = make_rng(6)
    for _ in range(2000):
        batch = learner.replay.nstep(learner.replay.sample_idx(rng, cfg.batch_size), 1)
        learner.critic_update(batch, rng)
    for (s, a), r in values.items():
        x = np.array([s, a])
        for c in learner.critics:
            assert nn.forward(c, x)[0][0] == pytest.approx(r, abs=0.01)


def test_reg_term_example():
    learner = FacLearner(2, 2, small_cfg(sigma_hat=0.1), make_rng(0))
    s = np.zeros((1, 2))
    a = learner.act(s)
    terms, _ = learner.actor_losses(s, a + np.array([[0.1, 0.1]]), None)
    assert terms["reg"] == pytest.approx(1.0)
    terms, _ = learner.actor_losses(s, a, None)
    assert terms["reg"] == 0.0
    assert terms["succ"] == 0.0


def test_actor_total_combines_terms():
    learner = FacLearner(2, 2, small_cfg(alpha=0.5, beta=2.0), make_rng(0))
    rng = make_rng(1)
    s = rng.normal(size=(6, 2))
    succ = (rng.normal(size=(4, 2)), rng.uniform(-1, 1, (4, 2)))
    terms, _ = learner.actor_losses(s, rng.uniform(-1, 1, (6, 2)), succ)
    assert terms["total"] == pytest.approx(terms["pg"] + 0.5 * terms["succ"] + 2.0 * terms["reg"])
    assert terms["pg"] == pytest.approx(-np.mean(learner.q_min(learner.critics, s, learner.act(s))))


def test_disabled_terms_are_exactly_zero():
    learner = FacLearner(2, 2, small_cfg(), make_rng(0))
    rng = make_rng(1)
    s = rng.normal(size=(6, 2))
    succ = (rng.normal(size=(4, 2)), rng.uniform(-1, 1, (4, 2)))
    terms, _ = learner.actor_losses(s, rng.uniform(-1, 1, (6, 2)), succ, use_reg=False, use_succ=False)
    assert terms["reg"] == 0.0 and terms["succ"] == 0.0 and terms["total"] == terms["pg"]


def test_actor_gradient_matches_finite_differences():
    cfg = small_cfg(alpha=0.7, beta=1.3, sigma_hat=0.5)
    learner = FacLearner(3, 2, cfg, make_rng(11))
    rng = make_rng(12)
    s = rng.normal(size=(5, 3))
    prior = rng.uniform(-1, 1, (5, 2))
    succ = (rng.normal(size=(4, 3)), rng.uniform(-1, 1, (4, 2)))
    _, grads = learner.actor_losses(s, prior, succ)
    h = 1e-6
    for g, arr in zip(grads.arrays(), learner.actor.arrays()):
        num = np.zeros_like(arr)
        for i in np.ndindex(arr.shape):
            old = arr[i]
            arr[i] = old + h
            up = learner.actor_losses(s, prior, succ)[0]["total"]
            arr[i] = old - h
            down = learner.actor_losses(s, prior, succ)[0]["total"]
            arr[i] = old
            num[i] = (up - down) / (2 * h)
        err = np.max(np.abs(g - num)) / max(1e-8, np.max(np.abs(g)) + np.max(np.abs(num)))
        assert err <= 1e-3


def test_success_buffer():
    buf = SuccessBuffer(2)
    assert buf.sample(make_rng(0), 4) is None
    with pytest.raises(ValueError):
        buf.add(episode(3, success=False))
    for k in range(3):
        buf.add(episode(3, success=True, start=10.0 * k))
    assert len(buf) == 2
    states, _ = buf.sample(make_rng(0), 50)
    assert states.min() >= 10.0


def test_commit_episode_routes_successes():
    learner = FacLearner(2, 2, small_cfg(), make_rng(0))
    learner.commit_episode(episode(3, success=True))
    learner.commit_episode(episode(3, success=False))
    assert len(learner.success) == 1 and len(learner.replay) == 6
    with pytest.raises(ValueError, match="incomplete"):
        learner.commit_episode(EpisodeRecord(episode(3).transitions[:2]))


def test_pathological_false_negatives_keep_success_buffer_empty():
    env = make_env("point-reach")
    bundle = oracle_bundle(env)
    # rates must stay below one; this leaves a negligible chance of a positive
    bundle.success = corrupt_success(bundle.success, 0.0, 1.0 - 1e-12, 0)
    cfg = FacConfig(seed_frames=10**6)
    result = train(env, bundle, cfg, 0, 3000, eval_interval=10**6)
    learner = result.learner
    assert learner.episodes_seen >= 100
    assert len(learner.success) == 0


def test_select_action_modes():
    cfg = small_cfg(seed_frames=10)
    learner = FacLearner(2, 2, cfg, make_rng(0))
    s = np.array([0.3, 0.4])
    a, src = learner.select_action(s, np.array([0.5, -0.5]), make_rng(1))
    assert src == "prior" and np.array_equal(a, [0.5, -0.5])
    a, src = learner.select_action(s, None, make_rng(1), eval_mode=True)
    assert src == "actor" and np.array_equal(a, learner.act(s))
    learner.frame = 10
    a, src = learner.select_action(s, np.array([0.5, -0.5]), make_rng(1))
    assert src == "actor" and np.all(np.abs(a - learner.act(s)) <= cfg.explore_clip + 1e-12)


def test_better_action_picks_prior_when_critics_prefer_it():
    learner = FacLearner(2, 2, small_cfg(better_action_mode=True), make_rng(0))
    learner.frame = 1
    # both critics score (s, a) by 10 * a_x; the actor is forced to a_x = -1
    learner.critics = [linear_net([0, 0, 10, 0]), linear_net([0, 0, 10, 0], 1.0)]
    learner.actor = nn.MlpParams([np.zeros((2, 2))], [np.array([-50.0, 0.0])], "tanh")
    a, src = learner.select_action(np.zeros(2), np.array([1.0, 0.0]), make_rng(1))
    assert src == "prior" and np.array_equal(a, [1.0, 0.0])
    a, src = learner.select_action(np.zeros(2), np.array([-1.0, 0.0]), make_rng(1))
    assert src == "actor"


def test_evaluate_expert_and_range():
    env = make_env("point-reach")
    assert evaluate(oracle_policy_prior(env), env, 10, seed=3) == 1.0
    learner = FacLearner(4, 2, FacConfig(), make_rng(0))
    rate = evaluate(learner.actor, env, 10, seed=3)
    assert 0.0 <= rate <= 1.0
    assert evaluate(learner.actor, env, 10, seed=3) == rate


def test_evaluate_uses_same_layouts():
    env = make_env("point-reach")
    seen = []

    def policy(s):
        seen.append(s.copy())
        return np.zeros(2)

    evaluate(policy, env, 3, seed=1)
    first = [x for x in seen]
    seen.clear()
    evaluate(policy, env, 3, seed=1)
    assert all(np.array_equal(a, b) for a, b in zip(first, seen))


def _short_run(seed=0, **kw):
    env = make_env("point-reach")
    cfg = FacConfig(batch_size=32, hidden=16, seed_frames=300, **kw)
    return train(env, build_bundle(env, {}, seed), cfg, seed, 1200, eval_interval=400, eval_episodes=2)


def test_training_is_deterministic():
    a, b = _short_run(), _short_run()
    assert a.records == b.records
    assert all(np.array_equal(x, y) for x, y in zip(a.actor.arrays(), b.actor.arrays()))


def test_ablation_switch_zeroes_reg_every_step():
    result = _short_run(use_policy_prior=False, use_success_buffer=False)
    assert all(r["reg_term"] == 0.0 and r["succ_term"] == 0.0 for r in result.records)
    assert all(src == "actor" for _, src in result.sources)
