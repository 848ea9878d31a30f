"""Foundation-guided actor-critic: buffers, losses, action selection and the training loop."""
from __future__ import annotations

import dataclasses
import logging
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .core import EpisodeRecord, RngStream, Transition, clamp_action, derive_seed, make_rng
from .envs import Env, make_env
from .priors import PolicyPrior, PriorBundle
from .shaping import RewardConfig, composite_reward

log = logging.getLogger(__name__)


@dataclass
class FacConfig:
    alpha: float = 1.0  # success-imitation weight
    beta: float = 1.0  # prior-regularization weight
    sigma_hat: float = 0.1
    std_start: float = 1.0
    std_end: float = 0.1
    std_decay_frames: int = 20_000
    std_constant: float | None = None  # fixed exploration std (robot preset)
    noise_clip: float = 0.3
    explore_clip: float | None = 0.3
    nstep: int = 3
    gamma: float = 0.99
    lambda_success: float = 100.0
    batch_size: int = 256
    replay_capacity: int = 100_000
    success_capacity: int = 200
    utd_ratio: int = 1
    seed_frames: int = 4000
    warmup_trajectories: int | None = None  # overrides seed_frames when set
    target_tau: float = 0.01
    better_action_mode: bool = False
    layer_norm: bool = False
    hidden: int = 64
    lr: float = 1e-3
    use_policy_prior: bool = True
    use_value_prior: bool = True
    use_success_reward: bool = True
    use_success_buffer: bool = True

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("alpha and beta must be non-negative")
        if self.sigma_hat <= 0:
            raise ValueError("sigma_hat must be positive")
        if self.nstep < 1:
            raise ValueError("nstep must be at least 1")
        if not (0.0 < self.target_tau <= 1.0):
            raise ValueError("target_tau must lie in (0, 1]")
        if self.replay_capacity < self.batch_size:
            raise ValueError("replay_capacity must be at least batch_size")
        if self.utd_ratio < 1:
            raise ValueError("utd_ratio must be at least 1")
        if self.lambda_success <= 0:
            raise ValueError("lambda_success must be positive")

    @classmethod
    def sim(cls, **overrides) -> "FacConfig":
        return cls(**overrides)

    @classmethod
    def robot(cls, **overrides) -> "FacConfig":
        base = dict(std_constant=0.1, warmup_trajectories=10, utd_ratio=20,
                    better_action_mode=True, layer_norm=True)
        base.update(overrides)
        return cls(**base)

    def replace(self, **changes) -> "FacConfig":
        return dataclasses.replace(self, **changes)


def explore_std(frame: int, cfg: FacConfig) -> float:
    if cfg.std_constant is not None:
        return cfg.std_constant
    if frame >= cfg.std_decay_frames:
        return cfg.std_end
    mix = frame / cfg.std_decay_frames
    return (1.0 - mix) * cfg.std_start + mix * cfg.std_end


@dataclass
class NStepBatch:
    states: np.ndarray  # (B, ds)
    actions: np.ndarray  # (B, da)
    prior_actions: np.ndarray  # (B, da)
    rewards: np.ndarray  # (B, n), zero beyond the sequence length
    lengths: np.ndarray  # (B,) number of real steps k <= n
    boot_states: np.ndarray  # (B, ds) state after the last real step
    terminal: np.ndarray  # (B,) sequence ended in a success termination

    def __post_init__(self):
        B, n = self.rewards.shape
        if not (self.states.shape[0] == self.actions.shape[0] == self.lengths.shape[0]
                == self.boot_states.shape[0] == self.terminal.shape[0] == B):
            raise ValueError("malformed n-step batch: inconsistent batch sizes")
        if np.any(self.lengths < 1) or np.any(self.lengths > n):
            raise ValueError("malformed n-step batch: lengths outside [1, n]")
        pad = np.arange(n)[None, :] >= self.lengths[:, None]
        if np.any(self.rewards[pad] != 0):
            raise ValueError("malformed n-step batch: rewards beyond the sequence end")


class ReplayBuffer:
    """Ring buffer of whole episodes stored contiguously.

    Only complete episodes are written, so walking forward from any slot until
    a ``done`` flag never reads into a different or half-overwritten episode.
    """

    def __init__(self, capacity: int, state_dim: int, action_dim: int):
        self.capacity = capacity
        self.states = np.zeros((capacity, state_dim))
        self.next_states = np.zeros((capacity, state_dim))
        self.actions = np.zeros((capacity, action_dim))
        self.prior_actions = np.zeros((capacity, action_dim))
        self.rewards = np.zeros(capacity)
        self.dones = np.zeros(capacity, bool)
        self.terminals = np.zeros(capacity, bool)
        self.ptr = 0
        self.size = 0

    def __len__(self) -> int:
        return self.size

    def add_episode(self, ep: EpisodeRecord) -> None:
        if len(ep) > self.capacity:
            raise ValueError("episode longer than replay capacity")
        for t in ep.transitions:
            i = self.ptr
            self.states[i] = t.state
            self.next_states[i] = t.next_state
            self.actions[i] = t.action
            self.prior_actions[i] = t.prior_action if t.prior_action is not None else 0.0
            self.rewards[i] = t.reward
            self.dones[i] = t.done
            self.terminals[i] = t.prior_success
            self.ptr = (i + 1) % self.capacity
            self.size = min(self.size + 1, self.capacity)

    def sample_idx(self, rng: RngStream, batch_size: int) -> np.ndarray:
        idx = rng.integers(self.size, size=batch_size)
        if self.size < self.capacity:
            return idx
        return (self.ptr + idx) % self.capacity

    def nstep(self, idx: np.ndarray, n: int) -> NStepBatch:
        B = idx.shape[0]
        rewards = np.zeros((B, n))
        lengths = np.zeros(B, np.int64)
        last = idx.copy()
        alive = np.ones(B, bool)
        for j in range(n):
            cur = (idx + j) % self.capacity
            rewards[alive, j] = self.rewards[cur[alive]]
            lengths[alive] += 1
            last[alive] = cur[alive]
            alive &= ~self.dones[cur]
        return NStepBatch(self.states[idx], self.actions[idx], self.prior_actions[idx], rewards, lengths,
                          self.next_states[last], self.terminals[last])


class SuccessBuffer:
    def __init__(self, capacity: int):
        self.episodes: deque[EpisodeRecord] = deque(maxlen=capacity)
        self._flat = None

    def __len__(self) -> int:
        return len(self.episodes)

    def add(self, ep: EpisodeRecord) -> None:
        if not ep.prior_success:
            raise ValueError("only episodes judged successful may enter the success buffer")
        self.episodes.append(ep)
        self._flat = None

    @property
    def n_transitions(self) -> int:
        return sum(len(ep) for ep in self.episodes)

    def sample(self, rng: RngStream, batch_size: int) -> tuple[np.ndarray, np.ndarray] | None:
        if not self.episodes:
            return None
        if self._flat is None:
            ts = [t for ep in self.episodes for t in ep.transitions]
            self._flat = (np.array([t.state for t in ts]), np.array([t.action for t in ts]))
        states, actions = self._flat
        idx = rng.integers(states.shape[0], size=batch_size)
        return states[idx], actions[idx]


class FacLearner:
    def __init__(self, state_dim: int, action_dim: int, cfg: FacConfig, rng: RngStream):
        self.cfg = cfg
        self.state_dim = state_dim
        self.action_dim = action_dim
        h = cfg.hidden
        self.actor = nn.init_mlp(rng, [state_dim, h, h, action_dim], "tanh", cfg.layer_norm)
        self.critics = [nn.init_mlp(rng, [state_dim + action_dim, h, h, 1], "identity", cfg.layer_norm)
                        for _ in range(2)]
        self.targets = [c.copy() for c in self.critics]
        self.actor_opt = nn.init_adam(self.actor, cfg.lr)
        self.critic_opts = [nn.init_adam(c, cfg.lr) for c in self.critics]
        self.replay = ReplayBuffer(cfg.replay_capacity, state_dim, action_dim)
        self.success = SuccessBuffer(cfg.success_capacity)
        self.frame = 0
        self.episodes_seen = 0

    # acting
    def act(self, s) -> np.ndarray:
        a, _ = nn.forward(self.actor, s)
        return a

    def q_min(self, critics, states, actions) -> np.ndarray:
        x = np.concatenate([states, actions], axis=1)
        return np.minimum(nn.forward(critics[0], x)[0][:, 0], nn.forward(critics[1], x)[0][:, 0])

    def in_warmup(self) -> bool:
        if self.cfg.warmup_trajectories is not None:
            return self.episodes_seen < self.cfg.warmup_trajectories
        return self.frame < self.cfg.seed_frames

    def _noise(self, rng: RngStream, std: float, clip: float | None, size) -> np.ndarray:
        eps = std * rng.normal(size=size)
        return eps if clip is None else np.clip(eps, -clip, clip)

    def select_action(self, s, prior_action, rng: RngStream, eval_mode: bool = False) -> tuple[np.ndarray, str]:
        """Action for state ``s`` and its source, ``"actor"`` or ``"prior"``.

        ``prior_action`` is ``M_pi(s)`` or ``None`` when the policy prior is off.
        """
        if eval_mode:
            return clamp_action(self.act(s)), "actor"
        if self.in_warmup():
            if prior_action is not None:
                return clamp_action(prior_action), "prior"
            return rng.uniform(-1.0, 1.0, size=self.action_dim), "actor"
        std = explore_std(self.frame, self.cfg)
        a1 = clamp_action(self.act(s) + self._noise(rng, std, self.cfg.explore_clip, self.action_dim))
        if self.cfg.better_action_mode and prior_action is not None:
            a2 = clamp_action(prior_action)
            q = self.q_min(self.critics, np.stack([s, s]), np.stack([a1, a2]))
            if q[1] > q[0]:
                return a2, "prior"
        return a1, "actor"

    # learning
    def nstep_target(self, batch: NStepBatch, rng: RngStream) -> np.ndarray:
        g = self.cfg.gamma
        n = batch.rewards.shape[1]
        ret = batch.rewards @ (g ** np.arange(n))
        std = explore_std(self.frame, self.cfg)
        a_next = self.act(batch.boot_states)
        a_next = np.clip(a_next + self._noise(rng, std, self.cfg.noise_clip, a_next.shape), -1.0, 1.0)
        boot = self.q_min(self.targets, batch.boot_states, a_next)
        discount = np.where(batch.terminal, 0.0, g ** batch.lengths.astype(np.float64))
        return ret + discount * boot

    def critic_update(self, batch: NStepBatch, rng: RngStream) -> float:
        if len(self.replay) < self.cfg.batch_size:
            raise RuntimeError("replay underfilled")
        y = self.nstep_target(batch, rng)
        x = np.concatenate([batch.states, batch.actions], axis=1)
        B = x.shape[0]
        losses = []
        for critic, opt in zip(self.critics, self.critic_opts):
            q, cache = nn.forward(critic, x)
            resid = q[:, 0] - y
            losses.append(float(np.mean(resid ** 2)))
            grads, _ = nn.backward(critic, cache, (2.0 / B) * resid[:, None])
            nn.adam_step(opt, critic, grads)
        for target, critic in zip(self.targets, self.critics):
            nn.polyak_update(target, critic, self.cfg.target_tau)
        return 0.5 * (losses[0] + losses[1])

    def actor_losses(self, states, prior_actions, succ_batch, use_reg: bool = True, use_succ: bool = True):
        """Actor loss terms and the parameter gradient of their weighted sum."""
        cfg = self.cfg
        B = states.shape[0]
        inv_var = 1.0 / (cfg.sigma_hat ** 2)
        a, a_cache = nn.forward(self.actor, states)
        x = np.concatenate([states, a], axis=1)
        qs, caches = zip(*(nn.forward(c, x) for c in self.critics))
        q1, q2 = qs[0][:, 0], qs[1][:, 0]
        pick_first = q1 <= q2
        pg = -float(np.mean(np.where(pick_first, q1, q2)))
        dadx = np.zeros_like(a)
        for k, (critic, cache) in enumerate(zip(self.critics, caches)):
            mask = pick_first if k == 0 else ~pick_first
            _, dx = nn.backward(critic, cache, np.where(mask, -1.0 / B, 0.0)[:, None])
            dadx += dx[:, self.state_dim:]

        reg = 0.0
        if use_reg and cfg.beta > 0:
            diff = a - prior_actions
            reg = 0.5 * inv_var * float(np.mean(np.sum(diff ** 2, axis=1)))
            dadx += cfg.beta * inv_var * diff / B
        grads, _ = nn.backward(self.actor, a_cache, dadx)

        succ = 0.0
        if use_succ and succ_batch is not None and cfg.alpha > 0:
            s_states, s_actions = succ_batch
            a_s, s_cache = nn.forward(self.actor, s_states)
            diff = a_s - s_actions
            succ = 0.5 * inv_var * float(np.mean(np.sum(diff ** 2, axis=1)))
            g_s, _ = nn.backward(self.actor, s_cache, cfg.alpha * inv_var * diff / s_states.shape[0])
            grads = nn.add_grads(grads, g_s)
        total = pg + cfg.alpha * succ + cfg.beta * reg
        return {"total": total, "pg": pg, "succ": succ, "reg": reg}, grads

    def actor_update(self, batch: NStepBatch, succ_batch=None, use_reg: bool | None = None,
                     use_succ: bool | None = None) -> dict:
        use_reg = self.cfg.use_policy_prior if use_reg is None else use_reg
        use_succ = self.cfg.use_success_buffer if use_succ is None else use_succ
        terms, grads = self.actor_losses(batch.states, batch.prior_actions, succ_batch, use_reg, use_succ)
        nn.adam_step(self.actor_opt, self.actor, grads)
        return terms

    def commit_episode(self, ep: EpisodeRecord) -> None:
        ep.validate()
        self.replay.add_episode(ep)
        if ep.prior_success:
            self.success.add(ep)
        self.episodes_seen += 1

    def update(self, rng: RngStream) -> dict:
        idx = self.replay.sample_idx(rng, self.cfg.batch_size)
        batch = self.replay.nstep(idx, self.cfg.nstep)
        critic_loss = self.critic_update(batch, rng)
        succ_batch = self.success.sample(rng, self.cfg.batch_size) if self.cfg.use_success_buffer else None
        terms = self.actor_update(batch, succ_batch)
        terms["critic"] = critic_loss
        return terms


def evaluate(actor, env: Env, n_episodes: int = 10, seed: int = 0) -> float:
    """Success rate of deterministic rollouts; layouts depend only on ``seed``.

    ``actor`` is either parameters of an actor network or any callable state -> action.
    """
    if n_episodes < 1:
        raise ValueError("n_episodes must be at least 1")
    policy = (lambda s: nn.forward(actor, s)[0]) if isinstance(actor, nn.MlpParams) else actor
    rng = make_rng(derive_seed(seed, "evaluation"))
    wins = 0
    for _ in range(n_episodes):
        s = env.reset(rng)
        done = success = False
        while not done:
            s, success, done = env.step(clamp_action(policy(s)))
        wins += success
    return wins / n_episodes


@dataclass
class RunResult:
    seed: int
    records: list[dict] = field(default_factory=list)
    actor: nn.MlpParams | None = None
    config_hash: str = ""
    sources: list[tuple[int, str]] = field(default_factory=list)  # (frame, source) after warm-up
    learner: "FacLearner | None" = None
    checkpoint: str | None = None

    def final_success(self) -> float:
        return self.records[-1]["success_rate"] if self.records else 0.0


RECORD_FIELDS = ("frame", "success_rate", "actor_loss", "critic_loss", "reg_term", "succ_term",
                 "actor_action_fraction")


def train(env: Env, bundle: PriorBundle, cfg: FacConfig, seed: int, total_frames: int,
          eval_interval: int = 1000, eval_episodes: int = 10, on_record=None,
          stop_at_success: float | None = None) -> RunResult:
    """Run FAC for ``total_frames`` environment steps.

    ``on_record`` is called with each evaluation record as it is produced.
    ``stop_at_success`` ends the run early once an evaluation reaches that rate.
    """
    root = make_rng(seed)
    env_rng, act_rng, upd_rng = root.spawn("env"), root.spawn("act"), root.spawn("update")
    learner = FacLearner(env.spec.state_dim, env.spec.action_dim, cfg, root.spawn("init"))
    eval_env = make_env(env.spec.name, seed)
    eval_seed = derive_seed(seed, "eval")
    reward_cfg = RewardConfig(cfg.lambda_success, cfg.gamma)
    task = env.spec.task_id
    value = bundle.value if cfg.use_value_prior else None
    # without the success prior nothing judges success: no bonus, no success
    # termination and no success-buffer entries
    success_prior = bundle.success if cfg.use_success_reward else None

    result = RunResult(seed)
    window = {"actor": [], "critic": [], "reg": [], "succ": [], "src": []}
    s = env.reset(env_rng)
    episode = EpisodeRecord(seed=seed, task=task)
    while learner.frame < total_frames:
        prior_a = bundle.policy.query(s, task) if cfg.use_policy_prior else None
        warm = learner.in_warmup()
        a, source = learner.select_action(s, prior_a, act_rng)
        s_next, true_success, env_done = env.step(a)

        prior_success = bool(success_prior.query(s_next, task)) if success_prior is not None else False
        if success_prior is not None and value is not None:
            reward, _ = composite_reward(success_prior, value, s, s_next, task, reward_cfg)
        elif success_prior is not None:
            reward = cfg.lambda_success * float(prior_success)
        elif value is not None:
            reward = cfg.gamma * value.query(s_next, task) - value.query(s, task)
        else:
            reward = 0.0
        done = env_done or prior_success
        episode.transitions.append(Transition(s, a, reward, s_next, done, prior_success, true_success,
                                              prior_a, source))
        learner.frame += 1
        if not warm:
            window["src"].append(source)
            result.sources.append((learner.frame, source))
        if done:
            learner.commit_episode(episode)
            episode = EpisodeRecord(seed=seed, task=task)
            s = env.reset(env_rng)
        else:
            s = s_next

        if not learner.in_warmup() and len(learner.replay) >= cfg.batch_size:
            for _ in range(cfg.utd_ratio):
                terms = learner.update(upd_rng)
                window["actor"].append(terms["total"])
                window["critic"].append(terms["critic"])
                window["reg"].append(terms["reg"])
                window["succ"].append(terms["succ"])

        if learner.frame % eval_interval == 0:
            rate = evaluate(learner.actor, eval_env, eval_episodes, eval_seed)
            src = window["src"]
            rec = {
                "frame": learner.frame,
                "success_rate": rate,
                "actor_loss": float(np.mean(window["actor"])) if window["actor"] else 0.0,
                "critic_loss": float(np.mean(window["critic"])) if window["critic"] else 0.0,
                "reg_term": float(np.mean(window["reg"])) if window["reg"] else 0.0,
                "succ_term": float(np.mean(window["succ"])) if window["succ"] else 0.0,
                "actor_action_fraction": (sum(x == "actor" for x in src) / len(src)) if src else 0.0,
            }
            result.records.append(rec)
            for k in window:
                window[k] = []
            log.debug("seed %d frame %d success %.2f", seed, learner.frame, rate)
            if on_record is not None:
                on_record(rec)
            if stop_at_success is not None and rate >= stop_at_success:
                break
    result.actor = learner.actor
    result.learner = learner
    return result
