"""Reward signal built from the value and success priors."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import DEFAULT_GAMMA, check_gamma
from .mdp_oracle import TabularMDP, apply_shaping
from .priors import SuccessPrior, ValuePrior


@dataclass(frozen=True)
class RewardConfig:
    lambda_success: float = 100.0
    gamma: float = DEFAULT_GAMMA

    def __post_init__(self):
        if not self.lambda_success > 0:
            raise ValueError("lambda_success must be positive")
        check_gamma(self.gamma)


def shaping_reward(v: ValuePrior, s, s_next, task: int = 0, gamma: float = DEFAULT_GAMMA) -> float:
    return gamma * v.query(s_next, task) - v.query(s, task)


def composite_reward(sr: SuccessPrior, v: ValuePrior, s, s_next, task: int = 0,
                     cfg: RewardConfig = RewardConfig()) -> tuple[float, bool]:
    """``lambda * M_R(s_next) + F(s, s_next)``; success is judged on the state reached."""
    success = bool(sr.query(s_next, task))
    reward = cfg.lambda_success * float(success) + shaping_reward(v, s, s_next, task, cfg.gamma)
    return reward, success


def tabular_composite_mdp(env, sr: SuccessPrior, v: ValuePrior, cfg: RewardConfig = RewardConfig()):
    """Grid MDP whose reward is ``lambda * M_R`` of the reached state, and the same MDP
    shaped with ``phi = M_V``. Returns ``(base, shaped, phi)``."""
    skeleton = env.to_tabular(cfg.gamma)
    n = skeleton.n_states
    task = env.spec.task_id
    states = [env.tabular_state(i) for i in range(n)]
    success = np.array([float(sr.query(s, task)) for s in states])
    reward = np.broadcast_to(cfg.lambda_success * success[None, None, :], skeleton.transition.shape).copy()
    reward[skeleton.terminal] = 0.0
    base = TabularMDP(skeleton.transition, reward, cfg.gamma, skeleton.terminal)
    phi = np.array([v.query(s, task) for s in states])
    return base, apply_shaping(base, phi), phi
