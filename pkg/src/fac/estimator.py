"""Scikit-learn style wrapper around a single FAC training run."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import nn
from .core import check_states, derive_seed
from .envs import make_env
from .learner import FacConfig, evaluate, train
from .priors import build_bundle


class FacAgent(BaseEstimator):
    """Train a FAC policy on a registered environment.

    ``fit`` takes no data: the environment generates it. ``predict`` maps a
    batch of states to deterministic actor actions and ``score`` is the
    evaluation success rate.
    """

    def __init__(self, env="point-reach", priors=None, config=None, total_frames=30_000, seed=0,
                 eval_interval=1000, eval_episodes=10):
        self.env = env
        self.priors = priors
        self.config = config
        self.total_frames = total_frames
        self.seed = seed
        self.eval_interval = eval_interval
        self.eval_episodes = eval_episodes

    def _fac_config(self) -> FacConfig:
        if self.config is None:
            return FacConfig()
        if isinstance(self.config, FacConfig):
            return self.config
        return FacConfig(**self.config)

    def fit(self, X=None, y=None):
        if self.total_frames < 1:
            raise ValueError("total_frames must be positive")
        env = make_env(self.env, self.seed)
        bundle = build_bundle(env, self.priors or {}, derive_seed(self.seed, "priors"))
        result = train(env, bundle, self._fac_config(), self.seed, self.total_frames,
                       self.eval_interval, self.eval_episodes)
        self.actor_ = result.actor
        self.history_ = result.records
        self.state_dim_ = env.spec.state_dim
        self.action_dim_ = env.spec.action_dim
        return self

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self, "actor_")
        X = check_states(X, self.state_dim_)
        return np.clip(nn.forward(self.actor_, X)[0], -1.0, 1.0)

    def score(self, X=None, y=None, n_episodes=None) -> float:
        check_is_fitted(self, "actor_")
        env = make_env(self.env, self.seed)
        return evaluate(self.actor_, env, n_episodes or self.eval_episodes, self.seed)
