"""Actor-critic learning guided by policy, value and success-reward priors."""
from .core import EpisodeRecord, RngStream, Transition, make_rng
from .envs import make_env
from .estimator import FacAgent
from .harness import RunConfig, ablation_suite, load_config, report, run, save_config
from .learner import FacConfig, FacLearner, RunResult, evaluate, train
from .mdp_oracle import TabularMDP, apply_shaping, value_iteration, verify_shaping_theorem
from .priors import PriorBundle, build_bundle, oracle_bundle
from .shaping import RewardConfig, composite_reward, shaping_reward
from .theory import DiscreteDist, mix, tv_sup, verify_bounds, verify_mixing_identity

__version__ = "0.1.0"

__all__ = [
    "EpisodeRecord", "RngStream", "Transition", "make_rng", "make_env", "FacAgent", "RunConfig",
    "ablation_suite", "load_config", "report", "run", "save_config", "FacConfig", "FacLearner",
    "RunResult", "evaluate", "train", "TabularMDP", "apply_shaping", "value_iteration",
    "verify_shaping_theorem", "PriorBundle", "build_bundle", "oracle_bundle", "RewardConfig",
    "composite_reward", "shaping_reward", "DiscreteDist", "mix", "tv_sup", "verify_bounds",
    "verify_mixing_identity",
]
