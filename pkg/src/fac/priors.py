"""Policy, value and success priors: clean oracles, null stand-ins and corruptions.

Every provider is a pure function of ``(state, task)`` and its construction
seed. Corruptions hash the queried state, so a noisy prior is a fixed noisy
model rather than fresh dice on every call.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import RngStream, clamp_action, hash_normals, hash_uniforms
from .envs import Env


def _seed_of(rng) -> int:
    return rng.next_seed() if isinstance(rng, RngStream) else int(rng)


def _check_prob(name: str, p: float, upper_open: bool = False) -> float:
    p = float(p)
    ok = 0.0 <= p < 1.0 if upper_open else 0.0 <= p <= 1.0
    if not ok:
        raise ValueError(f"{name} must lie in [0, 1{')' if upper_open else ']'}, got {p}")
    return p


class PolicyPrior:
    provenance: str = "policy"
    is_null = False

    def query(self, s, task: int = 0) -> np.ndarray:
        raise NotImplementedError

    def __call__(self, s, task: int = 0):
        return self.query(s, task)


class ValuePrior:
    provenance: str = "value"
    is_null = False

    def query(self, s, task: int = 0) -> float:
        raise NotImplementedError

    def __call__(self, s, task: int = 0):
        return self.query(s, task)


class SuccessPrior:
    provenance: str = "success"
    is_null = False

    def query(self, s, task: int = 0) -> int:
        raise NotImplementedError

    def __call__(self, s, task: int = 0):
        return self.query(s, task)


class OraclePolicyPrior(PolicyPrior):
    """Scripted straight-line expert; blind to obstacles."""

    def __init__(self, env: Env):
        self.env = env
        self.provenance = f"oracle-policy({env.spec.name})"

    def query(self, s, task=0):
        return clamp_action(self.env.expert_action(s))


class OracleValuePrior(ValuePrior):
    """``1 - d(s) / d_max`` with d the remaining (geodesic, stage-aware) task distance."""

    def __init__(self, env: Env):
        self.env = env
        self.provenance = f"oracle-value({env.spec.name})"

    def query(self, s, task=0):
        d = self.env.task_distance(s)
        return float(min(1.0, max(0.0, 1.0 - d / self.env.max_task_distance)))


class OracleSuccessPrior(SuccessPrior):
    def __init__(self, env: Env):
        self.env = env
        self.provenance = f"oracle-success({env.spec.name})"

    def query(self, s, task=0):
        return int(self.env.is_success(s))


class NullPolicyPrior(PolicyPrior):
    is_null = True
    provenance = "null-policy"

    def __init__(self, action_dim: int):
        self.action_dim = action_dim

    def query(self, s, task=0):
        return np.zeros(self.action_dim)


class NullValuePrior(ValuePrior):
    is_null = True
    provenance = "null-value"

    def query(self, s, task=0):
        return 0.0


class NullSuccessPrior(SuccessPrior):
    is_null = True
    provenance = "null-success"

    def query(self, s, task=0):
        return 0


def oracle_policy_prior(env: Env) -> PolicyPrior:
    return OraclePolicyPrior(env)


def oracle_value_prior(env: Env) -> ValuePrior:
    return OracleValuePrior(env)


def oracle_success_prior(env: Env) -> SuccessPrior:
    return OracleSuccessPrior(env)


class DiscretizedPolicy(PolicyPrior):
    def __init__(self, base: PolicyPrior, dead_zone: float = 0.1):
        self.base = base
        self.dead_zone = dead_zone
        self.provenance = f"{base.provenance} -> discretize({dead_zone:g})"

    def query(self, s, task=0):
        a = self.base.query(s, task)
        return np.where(np.abs(a) > self.dead_zone, np.sign(a), 0.0)


class UniformNoisePolicy(PolicyPrior):
    def __init__(self, base: PolicyPrior, prob: float, seed: int):
        self.base = base
        self.prob = _check_prob("prob", prob)
        self.seed = seed
        self.provenance = f"{base.provenance} -> uniform({self.prob:g})"

    def is_corrupted(self, s, task=0) -> bool:
        return bool(hash_uniforms(self.seed, "uniform-gate", s, task, 1)[0] < self.prob)

    def query(self, s, task=0):
        a = self.base.query(s, task)
        if self.is_corrupted(s, task):
            return 2.0 * hash_uniforms(self.seed, "uniform-draw", s, task, a.size) - 1.0
        return a


class InvertedPolicy(PolicyPrior):
    def __init__(self, base: PolicyPrior, prob: float, seed: int):
        self.base = base
        self.prob = _check_prob("prob", prob)
        self.seed = seed
        self.provenance = f"{base.provenance} -> invert({self.prob:g})"

    def is_corrupted(self, s, task=0) -> bool:
        return bool(hash_uniforms(self.seed, "invert-gate", s, task, 1)[0] < self.prob)

    def query(self, s, task=0):
        a = self.base.query(s, task)
        return -a if self.is_corrupted(s, task) else a


class CorruptedValue(ValuePrior):
    def __init__(self, base: ValuePrior, noise_std: float, quant_levels: int, seed: int):
        if noise_std < 0:
            raise ValueError("noise_std must be non-negative")
        if quant_levels == 1 or quant_levels < 0:
            raise ValueError("quant_levels must be 0 (off) or at least 2")
        self.base = base
        self.noise_std = float(noise_std)
        self.quant_levels = int(quant_levels)
        self.seed = seed
        self.provenance = f"{base.provenance} -> value-noise({noise_std:g}, q={quant_levels})"

    def unclamped(self, s, task=0) -> float:
        v = self.base.query(s, task)
        if self.noise_std > 0:
            v += self.noise_std * float(hash_normals(self.seed, "value-noise", s, task, 1)[0])
        return v

    def query(self, s, task=0):
        v = min(1.0, max(0.0, self.unclamped(s, task)))
        if self.quant_levels >= 2:
            k = self.quant_levels - 1
            v = round(v * k) / k
        return float(v)


class CorruptedSuccess(SuccessPrior):
    def __init__(self, base: SuccessPrior, fp_rate: float, fn_rate: float, seed: int):
        self.base = base
        self.fp_rate = _check_prob("fp_rate", fp_rate, upper_open=True)
        self.fn_rate = _check_prob("fn_rate", fn_rate, upper_open=True)
        self.seed = seed
        self.provenance = f"{base.provenance} -> flip(fp={fp_rate:g}, fn={fn_rate:g})"

    def query(self, s, task=0):
        label = self.base.query(s, task)
        u = hash_uniforms(self.seed, "success-flip", s, task, 1)[0]
        if label:
            return 0 if u < self.fn_rate else 1
        return 1 if u < self.fp_rate else 0


def discretize_policy(p: PolicyPrior, dead_zone: float = 0.1) -> PolicyPrior:
    return DiscretizedPolicy(p, dead_zone)


def corrupt_policy_uniform(p: PolicyPrior, prob: float, rng) -> PolicyPrior:
    return UniformNoisePolicy(p, prob, _seed_of(rng))


def corrupt_policy_invert(p: PolicyPrior, prob: float, rng) -> PolicyPrior:
    return InvertedPolicy(p, prob, _seed_of(rng))


def corrupt_value(v: ValuePrior, noise_std: float, quant_levels: int, rng) -> ValuePrior:
    return CorruptedValue(v, noise_std, quant_levels, _seed_of(rng))


def corrupt_success(sr: SuccessPrior, fp_rate: float, fn_rate: float, rng) -> SuccessPrior:
    return CorruptedSuccess(sr, fp_rate, fn_rate, _seed_of(rng))


@dataclass
class PriorBundle:
    policy: PolicyPrior
    value: ValuePrior
    success: SuccessPrior
    provenance: list[str] = field(default_factory=list)

    def __post_init__(self):
        if self.policy is None or self.value is None or self.success is None:
            raise ValueError("a prior bundle needs all three providers; use null providers for ablations")
        if not self.provenance:
            self.provenance = [self.policy.provenance, self.value.provenance, self.success.provenance]


def oracle_bundle(env: Env) -> PriorBundle:
    return PriorBundle(OraclePolicyPrior(env), OracleValuePrior(env), OracleSuccessPrior(env))


# corruption kinds accepted in config files, per prior
POLICY_CORRUPTIONS = {"discretize", "uniform", "invert"}
VALUE_CORRUPTIONS = {"noise"}
SUCCESS_CORRUPTIONS = {"flip"}


def build_bundle(env: Env, spec: dict | None = None, seed: int = 0) -> PriorBundle:
    """Construct a bundle from a config ``[priors]`` mapping.

    ``spec`` keys: ``policy``/``value``/``success`` (``"oracle"`` or ``"none"``)
    and ``policy_corruptions``/``value_corruptions``/``success_corruptions``,
    each an ordered list of tables with a ``kind`` key plus parameters.
    """
    spec = spec or {}
    rng = RngStream(seed)
    d = env.spec.action_dim

    policy = OraclePolicyPrior(env) if spec.get("policy", "oracle") == "oracle" else NullPolicyPrior(d)
    for c in spec.get("policy_corruptions", []):
        kind = c["kind"]
        if kind == "discretize":
            policy = DiscretizedPolicy(policy, c.get("dead_zone", 0.1))
        elif kind == "uniform":
            policy = UniformNoisePolicy(policy, c["prob"], rng.next_seed())
        elif kind == "invert":
            policy = InvertedPolicy(policy, c["prob"], rng.next_seed())
        else:
            raise ValueError(f"unknown policy corruption {kind!r}")

    value = OracleValuePrior(env) if spec.get("value", "oracle") == "oracle" else NullValuePrior()
    for c in spec.get("value_corruptions", []):
        if c["kind"] != "noise":
            raise ValueError(f"unknown value corruption {c['kind']!r}")
        value = CorruptedValue(value, c.get("noise_std", 0.0), c.get("quant_levels", 0), rng.next_seed())

    success = OracleSuccessPrior(env) if spec.get("success", "oracle") == "oracle" else NullSuccessPrior()
    for c in spec.get("success_corruptions", []):
        if c["kind"] != "flip":
            raise ValueError(f"unknown success corruption {c['kind']!r}")
        success = CorruptedSuccess(success, c.get("fp_rate", 0.0), c.get("fn_rate", 0.0), rng.next_seed())

    return PriorBundle(policy, value, success)
