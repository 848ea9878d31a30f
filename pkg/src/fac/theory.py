"""Checks for the prior-mixed policy and its distance bounds on finite distributions.

Distances use the sup-deviation ``max_i |p_i - q_i|`` throughout, which is the
convention the mixing bounds are stated in. ``tv_half_l1`` is the textbook
total variation and is kept separate.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import RngStream

NORM_TOL = 1e-12


@dataclass(frozen=True)
class DiscreteDist:
    probs: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=np.float64)
        if p.ndim != 1 or p.size == 0:
            raise ValueError("probs must be a non-empty vector")
        if not np.all(np.isfinite(p)) or np.any(p < 0):
            raise ValueError("probs must be finite and non-negative")
        if abs(p.sum() - 1.0) > NORM_TOL:
            raise ValueError(f"probs sum to {p.sum():.17g}, not 1")
        object.__setattr__(self, "probs", p)

    @property
    def support_size(self) -> int:
        return self.probs.size

    @classmethod
    def point_mass(cls, n: int, i: int) -> "DiscreteDist":
        p = np.zeros(n)
        p[i] = 1.0
        return cls(p)

    @classmethod
    def random(cls, rng: RngStream, n: int) -> "DiscreteDist":
        w = -np.log1p(-rng.uniform(size=n))
        return cls(w / w.sum())


@dataclass(frozen=True)
class MixReport:
    beta: float
    lhs: float
    rhs: float
    abs_error: float
    bound_satisfied: bool


def _same_support(p: DiscreteDist, q: DiscreteDist) -> None:
    if p.support_size != q.support_size:
        raise ValueError(f"support mismatch: {p.support_size} vs {q.support_size}")


def mix(pi_hat: DiscreteDist, m_pi: DiscreteDist, beta: float) -> DiscreteDist:
    _same_support(pi_hat, m_pi)
    if beta < 0:
        raise ValueError("beta must be non-negative")
    w = 1.0 / (1.0 + beta)
    p = w * pi_hat.probs + (1.0 - w) * m_pi.probs
    return DiscreteDist(p / p.sum())


def tv_sup(p: DiscreteDist, q: DiscreteDist) -> float:
    _same_support(p, q)
    return float(np.max(np.abs(p.probs - q.probs)))


def tv_half_l1(p: DiscreteDist, q: DiscreteDist) -> float:
    _same_support(p, q)
    return 0.5 * float(np.sum(np.abs(p.probs - q.probs)))


def verify_mixing_identity(pi_hat: DiscreteDist, m_pi: DiscreteDist, beta: float,
                           tol: float = 1e-12) -> MixReport:
    """Distance from the prior to the mixture equals 1/(1+beta) of the distance from pi_hat."""
    pi_m = mix(pi_hat, m_pi, beta)
    lhs = tv_sup(m_pi, pi_m)
    rhs = tv_sup(pi_hat, m_pi) / (1.0 + beta)
    err = abs(lhs - rhs)
    return MixReport(beta, lhs, rhs, err, err <= tol)


def verify_bounds(pi_opt: DiscreteDist, m_pi: DiscreteDist, pi_hat: DiscreteDist,
                  beta: float, tol: float = 1e-12) -> MixReport:
    """Lower bound on the mixture's bias for arbitrary ``pi_hat``.

    When ``pi_hat`` is ``pi_opt`` the upper bound is attained, so the check
    becomes the equality ``D(pi_m, pi_opt) == beta / (1 + beta) * D_sub``.
    ``rhs`` is the bound (or the equality target) and ``lhs`` the realized bias.
    """
    pi_m = mix(pi_hat, m_pi, beta)
    d_sub = tv_sup(pi_opt, m_pi)
    lhs = tv_sup(pi_m, pi_opt)
    if np.array_equal(pi_hat.probs, pi_opt.probs):
        rhs = beta / (1.0 + beta) * d_sub
        err = abs(lhs - rhs)
        return MixReport(beta, lhs, rhs, err, err <= tol)
    rhs = d_sub - tv_sup(pi_hat, m_pi) / (1.0 + beta)
    slack = lhs - rhs
    return MixReport(beta, lhs, rhs, max(0.0, -slack), slack >= -tol)


def random_triple(rng: RngStream, n: int, beta_max: float = 10.0):
    pi_opt = DiscreteDist.random(rng, n)
    m_pi = DiscreteDist.random(rng, n)
    pi_hat = DiscreteDist.random(rng, n)
    beta = rng.uniform(0.0, beta_max)
    return pi_opt, m_pi, pi_hat, beta
