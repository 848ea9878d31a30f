"""Finite MDPs, exact value iteration and the potential-shaping invariance check."""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .core import DEFAULT_GAMMA, RngStream, check_gamma

TIE_TOL = 1e-9


class ConvergenceError(RuntimeError):
    def __init__(self, residual: float, iters: int):
        super().__init__(f"value iteration did not converge in {iters} sweeps (residual {residual:.3e})")
        self.residual = residual


@dataclass(frozen=True)
class TabularMDP:
    transition: np.ndarray  # P[s, a, s']
    reward: np.ndarray  # R[s, a, s']
    gamma: float = DEFAULT_GAMMA
    terminal: np.ndarray | None = None

    def __post_init__(self):
        P = np.asarray(self.transition, dtype=np.float64)
        R = np.asarray(self.reward, dtype=np.float64)
        if P.ndim != 3 or P.shape[0] != P.shape[2] or R.shape != P.shape:
            raise ValueError(f"transition/reward must share shape (S, A, S); got {P.shape}, {R.shape}")
        if np.any(P < 0) or not np.allclose(P.sum(axis=2), 1.0, rtol=0, atol=1e-12):
            raise ValueError("transition rows must be probability vectors")
        if not np.all(np.isfinite(R)):
            raise ValueError("rewards must be finite")
        term = np.zeros(P.shape[0], bool) if self.terminal is None else np.asarray(self.terminal, bool)
        if term.shape != (P.shape[0],):
            raise ValueError("terminal mask must have one entry per state")
        idx = np.flatnonzero(term)
        if np.any(P[idx, :, idx] != 1.0):
            raise ValueError("terminal states must be absorbing")
        check_gamma(self.gamma)
        object.__setattr__(self, "transition", P)
        object.__setattr__(self, "reward", R)
        object.__setattr__(self, "terminal", term)

    @property
    def n_states(self) -> int:
        return self.transition.shape[0]

    @property
    def n_actions(self) -> int:
        return self.transition.shape[1]


@dataclass(frozen=True)
class ShapingReport:
    max_q_deviation: float
    max_v_deviation: float
    policy_agreement: bool
    n_states_checked: int


def random_mdp(rng: RngStream, n_states: int, n_actions: int, branching: int,
               gamma: float = DEFAULT_GAMMA) -> TabularMDP:
    if n_states < 2 or n_actions < 1 or not (1 <= branching <= n_states):
        raise ValueError(f"invalid sizes: n_states={n_states}, n_actions={n_actions}, branching={branching}")
    P = np.zeros((n_states, n_actions, n_states))
    for s in range(n_states):
        for a in range(n_actions):
            succ = rng.permutation(n_states)[:branching]
            # flat Dirichlet via normalized exponentials
            w = -np.log1p(-rng.uniform(size=branching))
            w = w + 1e-12
            P[s, a, succ] = w / w.sum()
    P /= P.sum(axis=2, keepdims=True)
    R = rng.uniform(-1.0, 1.0, size=P.shape)
    terminal = np.zeros(n_states, bool)
    t = rng.integers(n_states)
    terminal[t] = True
    P[t] = 0.0
    P[t, :, t] = 1.0
    R[t] = 0.0
    return TabularMDP(P, R, gamma, terminal)


def expected_reward(mdp: TabularMDP) -> np.ndarray:
    return np.einsum("ijk,ijk->ij", mdp.transition, mdp.reward)


def bellman_backup(mdp: TabularMDP, q: np.ndarray, r_exp: np.ndarray | None = None) -> np.ndarray:
    if r_exp is None:
        r_exp = expected_reward(mdp)
    return r_exp + mdp.gamma * (mdp.transition @ q.max(axis=1))


def value_iteration(mdp: TabularMDP, tol: float = 1e-10, max_iters: int = 100_000) -> np.ndarray:
    """Optimal Q-table by synchronous value iteration from zero.

    Terminal states are ordinary absorbing states: with a zero-reward self-loop
    their value stays exactly 0. Stops once the sup-norm Bellman residual of
    the returned table is at most ``tol``.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    r_exp = expected_reward(mdp)
    q = np.zeros((mdp.n_states, mdp.n_actions))
    residual = np.inf
    for _ in range(max_iters):
        q_new = bellman_backup(mdp, q, r_exp)
        residual = float(np.max(np.abs(q_new - q)))
        q = q_new
        # residual of q_new is at most gamma * residual
        if mdp.gamma * residual <= tol:
            return q
    raise ConvergenceError(residual, max_iters)


def bellman_residual(mdp: TabularMDP, q: np.ndarray) -> float:
    return float(np.max(np.abs(bellman_backup(mdp, q) - q)))


def greedy_policy(q: np.ndarray, tie_tol: float = TIE_TOL) -> list[frozenset[int]]:
    q = np.asarray(q, dtype=np.float64)
    if not np.all(np.isfinite(q)):
        raise ValueError("Q-table must be finite")
    row_max = q.max(axis=1, keepdims=True)
    return [frozenset(np.flatnonzero(row >= m - tie_tol).tolist()) for row, m in zip(q, row_max)]


def check_potential(mdp: TabularMDP, phi) -> np.ndarray:
    phi = np.asarray(phi, dtype=np.float64)
    if phi.shape != (mdp.n_states,):
        raise ValueError(f"potential has shape {phi.shape}, MDP has {mdp.n_states} states")
    if not np.all(np.isfinite(phi)):
        raise ValueError("potential must be finite")
    if mdp.gamma == 1.0 and np.any(phi[mdp.terminal] != 0.0):
        raise ValueError("with gamma = 1 the potential must vanish at absorbing states")
    return phi


def apply_shaping(mdp: TabularMDP, phi) -> TabularMDP:
    """Add ``gamma * phi[s'] - phi[s]`` to every transition reward.

    Absorbing self-loops are shaped as well, so a terminal state ``t`` carries
    ``(gamma - 1) * phi[t]`` per step and its shaped value is ``-phi[t]``.
    """
    phi = check_potential(mdp, phi)
    shaped = mdp.reward + mdp.gamma * phi[None, None, :] - phi[:, None, None]
    return replace(mdp, reward=shaped)


def verify_shaping_theorem(mdp: TabularMDP, phi, tol: float = 1e-6,
                           max_iters: int = 100_000) -> ShapingReport:
    if tol <= 0:
        raise ValueError("tol must be positive")
    phi = check_potential(mdp, phi)
    shaped = apply_shaping(mdp, phi)
    # residual r bounds the Q error by r / (1 - gamma)
    solve_tol = min(tol / 100, tol * (1.0 - mdp.gamma) / 10) if mdp.gamma < 1 else tol / 100
    q = value_iteration(mdp, solve_tol, max_iters)
    q_shaped = value_iteration(shaped, solve_tol, max_iters)

    q_dev = np.abs(q_shaped - (q - phi[:, None]))
    v_dev = np.abs(q_shaped.max(axis=1) - (q.max(axis=1) - phi))
    agree = greedy_policy(q) == greedy_policy(q_shaped)
    return ShapingReport(
        max_q_deviation=float(q_dev.max()),
        max_v_deviation=float(v_dev.max()),
        policy_agreement=bool(agree),
        n_states_checked=mdp.n_states,
    )
