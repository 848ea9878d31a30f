"""Deterministic low-dimensional manipulation stand-ins and a tabular gridworld.

All positions live in the unit square. Every environment also exposes the
oracle quantities the clean priors are built from: a scripted expert action,
the remaining task distance and the success predicate, each as a pure
function of the observed state vector.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .core import DEFAULT_GAMMA, RngStream, clamp_action, make_rng
from .mdp_oracle import TabularMDP


@dataclass(frozen=True)
class EnvSpec:
    name: str
    state_dim: int
    action_dim: int
    horizon: int
    success_radius: float = 0.05
    step_scale: float = 0.05
    task_id: int = 0

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be at least 1")
        if self.success_radius <= 0:
            raise ValueError("success_radius must be positive")
        if not (0.0 < self.step_scale <= 0.2):
            raise ValueError("step_scale must lie in (0, 0.2]")


class EpisodeFinished(RuntimeError):
    pass


def _unit_step(delta: np.ndarray, step_scale: float) -> np.ndarray:
    """Action of norm <= 1 moving straight along ``delta``, not overshooting it."""
    dist = float(np.hypot(delta[0], delta[1]))
    if dist == 0.0:
        return np.zeros(2)
    return delta / dist * min(1.0, dist / step_scale)


class Env:
    spec: EnvSpec
    variation = 0.15

    def __init__(self, seed: int = 0):
        self.seed = seed
        self._rng = make_rng(seed)
        self.t = 0
        self.done = True
        self._obs = None

    # episode control
    def reset(self, rng: RngStream | None = None) -> np.ndarray:
        self._layout(self._rng if rng is None else rng)
        self.t = 0
        self.done = False
        self._obs = self._observe()
        return self._obs.copy()

    def step(self, a) -> tuple[np.ndarray, bool, bool]:
        if self.done:
            raise EpisodeFinished("episode finished")
        a = clamp_action(a)
        if a.shape != (self.spec.action_dim,):
            raise ValueError(f"action must have shape ({self.spec.action_dim},)")
        self._advance(a)
        self.t += 1
        self._obs = self._observe()
        success = self.is_success(self._obs)
        self.done = success or self.t >= self.spec.horizon
        return self._obs.copy(), success, self.done

    @property
    def state(self) -> np.ndarray:
        return self._obs.copy()

    # subclass hooks
    def _layout(self, rng: RngStream) -> None:
        raise NotImplementedError

    def _advance(self, a: np.ndarray) -> None:
        raise NotImplementedError

    def _observe(self) -> np.ndarray:
        raise NotImplementedError

    # oracle quantities on state vectors
    def is_success(self, s) -> bool:
        raise NotImplementedError

    def expert_action(self, s) -> np.ndarray:
        raise NotImplementedError

    def task_distance(self, s) -> float:
        raise NotImplementedError

    max_task_distance: float = 1.0

    def random_state(self, rng: RngStream) -> np.ndarray:
        """A state anywhere in the arena (not only reachable from reset)."""
        raise NotImplementedError

    def _sample_box(self, rng: RngStream, nominal) -> np.ndarray:
        return np.asarray(nominal, float) + rng.uniform(-self.variation, self.variation, size=2)

    def _box_corners(self, nominal) -> list[np.ndarray]:
        v = self.variation
        return [np.asarray(nominal, float) + np.array([dx, dy]) for dx in (-v, v) for dy in (-v, v)]


class PointReach(Env):
    start = np.array([0.2, 0.5])
    goal_nominal = np.array([0.7, 0.5])

    def __init__(self, seed: int = 0, task_id: int = 0):
        super().__init__(seed)
        self.spec = EnvSpec("point-reach", 4, 2, 60, task_id=task_id)
        self.agent = self.start.copy()
        self.goal = self.goal_nominal.copy()
        self.max_task_distance = max(self._reach_distance(self.start, g) for g in self._box_corners(self.goal_nominal))

    def set_layout(self, agent=None, goal=None) -> np.ndarray:
        if agent is not None:
            self.agent = np.asarray(agent, float).copy()
        if goal is not None:
            self.goal = np.asarray(goal, float).copy()
        self.t, self.done = 0, False
        self._obs = self._observe()
        return self.state

    def _layout(self, rng):
        self.agent = self.start.copy()
        self.goal = self._sample_box(rng, self.goal_nominal)

    def _move(self, delta: np.ndarray) -> None:
        self.agent = np.clip(self.agent + delta, 0.0, 1.0)

    def _advance(self, a):
        self._move(self.spec.step_scale * a)

    def _observe(self):
        return np.concatenate([self.agent, self.goal])

    def is_success(self, s) -> bool:
        s = np.asarray(s, float)
        return bool(np.hypot(*(s[0:2] - s[2:4])) < self.spec.success_radius)

    def expert_action(self, s):
        s = np.asarray(s, float)
        return _unit_step(s[2:4] - s[0:2], self.spec.step_scale)

    def _reach_distance(self, agent, goal) -> float:
        return max(0.0, float(np.hypot(*(goal - agent))) - self.spec.success_radius)

    def task_distance(self, s):
        s = np.asarray(s, float)
        if self.is_success(s):
            return 0.0
        return self._reach_distance(s[0:2], s[2:4])

    def random_state(self, rng):
        return rng.uniform(size=4)


class DetourReach(PointReach):
    """Point-reach with a vertical wall segment between the start and every goal."""

    wall_x = 0.45
    wall_y = (0.33, 0.67)  # covers every goal row, so the greedy slide stalls

    def __init__(self, seed: int = 0, task_id: int = 2):
        super().__init__(seed, task_id)
        self.spec = EnvSpec("detour-reach", 4, 2, 60, task_id=task_id)
        v = self.variation
        gx = np.linspace(self.goal_nominal[0] - v, self.goal_nominal[0] + v, 61)
        gy = np.linspace(self.goal_nominal[1] - v, self.goal_nominal[1] + v, 61)
        self.max_task_distance = max(self._reach_distance(self.start, np.array([x, y])) for x in gx for y in gy)

    def hits_wall(self, p, q) -> bool:
        """Whether the closed segment p -> q touches the wall segment."""
        wx, (y0, y1) = self.wall_x, self.wall_y
        if min(p[0], q[0]) > wx or max(p[0], q[0]) < wx:
            return False
        if p[0] == q[0]:
            return max(min(p[1], q[1]), y0) <= min(max(p[1], q[1]), y1)
        yc = p[1] + (wx - p[0]) / (q[0] - p[0]) * (q[1] - p[1])
        return y0 <= yc <= y1

    def _move(self, delta):
        p = self.agent
        q = np.clip(p + delta, 0.0, 1.0)
        if self.hits_wall(p, q):
            for cand in (np.array([p[0], q[1]]), np.array([q[0], p[1]]), p):
                if cand is p or not self.hits_wall(p, cand):
                    q = cand
                    break
        self.agent = q.copy()

    def _reach_distance(self, agent, goal):
        if self.hits_wall(agent, goal):
            d = min(float(np.hypot(*(np.array([self.wall_x, y]) - agent)))
                    + float(np.hypot(*(goal - np.array([self.wall_x, y])))) for y in self.wall_y)
        else:
            d = float(np.hypot(*(goal - agent)))
        return max(0.0, d - self.spec.success_radius)

    def in_wall(self, point, tol: float = 1e-9) -> bool:
        return abs(point[0] - self.wall_x) <= tol and self.wall_y[0] <= point[1] <= self.wall_y[1]

    def random_state(self, rng):
        while True:
            s = rng.uniform(size=4)
            if not self.in_wall(s[0:2]):
                return s


class PointPickPlace(Env):
    start = np.array([0.5, 0.15])
    object_nominal = np.array([0.3, 0.5])
    goal_nominal = np.array([0.7, 0.7])
    grasp_radius = 0.05

    def __init__(self, seed: int = 0, task_id: int = 1):
        super().__init__(seed)
        self.spec = EnvSpec("point-pick-place", 7, 3, 100, task_id=task_id)
        self.agent = self.start.copy()
        self.obj = self.object_nominal.copy()
        self.goal = self.goal_nominal.copy()
        self.grasped = False
        self.max_task_distance = max(
            self._pick_distance(self.start, o, g)
            for o, g in itertools.product(self._box_corners(self.object_nominal), self._box_corners(self.goal_nominal)))

    def set_layout(self, agent=None, obj=None, goal=None, grasped=None) -> np.ndarray:
        for name, val in (("agent", agent), ("obj", obj), ("goal", goal)):
            if val is not None:
                setattr(self, name, np.asarray(val, float).copy())
        if grasped is not None:
            self.grasped = bool(grasped)
        self.t, self.done = 0, False
        self._obs = self._observe()
        return self.state

    def _layout(self, rng):
        self.agent = self.start.copy()
        self.obj = self._sample_box(rng, self.object_nominal)
        self.goal = self._sample_box(rng, self.goal_nominal)
        self.grasped = False

    def _advance(self, a):
        grip = a[2]
        if grip <= 0:
            self.grasped = False
        elif not self.grasped and np.hypot(*(self.agent - self.obj)) < self.grasp_radius:
            self.grasped = True
        new_agent = np.clip(self.agent + self.spec.step_scale * a[:2], 0.0, 1.0)
        if self.grasped:
            self.obj = np.clip(self.obj + (new_agent - self.agent), 0.0, 1.0)
        self.agent = new_agent

    def _observe(self):
        return np.concatenate([self.agent, self.obj, self.goal, [float(self.grasped)]])

    def is_success(self, s):
        s = np.asarray(s, float)
        return bool(np.hypot(*(s[2:4] - s[4:6])) < self.spec.success_radius)

    def expert_action(self, s):
        s = np.asarray(s, float)
        agent, obj, goal, grasped = s[0:2], s[2:4], s[4:6], s[6] > 0.5
        near = np.hypot(*(agent - obj)) < self.grasp_radius
        if grasped or near:
            return np.concatenate([_unit_step(goal - obj, self.spec.step_scale), [1.0]])
        return np.concatenate([_unit_step(obj - agent, self.spec.step_scale), [-1.0]])

    def _pick_distance(self, agent, obj, goal) -> float:
        place = max(0.0, float(np.hypot(*(goal - obj))) - self.spec.success_radius)
        reach = max(0.0, float(np.hypot(*(obj - agent))) - self.grasp_radius)
        return reach + place

    def task_distance(self, s):
        s = np.asarray(s, float)
        if self.is_success(s):
            return 0.0
        if s[6] > 0.5:
            return self._pick_distance(s[2:4], s[2:4], s[4:6])
        return self._pick_distance(s[0:2], s[2:4], s[4:6])

    def random_state(self, rng):
        s = rng.uniform(size=7)
        s[6] = float(s[6] < 0.5)
        return s


GRID_MOVES = np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]])


class GridWorld(Env):
    """8x8 grid with one-hot observations; continuous actions snap to the nearest move."""

    size = 8
    start_cell = (0, 0)
    goal_cell = (7, 7)

    def __init__(self, seed: int = 0, task_id: int = 3):
        super().__init__(seed)
        n = self.size
        self.spec = EnvSpec("grid-8x8", n * n, 2, 40, success_radius=0.5, step_scale=1.0 / n, task_id=task_id)
        self.cell = self.start_cell
        self.max_task_distance = float(self._manhattan(self.start_cell))

    def index(self, cell) -> int:
        return cell[0] * self.size + cell[1]

    def cell_of(self, s) -> tuple[int, int]:
        i = int(np.argmax(np.asarray(s)))
        return divmod(i, self.size)

    def one_hot(self, cell) -> np.ndarray:
        s = np.zeros(self.size * self.size)
        s[self.index(cell)] = 1.0
        return s

    @staticmethod
    def move_index(a) -> int:
        return int(np.argmax(GRID_MOVES @ np.asarray(a, float)))

    def next_cell(self, cell, move: int) -> tuple[int, int]:
        dx, dy = GRID_MOVES[move].astype(int)
        x = min(max(cell[0] + dx, 0), self.size - 1)
        y = min(max(cell[1] + dy, 0), self.size - 1)
        return (x, y)

    def set_layout(self, cell) -> np.ndarray:
        self.cell = tuple(cell)
        self.t, self.done = 0, False
        self._obs = self._observe()
        return self.state

    def _layout(self, rng):
        self.cell = self.start_cell

    def _advance(self, a):
        self.cell = self.next_cell(self.cell, self.move_index(a))

    def _observe(self):
        return self.one_hot(self.cell)

    def _manhattan(self, cell) -> int:
        return abs(cell[0] - self.goal_cell[0]) + abs(cell[1] - self.goal_cell[1])

    def is_success(self, s):
        return self.cell_of(s) == self.goal_cell

    def expert_action(self, s):
        cell = self.cell_of(s)
        dx, dy = self.goal_cell[0] - cell[0], self.goal_cell[1] - cell[1]
        if dx == 0 and dy == 0:
            return np.zeros(2)
        return GRID_MOVES[0 if dx > 0 else 1] if abs(dx) >= abs(dy) else GRID_MOVES[2 if dy > 0 else 3]

    def task_distance(self, s):
        return float(self._manhattan(self.cell_of(s)))

    def random_state(self, rng):
        return self.one_hot(divmod(rng.integers(self.size * self.size), self.size))

    @property
    def n_tabular_states(self) -> int:
        return self.size * self.size + 1

    def tabular_state(self, idx: int) -> np.ndarray:
        """Observation for a tabular state index; the absorbing state shows the goal cell."""
        if idx == self.size * self.size:
            return self.one_hot(self.goal_cell)
        return self.one_hot(divmod(idx, self.size))

    def to_tabular(self, gamma: float = DEFAULT_GAMMA) -> TabularMDP:
        """64 cells plus one absorbing state that every goal-entering move leads to.

        The reward is the ground-truth success indicator of the transition.
        """
        n = self.size * self.size
        absorbing = n
        P = np.zeros((n + 1, 4, n + 1))
        R = np.zeros_like(P)
        for i in range(n):
            cell = divmod(i, self.size)
            for m in range(4):
                nxt = self.next_cell(cell, m)
                if nxt == self.goal_cell or cell == self.goal_cell:
                    P[i, m, absorbing] = 1.0
                    R[i, m, absorbing] = 1.0
                else:
                    P[i, m, self.index(nxt)] = 1.0
        P[absorbing, :, absorbing] = 1.0
        terminal = np.zeros(n + 1, bool)
        terminal[absorbing] = True
        return TabularMDP(P, R, gamma, terminal)


def to_tabular(env: Env, gamma: float = DEFAULT_GAMMA) -> TabularMDP:
    if not isinstance(env, GridWorld):
        raise TypeError(f"{env.spec.name} has no exact tabular encoding")
    return env.to_tabular(gamma)


REGISTRY = {
    "point-reach": PointReach,
    "point-pick-place": PointPickPlace,
    "detour-reach": DetourReach,
    "grid-8x8": GridWorld,
}


def make_env(name: str, seed: int = 0) -> Env:
    try:
        cls = REGISTRY[name]
    except KeyError:
        raise KeyError(f"unknown environment {name!r}; registered: {', '.join(REGISTRY)}") from None
    return cls(seed)
