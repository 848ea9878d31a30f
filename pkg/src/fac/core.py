"""Shared domain types, the repository-wide RNG, and input validation helpers."""
from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field

import numpy as np
from sklearn.utils.validation import check_array

DEFAULT_GAMMA = 0.99
_TWO_POW_53 = float(2**53)
_U64_MASK = (1 << 64) - 1


class RngStream:
    """Deterministic random stream backed by the PCG64 bit generator.

    Only raw 64-bit outputs of PCG64 are used. Uniform doubles take the top
    53 bits (``(x >> 11) * 2**-53``). Normals use the cosine branch of
    Box-Muller on two consecutive uniforms, ``sqrt(-2 ln(1 - u1)) cos(2 pi u2)``,
    so every draw is a fixed function of the PCG64 stream.
    """

    def __init__(self, seed: int):
        seed = int(seed)
        if seed < 0 or seed > _U64_MASK:
            raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
        self.seed = seed
        self._bitgen = np.random.PCG64(seed)

    def _raw(self, n: int) -> np.ndarray:
        return self._bitgen.random_raw(n)

    def uniform(self, low=0.0, high=1.0, size=None):
        n = 1 if size is None else int(np.prod(size))
        u = (self._raw(n) >> np.uint64(11)).astype(np.float64) / _TWO_POW_53
        out = low + (high - low) * u
        if size is None:
            return float(out[0])
        return out.reshape(size)

    def normal(self, loc=0.0, scale=1.0, size=None):
        n = 1 if size is None else int(np.prod(size))
        u = self.uniform(size=2 * n)
        z = np.sqrt(-2.0 * np.log1p(-u[0::2])) * np.cos(2.0 * np.pi * u[1::2])
        out = loc + scale * z
        if size is None:
            return float(out[0])
        return out.reshape(size)

    def integers(self, high: int, size=None):
        """Integers in ``[0, high)`` by floor of a uniform draw."""
        u = self.uniform(size=size)
        out = np.minimum(np.floor(np.asarray(u) * high), high - 1).astype(np.int64)
        return int(out) if size is None else out

    def permutation(self, n: int) -> np.ndarray:
        return np.argsort(self.uniform(size=n), kind="stable")

    def next_seed(self) -> int:
        """Consume one raw 64-bit draw, for seeding a derived provider."""
        return int(self._raw(1)[0])

    def spawn(self, key: str) -> "RngStream":
        """Independent child stream keyed by a label; does not consume draws."""
        return RngStream(derive_seed(self.seed, key))


def make_rng(seed: int) -> RngStream:
    return RngStream(seed)


def derive_seed(seed: int, *keys) -> int:
    h = hashlib.blake2b(digest_size=8)
    h.update(struct.pack("<Q", int(seed) & _U64_MASK))
    for key in keys:
        h.update(b"\x00")
        h.update(str(key).encode())
    return int.from_bytes(h.digest(), "little")


def hash_uniforms(seed: int, salt: str, state: np.ndarray, task: int, n: int) -> np.ndarray:
    """``n`` uniforms in [0, 1) that are a pure function of (seed, salt, state, task)."""
    h = hashlib.blake2b(digest_size=8 * n)
    h.update(struct.pack("<Qq", int(seed) & _U64_MASK, int(task)))
    h.update(salt.encode())
    h.update(np.ascontiguousarray(state, dtype=np.float64).tobytes())
    words = np.frombuffer(h.digest(), dtype="<u8")
    return (words >> np.uint64(11)).astype(np.float64) / _TWO_POW_53


def hash_normals(seed: int, salt: str, state: np.ndarray, task: int, n: int) -> np.ndarray:
    u = hash_uniforms(seed, salt, state, task, 2 * n)
    return np.sqrt(-2.0 * np.log1p(-u[0::2])) * np.cos(2.0 * np.pi * u[1::2])


def clamp_action(a) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if not np.all(np.isfinite(a)):
        raise ValueError("non-finite action")
    return np.clip(a, -1.0, 1.0)


def check_states(X, dim: int | None = None) -> np.ndarray:
    """Validate a batch of states as a finite float64 2-D array."""
    X = check_array(X, dtype=np.float64, ensure_2d=False)
    if X.ndim == 1:
        X = X[None, :]
    if dim is not None and X.shape[1] != dim:
        raise ValueError(f"expected states of dimension {dim}, got {X.shape[1]}")
    return X


def check_gamma(gamma: float) -> float:
    gamma = float(gamma)
    if not (0.0 < gamma <= 1.0):
        raise ValueError(f"gamma must lie in (0, 1], got {gamma}")
    return gamma


@dataclass(frozen=True)
class Transition:
    state: np.ndarray
    action: np.ndarray
    reward: float
    next_state: np.ndarray
    done: bool
    prior_success: bool
    true_success: bool
    prior_action: np.ndarray | None = None
    source: str = "actor"


@dataclass
class EpisodeRecord:
    transitions: list[Transition] = field(default_factory=list)
    seed: int = 0
    task: int = 0

    def validate(self) -> None:
        if not self.transitions:
            raise ValueError("episode has no transitions")
        flags = [t.done for t in self.transitions]
        if not flags[-1]:
            raise ValueError("incomplete episode: last transition is not done")
        if any(flags[:-1]):
            raise ValueError("episode has a done flag before its last transition")

    @property
    def prior_success(self) -> bool:
        return bool(self.transitions and self.transitions[-1].prior_success)

    @property
    def true_success(self) -> bool:
        return any(t.true_success for t in self.transitions)

    def __len__(self) -> int:
        return len(self.transitions)
