"""Bandit and gridworld environments.

Three families, all seed-deterministic:

* Bernoulli bandit: stateless, binary rewards, one endless episode.
* Contextual bandit: per-step context vector, Gaussian rewards with mean
  ``<context, arm_feature>``.
* Darkroom: N x N grid POMDP with composite actions (fixed-length
  sequences of atomic moves), sparse reward when the movement trajectory
  passes through a hidden goal cell.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError

ATOMS = ("up", "down", "left", "right", "noop")
ATOM_DELTAS = ((-1, 0), (1, 0), (0, -1), (0, 1), (0, 0))

BERNOULLI_MODES = ("odd_high", "even_high", "uniform")


@dataclass(frozen=True)
class StepResult:
    observation: tuple
    reward: float
    done: bool


@dataclass(frozen=True)
class BernoulliBanditSpec:
    arm_means: tuple[float, ...]
    num_arms: int

    def __post_init__(self):
        if self.num_arms < 2:
            raise ValidationError(f"num_arms must be >= 2, got {self.num_arms}")
        if len(self.arm_means) != self.num_arms:
            raise ValidationError("num_arms does not match len(arm_means)")
        if any(not (0.0 <= m <= 1.0) for m in self.arm_means):
            raise ValidationError("arm means must lie in [0, 1]")


@dataclass(eq=False)
class ContextualBanditSpec:
    arm_features: np.ndarray  # (num_arms, feature_dim)
    reward_std: float
    num_arms: int

    def __eq__(self, other):
        return (
            isinstance(other, ContextualBanditSpec)
            and self.num_arms == other.num_arms
            and self.reward_std == other.reward_std
            and self.arm_features.shape == other.arm_features.shape
            and bool(np.all(self.arm_features == other.arm_features))
        )

    def __post_init__(self):
        self.arm_features = np.asarray(self.arm_features, dtype=float)
        if self.arm_features.ndim != 2:
            raise ValidationError("arm_features must be a 2-D array")
        if self.arm_features.shape[0] != self.num_arms:
            raise ValidationError("num_arms does not match arm_features")
        if not np.isfinite(self.reward_std) or self.reward_std < 0:
            raise ValidationError("reward_std must be finite and >= 0")

    @property
    def feature_dim(self) -> int:
        return self.arm_features.shape[1]


@dataclass(frozen=True)
class DarkroomSpec:
    grid_size: int
    goal: tuple[int, int]
    horizon: int = 20
    seq_len: int = 3
    atomic_actions: tuple[str, ...] = ATOMS

    def __post_init__(self):
        r, c = self.goal
        if not (0 <= r < self.grid_size and 0 <= c < self.grid_size):
            raise ValidationError(f"goal {self.goal} outside {self.grid_size}x{self.grid_size} grid")
        if self.horizon < 1:
            raise ValidationError("horizon must be >= 1")
        if self.seq_len < 1:
            raise ValidationError("seq_len must be >= 1")

    @property
    def start(self) -> tuple[int, int]:
        # fixed start at the grid center keeps success rates comparable across goals
        return (self.grid_size // 2, self.grid_size // 2)

    @property
    def num_actions(self) -> int:
        return len(self.atomic_actions) ** self.seq_len


def sample_bernoulli_env(num_arms: int, mode: str, flip_prob: float, rng: np.random.Generator) -> BernoulliBanditSpec:
    """Draw arm means for one bandit.

    ``odd_high``: odd-indexed arms get mu ~ U[0.5, 1] and even-indexed get
    U[0, 0.5]; with probability ``flip_prob`` the two ranges are swapped.
    ``even_high`` is the mirror image. ``uniform``: every arm gets U[0, 1].
    """
    if num_arms < 2:
        raise ValidationError(f"num_arms must be >= 2, got {num_arms}")
    if not (0.0 <= flip_prob <= 1.0):
        raise ValidationError(f"flip_prob must be in [0, 1], got {flip_prob}")
    if mode not in BERNOULLI_MODES:
        raise ValidationError(f"unknown mode {mode!r}, expected one of {BERNOULLI_MODES}")

    u = rng.random(num_arms)
    if mode == "uniform":
        means = u
    else:
        swapped = rng.random() < flip_prob
        high_parity = 1 if mode == "odd_high" else 0
        if swapped:
            high_parity = 1 - high_parity
        idx = np.arange(num_arms)
        means = np.where(idx % 2 == high_parity, 0.5 + 0.5 * u, 0.5 * u)
    return BernoulliBanditSpec(arm_means=tuple(float(m) for m in means), num_arms=num_arms)


def bernoulli_step(spec: BernoulliBanditSpec, arm: int, rng: np.random.Generator) -> StepResult:
    """Pull one arm; reward ~ Bernoulli(mu_arm), empty observation."""
    if not (0 <= arm < spec.num_arms):
        raise IndexError(f"arm {arm} out of range for {spec.num_arms}-arm bandit")
    reward = float(rng.random() < spec.arm_means[arm])
    return StepResult(observation=(), reward=reward, done=False)


def sample_unit_vector(dim: int, rng: np.random.Generator) -> np.ndarray:
    v = rng.normal(size=dim)
    return v / np.linalg.norm(v)


def sample_contextual_env(num_arms: int, feature_dim: int, reward_std: float, rng: np.random.Generator) -> ContextualBanditSpec:
    """Arm features drawn uniformly from the unit sphere in R^feature_dim."""
    if num_arms < 2:
        raise ValidationError(f"num_arms must be >= 2, got {num_arms}")
    if feature_dim < 1:
        raise ValidationError(f"feature_dim must be >= 1, got {feature_dim}")
    features = np.stack([sample_unit_vector(feature_dim, rng) for _ in range(num_arms)])
    return ContextualBanditSpec(arm_features=features, reward_std=float(reward_std), num_arms=num_arms)


def contextual_step(spec: ContextualBanditSpec, context: np.ndarray, arm: int, rng: np.random.Generator) -> StepResult:
    """Reward ~ Normal(<context, x_arm>, sigma); observation is a fresh context.

    Draw order is fixed (reward first, next context second) so that paired
    rollouts consuming the same generator stay aligned step for step.
    """
    context = np.asarray(context, dtype=float)
    if context.shape != (spec.feature_dim,):
        raise ValidationError(f"context shape {context.shape} does not match feature_dim {spec.feature_dim}")
    if not (0 <= arm < spec.num_arms):
        raise IndexError(f"arm {arm} out of range for {spec.num_arms}-arm bandit")
    mean = float(context @ spec.arm_features[arm])
    reward = mean if spec.reward_std == 0 else float(rng.normal(mean, spec.reward_std))
    next_context = sample_unit_vector(spec.feature_dim, rng)
    return StepResult(observation=tuple(next_context), reward=reward, done=False)


def composite_action_table(num_atoms: int, seq_len: int) -> list[tuple[int, ...]]:
    """All num_atoms^seq_len atom-index sequences in lexicographic order."""
    if num_atoms < 1 or seq_len < 1:
        raise ValidationError("num_atoms and seq_len must be >= 1")
    return list(itertools.product(range(num_atoms), repeat=seq_len))


def darkroom_step(spec: DarkroomSpec, pos: tuple[int, int], composite_action: tuple[int, ...]) -> StepResult:
    """Apply the atoms in order with border clipping.

    Reward 1 and done if any post-atom cell equals the goal; the observation
    is always the final position. Horizon accounting is the caller's job.
    """
    if len(composite_action) != spec.seq_len:
        raise ValidationError(f"composite action length {len(composite_action)} != seq_len {spec.seq_len}")
    n = spec.grid_size
    r, c = pos
    if not (0 <= r < n and 0 <= c < n):
        raise ValidationError(f"position {pos} outside grid")
    hit = False
    for atom in composite_action:
        if not (0 <= atom < len(spec.atomic_actions)):
            raise ValidationError(f"atom index {atom} out of range")
        dr, dc = ATOM_DELTAS[atom]
        r = min(max(r + dr, 0), n - 1)
        c = min(max(c + dc, 0), n - 1)
        if (r, c) == spec.goal:
            hit = True
    return StepResult(observation=(r, c), reward=float(hit), done=hit)


def optimal_mean(spec, context: np.ndarray | None = None) -> float:
    """Best achievable expected single-step reward."""
    if isinstance(spec, BernoulliBanditSpec):
        return max(spec.arm_means)
    if isinstance(spec, ContextualBanditSpec):
        if context is None:
            raise ValidationError("contextual optimal mean needs the context")
        return float(np.max(spec.arm_features @ np.asarray(context, dtype=float)))
    raise ValidationError(f"unsupported spec type {type(spec).__name__}")


class BernoulliEnv:
    """Stateful rollout wrapper; one endless episode."""

    def __init__(self, spec: BernoulliBanditSpec, rng: np.random.Generator):
        self.spec = spec
        self.rng = rng
        self.num_actions = spec.num_arms

    def reset(self) -> tuple:
        return ()

    def step(self, arm: int) -> StepResult:
        return bernoulli_step(self.spec, arm, self.rng)

    def step_mean(self, arm: int) -> float:
        return self.spec.arm_means[arm]

    def optimal_mean(self, observation=None) -> float:
        return optimal_mean(self.spec)


class ContextualEnv:
    """Stateful rollout wrapper; observation is the current context."""

    def __init__(self, spec: ContextualBanditSpec, rng: np.random.Generator):
        self.spec = spec
        self.rng = rng
        self.num_actions = spec.num_arms
        self._context = None

    def reset(self) -> tuple:
        self._context = sample_unit_vector(self.spec.feature_dim, self.rng)
        return tuple(self._context)

    def step(self, arm: int) -> StepResult:
        result = contextual_step(self.spec, self._context, arm, self.rng)
        self._context = np.asarray(result.observation)
        return result

    def step_mean(self, arm: int) -> float:
        return float(self._context @ self.spec.arm_features[arm])

    def optimal_mean(self, observation=None) -> float:
        return optimal_mean(self.spec, self._context)


def bernoulli_as_contextual(spec: BernoulliBanditSpec, feature_dim: int, rng: np.random.Generator) -> "FixedContextEnv":
    """Present a Bernoulli bandit through the contextual interface.

    One random unit vector serves as the context for the whole rollout, so a
    policy trained on contextual bandits can act on Bernoulli rewards.
    """
    context = sample_unit_vector(feature_dim, rng)
    return FixedContextEnv(spec, context, rng)


class FixedContextEnv:
    def __init__(self, spec: BernoulliBanditSpec, context: np.ndarray, rng: np.random.Generator):
        self.spec = spec
        self.context = np.asarray(context, dtype=float)
        self.rng = rng
        self.num_actions = spec.num_arms

    def reset(self) -> tuple:
        return tuple(self.context)

    def step(self, arm: int) -> StepResult:
        inner = bernoulli_step(self.spec, arm, self.rng)
        return StepResult(observation=tuple(self.context), reward=inner.reward, done=False)

    def step_mean(self, arm: int) -> float:
        return self.spec.arm_means[arm]

    def optimal_mean(self, observation=None) -> float:
        return optimal_mean(self.spec)


class DarkroomEnv:
    """Stateful episodic wrapper over ``darkroom_step``.

    Actions are indices into ``action_set`` (a list of composite actions).
    Episodes end on goal hit or when ``spec.horizon`` composite steps have
    been taken.
    """

    def __init__(self, spec: DarkroomSpec, action_set: list[tuple[int, ...]]):
        if not action_set:
            raise ValidationError("action_set must be non-empty")
        self.spec = spec
        self.action_set = list(action_set)
        self.num_actions = len(self.action_set)
        self._pos = spec.start
        self._steps = 0

    def reset(self) -> tuple[int, int]:
        self._pos = self.spec.start
        self._steps = 0
        return self._pos

    def step(self, action_index: int) -> StepResult:
        if not (0 <= action_index < self.num_actions):
            raise IndexError(f"action index {action_index} out of range")
        result = darkroom_step(self.spec, self._pos, self.action_set[action_index])
        self._pos = result.observation
        self._steps += 1
        done = result.done or self._steps >= self.spec.horizon
        return StepResult(observation=result.observation, reward=result.reward, done=done)
