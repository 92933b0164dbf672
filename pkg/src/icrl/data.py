"""Dataset collection, train/test splits, and serialization.

A dataset is a directory with two files:

* ``manifest.json`` — env specs, splits, seeds, and per-history line
  offsets into the record file.
* ``histories.jsonl`` — one record per step, fields ``{o, a, r, b}``
  (observation, action index, reward, episode-boundary flag; ``b`` is true
  on the last step of an episode).

Both files are byte-deterministic for a given seed and config.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from .agents import LinUCB, QLearning, ThompsonSampling
from .envs import (
    ATOM_DELTAS,
    BernoulliBanditSpec,
    ContextualBanditSpec,
    ContextualEnv,
    DarkroomEnv,
    DarkroomSpec,
    bernoulli_step,
    sample_bernoulli_env,
    sample_contextual_env,
)
from .errors import DatasetFormatError, ValidationError

DATASET_VERSION = 1
MANIFEST_NAME = "manifest.json"
RECORDS_NAME = "histories.jsonl"


@dataclass
class LearningHistory:
    env_spec: object
    agent: str
    seed: int
    observations: list
    actions: np.ndarray
    rewards: np.ndarray
    boundaries: np.ndarray
    action_set_size: int

    def __post_init__(self):
        self.actions = np.asarray(self.actions, dtype=np.int64)
        self.rewards = np.asarray(self.rewards, dtype=np.float64)
        self.boundaries = np.asarray(self.boundaries, dtype=bool)
        n = len(self.actions)
        if not (len(self.observations) == len(self.rewards) == len(self.boundaries) == n):
            raise ValidationError("history field lengths disagree")
        if n and (self.actions.min() < 0 or self.actions.max() >= self.action_set_size):
            raise ValidationError("action index outside the action set")

    def __len__(self) -> int:
        return len(self.actions)

    @property
    def num_episodes(self) -> int:
        return int(self.boundaries.sum())

    def __eq__(self, other):
        return (
            isinstance(other, LearningHistory)
            and self.env_spec == other.env_spec
            and self.agent == other.agent
            and self.seed == other.seed
            and self.action_set_size == other.action_set_size
            and self.observations == other.observations
            and np.array_equal(self.actions, other.actions)
            and np.array_equal(self.rewards, other.rewards)
            and np.array_equal(self.boundaries, other.boundaries)
        )


@dataclass
class ActionSplit:
    train_actions: list[tuple[int, ...]]
    test_actions: list[tuple[int, ...]]
    mode: str

    def __post_init__(self):
        train, test = set(self.train_actions), set(self.test_actions)
        if train & test:
            raise ValidationError("train and test action sets overlap")

    def full_set(self) -> list[tuple[int, ...]]:
        return list(self.train_actions) + list(self.test_actions)


@dataclass
class GoalSplit:
    train_goals: list[tuple[int, int]]
    test_goals: list[tuple[int, int]]

    def __post_init__(self):
        if set(self.train_goals) & set(self.test_goals):
            raise ValidationError("train and test goals overlap")


@dataclass
class Dataset:
    family: str
    config: dict
    seed: int
    histories: list[LearningHistory]
    action_split: ActionSplit | None = None
    goal_split: GoalSplit | None = None

    def __eq__(self, other):
        return (
            isinstance(other, Dataset)
            and self.family == other.family
            and self.config == other.config
            and self.seed == other.seed
            and self.histories == other.histories
            and _split_eq(self.action_split, other.action_split)
            and self.goal_split == other.goal_split
        )

    def arm_count_histogram(self) -> dict[int, int]:
        hist: dict[int, int] = {}
        for h in self.histories:
            hist[h.action_set_size] = hist.get(h.action_set_size, 0) + 1
        return hist


def _split_eq(a, b):
    if a is None or b is None:
        return a is b
    return a.mode == b.mode and a.train_actions == b.train_actions and a.test_actions == b.test_actions


def _history_rngs(seed: int, count: int) -> list[np.random.Generator]:
    return [np.random.default_rng(child) for child in np.random.SeedSequence(seed).spawn(count)]


def collect_bernoulli_dataset(num_envs: int, num_steps: int, arm_range: tuple[int, int], mode: str,
                              seed: int, flip_prob: float = 0.05) -> Dataset:
    """Run Thompson Sampling on ``num_envs`` freshly sampled bandits."""
    lo, hi = arm_range
    if lo < 2 or hi < lo:
        raise ValidationError(f"arm_range must satisfy 2 <= lo <= hi, got {arm_range}")
    if num_steps < 1:
        raise ValidationError("num_steps must be >= 1")
    histories = []
    for i, rng in enumerate(_history_rngs(seed, num_envs)):
        num_arms = int(rng.integers(lo, hi + 1))
        spec = sample_bernoulli_env(num_arms, mode, flip_prob, rng)
        agent = ThompsonSampling(num_arms)
        actions, rewards = [], []
        for _ in range(num_steps):
            arm = agent.select(rng)
            reward = bernoulli_step(spec, arm, rng).reward
            agent.update(arm, reward)
            actions.append(arm)
            rewards.append(reward)
        boundaries = [False] * (num_steps - 1) + [True]
        histories.append(LearningHistory(
            env_spec=spec, agent="thompson_sampling", seed=i,
            observations=[()] * num_steps, actions=actions, rewards=rewards,
            boundaries=boundaries, action_set_size=num_arms,
        ))
    config = {"num_envs": num_envs, "num_steps": num_steps, "arm_range": [lo, hi],
              "mode": mode, "flip_prob": flip_prob}
    return Dataset(family="bernoulli", config=config, seed=seed, histories=histories)


def collect_contextual_dataset(num_envs: int, num_steps: int, arm_range: tuple[int, int], seed: int,
                               feature_dim: int = 2, reward_std: float = 1.0,
                               alpha_ucb: float = 1.0) -> Dataset:
    """Run LinUCB on ``num_envs`` contextual bandits with fresh per-step contexts."""
    lo, hi = arm_range
    if lo < 2 or hi < lo:
        raise ValidationError(f"arm_range must satisfy 2 <= lo <= hi, got {arm_range}")
    if num_steps < 1:
        raise ValidationError("num_steps must be >= 1")
    histories = []
    for i, rng in enumerate(_history_rngs(seed, num_envs)):
        num_arms = int(rng.integers(lo, hi + 1))
        spec = sample_contextual_env(num_arms, feature_dim, reward_std, rng)
        env = ContextualEnv(spec, rng)
        agent = LinUCB(num_arms, feature_dim, alpha=alpha_ucb)
        context = env.reset()
        observations, actions, rewards = [], [], []
        for _ in range(num_steps):
            arm = agent.select(np.asarray(context))
            result = env.step(arm)
            agent.update(arm, np.asarray(context), result.reward)
            observations.append(tuple(context))
            actions.append(arm)
            rewards.append(result.reward)
            context = result.observation
        boundaries = [False] * (num_steps - 1) + [True]
        histories.append(LearningHistory(
            env_spec=spec, agent="linucb", seed=i,
            observations=observations, actions=actions, rewards=rewards,
            boundaries=boundaries, action_set_size=num_arms,
        ))
    config = {"num_envs": num_envs, "num_steps": num_steps, "arm_range": [lo, hi],
              "feature_dim": feature_dim, "reward_std": reward_std, "alpha_ucb": alpha_ucb}
    return Dataset(family="contextual", config=config, seed=seed, histories=histories)


def collect_darkroom_dataset(num_envs: int | None, episodes_per_env: int, action_split: ActionSplit,
                             goal_split: GoalSplit, seed: int, grid_size: int = 9, horizon: int = 20,
                             seq_len: int = 3, q_lr: float = 0.1, q_gamma: float = 0.9,
                             q_eps_start: float = 1.0, q_eps_end: float = 0.05) -> Dataset:
    """Run tabular Q-learning on darkroom tasks whose goals come from the
    train split and whose actions are restricted to the train split.

    ``num_envs=None`` uses every train goal once.
    """
    if not action_split.train_actions or not goal_split.train_goals:
        raise ValidationError("empty train split")
    goals = list(goal_split.train_goals)
    if num_envs is None:
        num_envs = len(goals)
    if num_envs < 1 or episodes_per_env < 1:
        raise ValidationError("num_envs and episodes_per_env must be >= 1")
    action_set = list(action_split.train_actions)
    histories = []
    for i, rng in enumerate(_history_rngs(seed, num_envs)):
        goal = goals[i % len(goals)]
        spec = DarkroomSpec(grid_size=grid_size, goal=tuple(goal), horizon=horizon, seq_len=seq_len)
        env = DarkroomEnv(spec, action_set)
        agent = QLearning(grid_size * grid_size, len(action_set), lr=q_lr, gamma=q_gamma,
                          eps_start=q_eps_start, eps_end=q_eps_end, num_episodes=episodes_per_env)
        observations, actions, rewards, boundaries = [], [], [], []
        for episode in range(episodes_per_env):
            pos = env.reset()
            done = False
            while not done:
                cell = pos[0] * grid_size + pos[1]
                action = agent.select(cell, episode, rng)
                result = env.step(action)
                next_cell = result.observation[0] * grid_size + result.observation[1]
                agent.update(cell, action, result.reward, next_cell, result.done)
                observations.append(tuple(int(v) for v in pos))
                actions.append(action)
                rewards.append(result.reward)
                boundaries.append(result.done)
                pos = result.observation
                done = result.done
        histories.append(LearningHistory(
            env_spec=spec, agent="q_learning", seed=i,
            observations=observations, actions=actions, rewards=rewards,
            boundaries=boundaries, action_set_size=len(action_set),
        ))
    config = {"num_envs": num_envs, "episodes_per_env": episodes_per_env, "grid_size": grid_size,
              "horizon": horizon, "seq_len": seq_len, "q_lr": q_lr, "q_gamma": q_gamma,
              "q_eps_start": q_eps_start, "q_eps_end": q_eps_end}
    return Dataset(family="darkroom", config=config, seed=seed, histories=histories,
                   action_split=action_split, goal_split=goal_split)


def net_displacement(composite: tuple[int, ...]) -> tuple[int, int]:
    """Unclipped net (row, col) displacement of a composite action."""
    dr = sum(ATOM_DELTAS[a][0] for a in composite)
    dc = sum(ATOM_DELTAS[a][1] for a in composite)
    return dr, dc


def chebyshev_length(composite: tuple[int, ...]) -> int:
    dr, dc = net_displacement(composite)
    return max(abs(dr), abs(dc))


def split_actions(full_set: list[tuple[int, ...]], mode: str, sizes: tuple[int, int],
                  seed: int, test_lengths: tuple[int, ...] = (2,)) -> ActionSplit:
    """Partition an action table into disjoint train/test sets.

    ``random`` draws ``sizes`` actions without replacement; ``by_length``
    puts every action whose net displacement has Chebyshev length in
    ``test_lengths`` into the test set and the rest into train (``sizes``
    is ignored).
    """
    if mode == "random":
        n_train, n_test = sizes
        if n_train < 1 or n_test < 1 or n_train + n_test > len(full_set):
            raise ValidationError(f"sizes {sizes} infeasible for a {len(full_set)}-action set")
        perm = np.random.default_rng(seed).permutation(len(full_set))
        train = [full_set[j] for j in perm[:n_train]]
        test = [full_set[j] for j in perm[n_train:n_train + n_test]]
        return ActionSplit(train_actions=train, test_actions=test, mode=mode)
    if mode == "by_length":
        test = [a for a in full_set if chebyshev_length(a) in test_lengths]
        train = [a for a in full_set if chebyshev_length(a) not in test_lengths]
        if not train or not test:
            raise ValidationError("by_length split produced an empty side")
        return ActionSplit(train_actions=train, test_actions=test, mode=mode)
    raise ValidationError(f"unknown split mode {mode!r}")


def split_goals(grid_size: int, seed: int, train_fraction: float = 0.5) -> GoalSplit:
    """Random disjoint goal split over all cells except the start cell.

    A goal at the fixed start is degenerate (every action succeeds), so it
    is never used.
    """
    start = (grid_size // 2, grid_size // 2)
    cells = [(r, c) for r in range(grid_size) for c in range(grid_size) if (r, c) != start]
    perm = np.random.default_rng(seed).permutation(len(cells))
    n_train = int(round(train_fraction * len(cells)))
    if n_train < 1 or n_train >= len(cells):
        raise ValidationError("train_fraction leaves an empty split")
    train = [cells[j] for j in perm[:n_train]]
    test = [cells[j] for j in perm[n_train:]]
    return GoalSplit(train_goals=train, test_goals=test)


def coverable_cells(grid_size: int, horizon: int, action_set: list[tuple[int, ...]]) -> set[tuple[int, int]]:
    """Cells whose trajectories can be swept from the start within the
    horizon under the given action set; used to vet goal reachability."""
    def sweep(pos, composite):
        n = grid_size
        r, c = pos
        cells = []
        for atom in composite:
            dr, dc = ATOM_DELTAS[atom]
            r = min(max(r + dr, 0), n - 1)
            c = min(max(c + dc, 0), n - 1)
            cells.append((r, c))
        return cells

    start = (grid_size // 2, grid_size // 2)
    frontier = {start}
    visited_positions = {start}
    swept: set[tuple[int, int]] = set()
    for _ in range(horizon):
        next_frontier = set()
        for pos in frontier:
            for composite in action_set:
                cells = sweep(pos, composite)
                swept.update(cells)
                end = cells[-1]
                if end not in visited_positions:
                    visited_positions.add(end)
                    next_frontier.add(end)
        if not next_frontier:
            break
        frontier = next_frontier
    return swept


def _spec_to_json(spec) -> dict:
    if isinstance(spec, BernoulliBanditSpec):
        return {"kind": "bernoulli", "arm_means": list(spec.arm_means), "num_arms": spec.num_arms}
    if isinstance(spec, ContextualBanditSpec):
        return {"kind": "contextual", "arm_features": spec.arm_features.tolist(),
                "reward_std": spec.reward_std, "num_arms": spec.num_arms}
    if isinstance(spec, DarkroomSpec):
        return {"kind": "darkroom", "grid_size": spec.grid_size, "goal": list(spec.goal),
                "horizon": spec.horizon, "seq_len": spec.seq_len}
    raise ValidationError(f"cannot serialize spec type {type(spec).__name__}")


def _spec_from_json(doc: dict):
    kind = doc.get("kind")
    if kind == "bernoulli":
        return BernoulliBanditSpec(arm_means=tuple(doc["arm_means"]), num_arms=doc["num_arms"])
    if kind == "contextual":
        return ContextualBanditSpec(arm_features=np.asarray(doc["arm_features"], dtype=float),
                                    reward_std=doc["reward_std"], num_arms=doc["num_arms"])
    if kind == "darkroom":
        return DarkroomSpec(grid_size=doc["grid_size"], goal=tuple(doc["goal"]),
                            horizon=doc["horizon"], seq_len=doc["seq_len"])
    raise DatasetFormatError(f"unknown env spec kind {kind!r}")


def _obs_to_json(obs) -> list:
    return [o.item() if hasattr(o, "item") else o for o in obs]


def save_dataset(dataset: Dataset, path: str) -> None:
    """Write ``manifest.json`` + ``histories.jsonl`` into directory ``path``."""
    os.makedirs(path, exist_ok=True)
    entries = []
    offset = 0
    lines = []
    for h in dataset.histories:
        for o, a, r, b in zip(h.observations, h.actions, h.rewards, h.boundaries):
            lines.append(json.dumps({"o": _obs_to_json(o), "a": int(a), "r": float(r), "b": bool(b)},
                                    sort_keys=True, separators=(",", ":")))
        entries.append({
            "agent": h.agent, "seed": h.seed, "offset": offset, "num_records": len(h),
            "action_set_size": h.action_set_size, "env": _spec_to_json(h.env_spec),
        })
        offset += len(h)
    manifest = {
        "version": DATASET_VERSION,
        "family": dataset.family,
        "seed": dataset.seed,
        "config": dataset.config,
        "action_split": None if dataset.action_split is None else {
            "mode": dataset.action_split.mode,
            "train_actions": [list(a) for a in dataset.action_split.train_actions],
            "test_actions": [list(a) for a in dataset.action_split.test_actions],
        },
        "goal_split": None if dataset.goal_split is None else {
            "train_goals": [list(g) for g in dataset.goal_split.train_goals],
            "test_goals": [list(g) for g in dataset.goal_split.test_goals],
        },
        "histories": entries,
    }
    with open(os.path.join(path, RECORDS_NAME), "w") as f:
        f.write("\n".join(lines))
        if lines:
            f.write("\n")
    with open(os.path.join(path, MANIFEST_NAME), "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")


def _record_from_line(line: str, index: int) -> tuple:
    try:
        doc = json.loads(line)
        return doc["o"], doc["a"], doc["r"], doc["b"]
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise DatasetFormatError(f"record {index}: malformed line ({exc})") from exc


def load_dataset(path: str) -> Dataset:
    manifest_path = os.path.join(path, MANIFEST_NAME)
    records_path = os.path.join(path, RECORDS_NAME)
    with open(manifest_path) as f:
        manifest = json.load(f)
    if manifest.get("version") != DATASET_VERSION:
        raise DatasetFormatError(f"unsupported dataset version {manifest.get('version')}")
    with open(records_path) as f:
        lines = f.read().splitlines()
    family = manifest["family"]
    histories = []
    for entry in manifest["histories"]:
        offset, count = entry["offset"], entry["num_records"]
        if offset + count > len(lines):
            raise DatasetFormatError(
                f"record {len(lines)}: file truncated, history expects records up to {offset + count - 1}")
        observations, actions, rewards, boundaries = [], [], [], []
        for i in range(offset, offset + count):
            o, a, r, b = _record_from_line(lines[i], i)
            if family == "darkroom":
                observations.append(tuple(int(v) for v in o))
            else:
                observations.append(tuple(float(v) for v in o))
            actions.append(a)
            rewards.append(r)
            boundaries.append(b)
        histories.append(LearningHistory(
            env_spec=_spec_from_json(entry["env"]), agent=entry["agent"], seed=entry["seed"],
            observations=observations, actions=actions, rewards=rewards, boundaries=boundaries,
            action_set_size=entry["action_set_size"],
        ))
    action_split = None
    if manifest.get("action_split"):
        doc = manifest["action_split"]
        action_split = ActionSplit(
            train_actions=[tuple(a) for a in doc["train_actions"]],
            test_actions=[tuple(a) for a in doc["test_actions"]],
            mode=doc["mode"],
        )
    goal_split = None
    if manifest.get("goal_split"):
        doc = manifest["goal_split"]
        goal_split = GoalSplit(train_goals=[tuple(g) for g in doc["train_goals"]],
                               test_goals=[tuple(g) for g in doc["test_goals"]])
    return Dataset(family=family, config=manifest["config"], seed=manifest["seed"],
                   histories=histories, action_split=action_split, goal_split=goal_split)
