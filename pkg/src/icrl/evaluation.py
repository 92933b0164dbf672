"""Rollout harness, action-set variants, metrics, and report emission.

Rollouts are batched across environments in lockstep (one forward pass per
step for the whole batch). Sampling noise is keyed by (seed, environment,
step, physical action identity) rather than by action slot, so relabeling
an action set — e.g. the permuted-train variant — leaves the realized
trajectories of an order-equivariant policy exactly unchanged.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass

import numpy as np

from .action_map import regenerate, select_action
from .agents import LinUCB, ThompsonSampling
from .config import RunConfig
from .data import ActionSplit, Dataset, load_dataset
from .envs import (
    BernoulliEnv,
    ContextualEnv,
    DarkroomEnv,
    DarkroomSpec,
    composite_action_table,
    sample_bernoulli_env,
    sample_contextual_env,
)
from .errors import ValidationError

VARIANT_NAMES = ("train", "permuted_train", "test", "sliced_test", "all")

SUMMARY_COLUMNS = ["experiment", "env", "variant", "seed", "metric", "value"]
ROW_COLUMNS = ["experiment", "env", "variant", "seed", "env_id", "num_actions",
               "actions_used", "total_reward", "final_regret", "success_rate", "episodes"]
CURVE_COLUMNS = ["experiment", "env", "variant", "seed", "step", "value"]


@dataclass
class ActionSetVariant:
    name: str
    actions: list


def build_variants(action_split: ActionSplit, rng: np.random.Generator) -> list[ActionSetVariant]:
    """The five evaluation action sets: train, a permutation of train, the
    unseen test set, the first |train| test actions, and train + test."""
    train = list(action_split.train_actions)
    test = list(action_split.test_actions)
    perm = [train[i] for i in rng.permutation(len(train))]
    return [
        ActionSetVariant("train", train),
        ActionSetVariant("permuted_train", perm),
        ActionSetVariant("test", test),
        ActionSetVariant("sliced_test", test[:len(train)]),
        ActionSetVariant("all", train + test),
    ]


@dataclass
class EvalReport:
    variant: str
    seed: int
    env_id: int
    num_actions: int
    actions: np.ndarray
    rewards: np.ndarray
    regrets: np.ndarray | None = None
    episode_returns: list[float] | None = None

    @property
    def cumulative_regret(self) -> np.ndarray:
        if self.regrets is None:
            raise ValidationError("no regret series recorded for this rollout")
        return np.cumsum(self.regrets)

    @property
    def final_regret(self) -> float:
        return float(self.cumulative_regret[-1])

    @property
    def total_reward(self) -> float:
        return float(np.sum(self.rewards))

    def success_rate(self, window: int = 5) -> float:
        if self.episode_returns is None:
            raise ValidationError("no episodes recorded for this rollout")
        if not self.episode_returns:
            return 0.0
        tail = self.episode_returns[-window:]
        return float(np.mean(tail))


def actions_used(report: EvalReport) -> int:
    """Distinct action indices taken during the rollout."""
    return int(len(set(int(a) for a in report.actions)))


def normalized_score(final_return: float, random_return: float, expert_return: float) -> float:
    """0 at the random agent's return, 1 at the data-generating expert's."""
    denom = expert_return - random_return
    if denom == 0:
        raise ValidationError("normalized score undefined: expert equals random")
    return (final_return - random_return) / denom


def tuning_objective(n_a: int, num_actions: int, final_normalized_return: float) -> float:
    """Action coverage plus normalized return: n_a / N + score."""
    if num_actions <= 0:
        raise ValidationError("num_actions must be positive")
    return n_a / num_actions + final_normalized_return


def keyed_gumbel(seed: int, env_key: int, tick: int, identities: np.ndarray) -> np.ndarray:
    """One Gumbel draw per physical action identity.

    The key ignores the action's slot in the current action set, so a
    permuted action set receives identically permuted noise and paired
    rollouts stay aligned.
    """
    out = np.empty(len(identities))
    for j, ident in enumerate(identities):
        rng = np.random.default_rng(np.random.SeedSequence((seed, env_key, tick, int(ident))))
        out[j] = rng.gumbel()
    return out


def _select(logits: np.ndarray, mode: str, seed: int, env_key: int, tick: int,
            identities: np.ndarray) -> int:
    if mode == "argmax":
        return select_action(logits, "argmax")
    noise = keyed_gumbel(seed, env_key, tick, identities)
    return select_action(logits, "sample", noise=noise)


def rollout_bandits(actor, envs: list, num_steps: int, seed: int, select_mode: str = "sample",
                    env_keys: list[int] | None = None,
                    identities_per_env: list[np.ndarray] | None = None,
                    variant: str = "model", eval_seed: int | None = None) -> list[EvalReport]:
    """Lockstep rollout over single-episode bandit environments, recording
    per-step instantaneous regret (optimal mean minus chosen mean)."""
    b = len(envs)
    env_keys = list(range(b)) if env_keys is None else env_keys
    if identities_per_env is None:
        identities_per_env = [np.arange(env.num_actions) for env in envs]
    obs = [env.reset() for env in envs]
    actions = np.zeros((b, num_steps), dtype=np.int64)
    rewards = np.zeros((b, num_steps))
    regrets = np.zeros((b, num_steps))
    report_seed = seed if eval_seed is None else eval_seed
    for tick in range(num_steps):
        obs_arr = np.asarray(obs, dtype=np.float32)
        logits = actor.predict_logits(obs_arr) if hasattr(actor, "predict_logits") else None
        if logits is None:
            acts = actor.select_actions(obs_arr, tick)
        else:
            acts = [_select(logits[i], select_mode, seed, env_keys[i], tick, identities_per_env[i])
                    for i in range(b)]
        step_obs = obs
        results = []
        for i, env in enumerate(envs):
            regrets[i, tick] = env.optimal_mean() - env.step_mean(acts[i])
            results.append(env.step(acts[i]))
        for i in range(b):
            actions[i, tick] = acts[i]
            rewards[i, tick] = results[i].reward
        actor.observe(np.asarray(step_obs, dtype=np.float32),
                      acts, [r.reward for r in results], [False] * b)
        obs = [r.observation for r in results]
    return [EvalReport(variant=variant, seed=report_seed, env_id=i, num_actions=envs[i].num_actions,
                       actions=actions[i], rewards=rewards[i], regrets=regrets[i])
            for i in range(b)]


def rollout_darkrooms(actor, envs: list[DarkroomEnv], num_episodes: int, seed: int,
                      select_mode: str = "sample", env_keys: list[int] | None = None,
                      identities_per_env: list[np.ndarray] | None = None,
                      variant_names: list[str] | None = None,
                      eval_seed: int | None = None) -> list[EvalReport]:
    """Lockstep multi-episode rollout; context carries across episodes.

    Every environment runs for num_episodes * horizon composite steps, so
    each completes at least ``num_episodes`` episodes (successes finish
    early and a fresh episode starts immediately).
    """
    b = len(envs)
    env_keys = list(range(b)) if env_keys is None else env_keys
    if identities_per_env is None:
        identities_per_env = [np.arange(env.num_actions) for env in envs]
    names = ["model"] * b if variant_names is None else variant_names
    ticks = num_episodes * max(env.spec.horizon for env in envs)
    obs = [env.reset() for env in envs]
    actions = np.zeros((b, ticks), dtype=np.int64)
    rewards = np.zeros((b, ticks))
    episode_returns: list[list[float]] = [[] for _ in range(b)]
    episode_reward = np.zeros(b)
    report_seed = seed if eval_seed is None else eval_seed
    for tick in range(ticks):
        obs_arr = _scale_positions(obs, envs)
        logits = actor.predict_logits(obs_arr) if hasattr(actor, "predict_logits") else None
        if logits is None:
            acts = actor.select_actions(obs_arr, tick)
        else:
            acts = [_select(logits[i], select_mode, seed, env_keys[i], tick, identities_per_env[i])
                    for i in range(b)]
        step_obs = obs_arr
        next_obs = []
        dones = []
        for i, env in enumerate(envs):
            result = env.step(acts[i])
            actions[i, tick] = acts[i]
            rewards[i, tick] = result.reward
            episode_reward[i] += result.reward
            if result.done:
                episode_returns[i].append(float(episode_reward[i]))
                episode_reward[i] = 0.0
                next_obs.append(env.reset())
            else:
                next_obs.append(result.observation)
            dones.append(result.done)
        actor.observe(step_obs, acts, rewards[:, tick], dones)
        obs = next_obs
    return [EvalReport(variant=names[i], seed=report_seed, env_id=env_keys[i],
                       num_actions=envs[i].num_actions, actions=actions[i], rewards=rewards[i],
                       episode_returns=episode_returns[i])
            for i in range(b)]


def _scale_positions(obs: list, envs: list[DarkroomEnv]) -> np.ndarray:
    out = np.zeros((len(envs), 2), dtype=np.float32)
    for i, (pos, env) in enumerate(zip(obs, envs)):
        n = env.spec.grid_size
        out[i] = [2.0 * pos[0] / max(n - 1, 1) - 1.0, 2.0 * pos[1] / max(n - 1, 1) - 1.0]
    return out


class RandomActor:
    """Zero logits: sampling gives the uniform-random baseline."""

    def __init__(self, num_actions_per_env: list[int]):
        self.counts = list(num_actions_per_env)

    def num_actions(self, i: int) -> int:
        return self.counts[i]

    def predict_logits(self, obs_batch) -> list[np.ndarray]:
        return [np.zeros(n) for n in self.counts]

    def observe(self, obs_batch, actions, rewards, dones) -> None:
        pass


class ThompsonActor:
    """Per-environment Beta-Bernoulli posterior; selection uses its own
    generator stream, independent of the keyed-noise machinery."""

    def __init__(self, num_actions_per_env: list[int], seed: int):
        self.agents = [ThompsonSampling(n) for n in num_actions_per_env]
        self.rngs = [np.random.default_rng(np.random.SeedSequence((seed, i, 91)))
                     for i in range(len(num_actions_per_env))]

    def select_actions(self, obs_batch, tick) -> list[int]:
        return [agent.select(rng) for agent, rng in zip(self.agents, self.rngs)]

    def observe(self, obs_batch, actions, rewards, dones) -> None:
        for agent, a, r in zip(self.agents, actions, rewards):
            agent.update(int(a), float(r))


class LinUCBActor:
    def __init__(self, num_actions_per_env: list[int], feature_dim: int, alpha: float = 1.0):
        self.agents = [LinUCB(n, feature_dim, alpha=alpha) for n in num_actions_per_env]
        self._last_obs = None

    def select_actions(self, obs_batch, tick) -> list[int]:
        self._last_obs = np.asarray(obs_batch, dtype=float)
        return [agent.select(self._last_obs[i]) for i, agent in enumerate(self.agents)]

    def observe(self, obs_batch, actions, rewards, dones) -> None:
        for i, agent in enumerate(self.agents):
            agent.update(int(actions[i]), np.asarray(obs_batch[i], dtype=float), float(rewards[i]))


def composite_identity(action: tuple[int, ...]) -> int:
    """Stable integer id of a composite action, independent of any action
    set's ordering (base-5 digits over the atom indices)."""
    ident = 0
    for atom in reversed(action):
        ident = ident * 5 + int(atom)
    return ident


@dataclass
class ExperimentResult:
    rows: list[dict]
    summary: list[dict]
    curves: list[dict]


@dataclass
class _BanditCell:
    label: str
    mode: str | None
    arm_range: tuple[int, int] | None
    fixed_arms: int | None


def _bandit_cells(cfg: RunConfig) -> list[_BanditCell]:
    ev = cfg.eval
    arm_range = ev.arm_range if ev.arm_range is not None else tuple(cfg.data.arm_range)
    lo, hi = arm_range
    cells = []
    if cfg.family == "bernoulli":
        for dist in ev.distributions:
            cells.append(_BanditCell(f"bernoulli:{dist}:arms{lo}-{hi}", dist, arm_range, None))
        for n in ev.arm_counts:
            cells.append(_BanditCell(f"bernoulli:uniform:arms{n}", "uniform", None, int(n)))
    else:
        cells.append(_BanditCell(f"contextual:arms{lo}-{hi}", None, arm_range, None))
        for n in ev.arm_counts:
            cells.append(_BanditCell(f"contextual:arms{n}", None, None, int(n)))
    return cells


def _mean(values) -> float:
    return float(np.mean(values))


def _aggregate_bandit(reports: list[EvalReport], experiment: str, env_label: str, variant: str,
                      seed: int, rows: list, summary: list, curves: list) -> dict:
    for r in reports:
        rows.append({"experiment": experiment, "env": env_label, "variant": variant, "seed": seed,
                     "env_id": r.env_id, "num_actions": r.num_actions,
                     "actions_used": actions_used(r), "total_reward": r.total_reward,
                     "final_regret": r.final_regret, "success_rate": "", "episodes": ""})
    agg = {
        "final_regret": _mean([r.final_regret for r in reports]),
        "total_reward": _mean([r.total_reward for r in reports]),
        "actions_used": _mean([actions_used(r) for r in reports]),
        "num_actions": _mean([r.num_actions for r in reports]),
    }
    for metric, value in agg.items():
        summary.append({"experiment": experiment, "env": env_label, "variant": variant,
                        "seed": seed, "metric": metric, "value": value})
    curve = np.mean(np.stack([r.cumulative_regret for r in reports]), axis=0)
    for step, value in enumerate(curve):
        curves.append({"experiment": experiment, "env": env_label, "variant": variant,
                       "seed": seed, "step": step, "value": float(value)})
    return agg


def _evaluate_bandit_family(cfg: RunConfig, policy) -> ExperimentResult:
    from .policies import ADActor, ADPolicy, HeadlessActor

    rows: list[dict] = []
    summary: list[dict] = []
    curves: list[dict] = []
    ev = cfg.eval
    model_dim = policy.config.transformer.model_dim
    select_mode = ev.select_mode or policy.config.inference_mode
    expert_name = "thompson_sampling" if cfg.family == "bernoulli" else "linucb"
    for cell_idx, cell in enumerate(_bandit_cells(cfg)):
        for seed in ev.seeds:
            specs = []
            for env_id in range(ev.num_envs):
                rng = np.random.default_rng(np.random.SeedSequence((seed, cell_idx, env_id, 0)))
                if cell.fixed_arms is not None:
                    n = cell.fixed_arms
                else:
                    lo, hi = cell.arm_range
                    n = int(rng.integers(lo, hi + 1))
                if cfg.family == "bernoulli":
                    specs.append(sample_bernoulli_env(n, cell.mode, 0.0, rng))
                else:
                    specs.append(sample_contextual_env(n, cfg.data.feature_dim,
                                                       cfg.data.reward_std, rng))
            def make_envs():
                out = []
                for env_id, spec in enumerate(specs):
                    rng = np.random.default_rng(np.random.SeedSequence((seed, cell_idx, env_id, 1)))
                    out.append(BernoulliEnv(spec, rng) if cfg.family == "bernoulli"
                               else ContextualEnv(spec, rng))
                return out

            counts = [s.num_arms for s in specs]
            if isinstance(policy, ADPolicy):
                actor = ADActor(policy, counts)
            else:
                emaps = [regenerate(n, model_dim, policy.config.map_mode,
                                    np.random.default_rng(np.random.SeedSequence((seed, cell_idx, env_id, 2))))
                         for env_id, n in enumerate(counts)]
                actor = HeadlessActor(policy, emaps)
            reports = rollout_bandits(actor, make_envs(), ev.num_steps, seed=seed,
                                      select_mode=select_mode, variant="model")
            agg_model = _aggregate_bandit(reports, cfg.experiment, cell.label, "model", seed,
                                          rows, summary, curves)
            agg_by_name = {}
            for name in ev.baselines:
                if name == "random":
                    base_actor = RandomActor(counts)
                    label = "random"
                elif name == "expert" and cfg.family == "bernoulli":
                    base_actor = ThompsonActor(counts, seed)
                    label = expert_name
                elif name == "expert":
                    base_actor = LinUCBActor(counts, cfg.data.feature_dim, cfg.data.alpha_ucb)
                    label = expert_name
                else:
                    raise ValidationError(f"unknown baseline {name!r}")
                base_reports = rollout_bandits(base_actor, make_envs(), ev.num_steps, seed=seed,
                                               select_mode="sample", variant=label)
                agg_by_name[name] = _aggregate_bandit(base_reports, cfg.experiment, cell.label,
                                                      label, seed, rows, summary, curves)
            if {"random", "expert"} <= set(ev.baselines):
                score = normalized_score(-agg_model["final_regret"],
                                         -agg_by_name["random"]["final_regret"],
                                         -agg_by_name["expert"]["final_regret"])
                summary.append({"experiment": cfg.experiment, "env": cell.label, "variant": "model",
                                "seed": seed, "metric": "normalized_score", "value": score})
    return ExperimentResult(rows=rows, summary=summary, curves=curves)


def _evaluate_darkroom_family(cfg: RunConfig, policy, dataset: Dataset) -> ExperimentResult:
    from .action_map import select_rows
    from .policies import ADActor, ADPolicy, HeadlessActor

    if dataset.action_split is None or dataset.goal_split is None:
        raise ValidationError("darkroom evaluation needs a dataset with action and goal splits")
    rows: list[dict] = []
    summary: list[dict] = []
    curves: list[dict] = []
    ev = cfg.eval
    grid = dataset.config["grid_size"]
    horizon = dataset.config["horizon"]
    seq_len = dataset.config["seq_len"]
    full_order = dataset.action_split.full_set()
    index_of = {a: i for i, a in enumerate(full_order)}
    select_mode = ev.select_mode or policy.config.inference_mode
    model_dim = policy.config.transformer.model_dim
    for seed in ev.seeds:
        variant_rng = np.random.default_rng(np.random.SeedSequence((seed, 7001)))
        variants = [v for v in build_variants(dataset.action_split, variant_rng)
                    if v.name in ev.variants]
        for split_name in ev.goal_splits:
            goals = (dataset.goal_split.train_goals if split_name == "train"
                     else dataset.goal_split.test_goals)
            if ev.max_goals is not None:
                goals = goals[:ev.max_goals]
            env_label = f"darkroom:{split_name}_goals"
            canonical = {}
            if not isinstance(policy, ADPolicy):
                for g in goals:
                    gkey = g[0] * grid + g[1]
                    rng = np.random.default_rng(np.random.SeedSequence((seed, gkey, 3)))
                    canonical[g] = regenerate(len(full_order), model_dim,
                                              policy.config.map_mode, rng)
            envs, keys, idents, names, emaps, counts = [], [], [], [], [], []
            for variant in variants:
                for g in goals:
                    spec = DarkroomSpec(grid_size=grid, goal=tuple(g), horizon=horizon,
                                        seq_len=seq_len)
                    envs.append(DarkroomEnv(spec, variant.actions))
                    keys.append(g[0] * grid + g[1])
                    idents.append(np.array([composite_identity(a) for a in variant.actions]))
                    names.append(variant.name)
                    counts.append(len(variant.actions))
                    if not isinstance(policy, ADPolicy):
                        emaps.append(select_rows(canonical[g],
                                                 [index_of[a] for a in variant.actions]))
            if isinstance(policy, ADPolicy):
                actor = ADActor(policy, counts)
            else:
                actor = HeadlessActor(policy, emaps)
            reports = rollout_darkrooms(actor, envs, ev.num_episodes, seed=seed,
                                        select_mode=select_mode, env_keys=keys,
                                        identities_per_env=idents, variant_names=names)
            _aggregate_darkroom(reports, names, cfg.experiment, env_label, seed,
                                ev.success_window, rows, summary, curves)
            if "random" in ev.baselines:
                renvs = [DarkroomEnv(DarkroomSpec(grid_size=grid, goal=tuple(g), horizon=horizon,
                                                  seq_len=seq_len), v.actions)
                         for v in variants for g in goals]
                rnames = [f"random/{v.name}" for v in variants for g in goals]
                r_reports = rollout_darkrooms(RandomActor(counts), renvs, ev.num_episodes,
                                              seed=seed, select_mode="sample", env_keys=keys,
                                              identities_per_env=idents, variant_names=rnames)
                _aggregate_darkroom(r_reports, rnames, cfg.experiment, env_label, seed,
                                    ev.success_window, rows, summary, curves)
    return ExperimentResult(rows=rows, summary=summary, curves=curves)


def _aggregate_darkroom(reports: list[EvalReport], names: list[str], experiment: str,
                        env_label: str, seed: int, window: int, rows: list, summary: list,
                        curves: list) -> None:
    for r in reports:
        rows.append({"experiment": experiment, "env": env_label, "variant": r.variant,
                     "seed": seed, "env_id": r.env_id, "num_actions": r.num_actions,
                     "actions_used": actions_used(r), "total_reward": r.total_reward,
                     "final_regret": "", "success_rate": r.success_rate(window),
                     "episodes": len(r.episode_returns)})
    for name in sorted(set(names)):
        group = [r for r in reports if r.variant == name]
        agg = {
            "success_rate": _mean([r.success_rate(window) for r in group]),
            "total_reward": _mean([r.total_reward for r in group]),
            "actions_used": _mean([actions_used(r) for r in group]),
            "num_actions": _mean([r.num_actions for r in group]),
            "episodes": _mean([len(r.episode_returns) for r in group]),
        }
        for metric, value in agg.items():
            summary.append({"experiment": experiment, "env": env_label, "variant": name,
                            "seed": seed, "metric": metric, "value": value})
        curve = np.mean(np.stack([np.cumsum(r.rewards) for r in group]), axis=0)
        for step, value in enumerate(curve):
            curves.append({"experiment": experiment, "env": env_label, "variant": name,
                           "seed": seed, "step": step, "value": float(value)})


def evaluate_policy(cfg: RunConfig, policy, dataset: Dataset | None = None) -> ExperimentResult:
    """Run the evaluation protocol of the config's family on a policy."""
    if cfg.family in ("bernoulli", "contextual"):
        return _evaluate_bandit_family(cfg, policy)
    if dataset is None:
        raise ValidationError("darkroom evaluation needs the dataset (splits and env geometry)")
    return _evaluate_darkroom_family(cfg, policy, dataset)


def write_csv(path: str, columns: list[str], rows: list[dict]) -> None:
    os.makedirs(os.path.dirname(path), exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=columns, lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)


def run_experiment(cfg: RunConfig) -> dict:
    """Evaluate the run's trained checkpoint and emit report CSVs.

    Requires the dataset and checkpoint produced by the gen-data and train
    commands; raises a descriptive error when either is missing.
    """
    from .policies import load_policy

    ckpt = cfg.checkpoint_path()
    if not os.path.exists(ckpt):
        raise FileNotFoundError(f"checkpoint {ckpt} not found; run `icrl train` first")
    policy, _ = load_policy(ckpt)
    dataset = None
    if cfg.family == "darkroom":
        ds_dir = cfg.dataset_dir()
        if not os.path.isdir(ds_dir):
            raise FileNotFoundError(f"dataset {ds_dir} not found; run `icrl gen-data` first")
        dataset = load_dataset(ds_dir)
    result = evaluate_policy(cfg, policy, dataset)
    report_dir = os.path.join(cfg.out_dir, "reports", cfg.experiment)
    paths = {
        "rows": os.path.join(report_dir, "rows.csv"),
        "summary": os.path.join(report_dir, "summary.csv"),
        "curves": os.path.join(report_dir, "curves.csv"),
    }
    write_csv(paths["rows"], ROW_COLUMNS, result.rows)
    write_csv(paths["summary"], SUMMARY_COLUMNS, result.summary)
    write_csv(paths["curves"], CURVE_COLUMNS, result.curves)
    return {"paths": paths, "result": result}
