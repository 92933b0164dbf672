"""Run configuration: one JSON document per run, validated up front.

Unknown keys are rejected so typos fail before any compute happens. The
same document drives data generation, training, and evaluation; ablation
flags from the command line override individual fields.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

from .errors import ValidationError
from .model import TransformerConfig
from .policies import TrainConfig

FAMILIES = ("bernoulli", "contextual", "darkroom")
POLICIES = ("headless", "ad")
ABLATIONS = ("no_prompt", "mse_loss", "normal_embeddings", "ad_permuted_training")


@dataclass
class DataConfig:
    num_envs: int = 1000
    num_steps: int = 100
    arm_range: tuple[int, int] = (4, 10)
    mode: str = "odd_high"
    flip_prob: float = 0.05
    feature_dim: int = 2
    reward_std: float = 1.0
    alpha_ucb: float = 1.0
    episodes_per_env: int = 200
    grid_size: int = 5
    horizon: int = 10
    seq_len: int = 2
    split_mode: str = "random"
    train_actions: int = 10
    test_actions: int = 15
    split_seed: int = 7
    goal_train_fraction: float = 0.5
    num_darkroom_envs: int | None = None
    q_lr: float = 0.1
    q_gamma: float = 0.9
    q_eps_start: float = 1.0
    q_eps_end: float = 0.05

    def __post_init__(self):
        lo, hi = self.arm_range
        if lo < 2 or hi < lo:
            raise ValidationError(f"data.arm_range must satisfy 2 <= lo <= hi, got {self.arm_range}")
        if not (0.0 <= self.flip_prob <= 1.0):
            raise ValidationError("data.flip_prob must be in [0, 1]")
        if self.num_envs < 1 or self.num_steps < 1:
            raise ValidationError("data.num_envs and data.num_steps must be >= 1")


@dataclass
class PolicyParams:
    tau: float = 0.5
    inference_mode: str = "sample"
    use_prompt: bool = True
    map_mode: str = "orthonormal"
    loss: str = "infonce"
    label_smoothing: float = 0.1
    head_width: int | None = None  # AD; None derives the width from the dataset

    def __post_init__(self):
        if self.tau <= 0:
            raise ValidationError("policy.tau must be > 0")
        if self.loss not in ("infonce", "mse"):
            raise ValidationError(f"unknown policy.loss {self.loss!r}")
        if self.map_mode not in ("orthonormal", "standard_normal"):
            raise ValidationError(f"unknown policy.map_mode {self.map_mode!r}")


@dataclass
class EvalConfig:
    num_envs: int = 100
    num_steps: int = 100
    seeds: tuple[int, ...] = (0, 1, 2)
    distributions: tuple[str, ...] = ("even_high", "uniform")
    arm_counts: tuple[int, ...] = ()
    arm_range: tuple[int, int] | None = None
    num_episodes: int = 15
    success_window: int = 5
    goal_splits: tuple[str, ...] = ("train", "test")
    variants: tuple[str, ...] = ("train", "permuted_train", "test", "sliced_test", "all")
    baselines: tuple[str, ...] = ("random", "expert")
    select_mode: str | None = None  # None uses the trained policy's mode
    max_goals: int | None = None

    def __post_init__(self):
        if self.num_envs < 1:
            raise ValidationError("eval.num_envs must be >= 1")
        if not self.seeds:
            raise ValidationError("eval.seeds must be non-empty")
        if self.select_mode not in (None, "sample", "argmax"):
            raise ValidationError(f"unknown eval.select_mode {self.select_mode!r}")


@dataclass
class RunConfig:
    experiment: str
    family: str
    policy: str = "headless"
    seed: int = 0
    out_dir: str = "runs/run"
    ablations: tuple[str, ...] = ()
    data: DataConfig = field(default_factory=DataConfig)
    model: TransformerConfig = field(default_factory=TransformerConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    policy_params: PolicyParams = field(default_factory=PolicyParams)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValidationError(f"unknown family {self.family!r}, expected one of {FAMILIES}")
        if self.policy not in POLICIES:
            raise ValidationError(f"unknown policy {self.policy!r}, expected one of {POLICIES}")
        for flag in self.ablations:
            if flag not in ABLATIONS:
                raise ValidationError(f"unknown ablation {flag!r}, expected one of {ABLATIONS}")

    @property
    def obs_dim(self) -> int:
        if self.family == "bernoulli":
            return 0
        if self.family == "contextual":
            return self.data.feature_dim
        return 2

    def apply_ablation(self, flag: str) -> None:
        if flag not in ABLATIONS:
            raise ValidationError(f"unknown ablation {flag!r}")
        if flag not in self.ablations:
            self.ablations = tuple(self.ablations) + (flag,)
        if flag == "no_prompt":
            self.policy_params.use_prompt = False
        elif flag == "mse_loss":
            self.policy_params.loss = "mse"
            self.policy_params.inference_mode = "argmax"
        elif flag == "normal_embeddings":
            self.policy_params.map_mode = "standard_normal"

    def dataset_dir(self) -> str:
        import os
        return os.path.join(self.out_dir, "dataset")

    def checkpoint_path(self) -> str:
        import os
        return os.path.join(self.out_dir, "checkpoint.ckpt")


_TUPLE_FIELDS = {"arm_range", "seeds", "distributions", "arm_counts", "goal_splits",
                 "variants", "baselines", "ablations"}


def _build(cls, doc: dict, path: str):
    if not isinstance(doc, dict):
        raise ValidationError(f"{path or 'config'} must be an object")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(doc) - set(fields)
    if unknown:
        raise ValidationError(f"unknown key(s) {sorted(unknown)} in {path or 'config'}")
    kwargs = {}
    for name, value in doc.items():
        sub = {"data": DataConfig, "model": TransformerConfig, "train": TrainConfig,
               "policy_params": PolicyParams, "eval": EvalConfig}.get(name)
        if sub is not None and cls is RunConfig:
            kwargs[name] = _build(sub, value, f"{path}.{name}" if path else name)
        elif name in _TUPLE_FIELDS and isinstance(value, list):
            kwargs[name] = tuple(tuple(v) if isinstance(v, list) else v for v in value)
        else:
            kwargs[name] = value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ValidationError(f"bad value in {path or 'config'}: {exc}") from exc


def config_from_dict(doc: dict) -> RunConfig:
    return _build(RunConfig, doc, "")


def config_from_json(path: str) -> RunConfig:
    with open(path) as f:
        try:
            doc = json.load(f)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"config {path} is not valid JSON: {exc}") from exc
    return config_from_dict(doc)


def config_to_dict(cfg: RunConfig) -> dict:
    return dataclasses.asdict(cfg)
