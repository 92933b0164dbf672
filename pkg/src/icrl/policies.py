"""Sequence-model policies trained on logged learning histories.

Two variants:

* ``HeadlessPolicy`` — no output head. The transformer's raw model_dim
  vector at each observation token is the prediction of the next action's
  embedding; a fresh random embedding map is drawn every optimizer step and
  the InfoNCE objective pulls the prediction toward the taken action's
  embedding against all other actions in the set.
* ``ADPolicy`` — classic algorithm-distillation baseline with a learned
  per-action input embedding table and a fixed-width linear head trained
  with label-smoothed cross-entropy. Its head width is set at construction
  and cannot grow afterwards.

Input layout per window: N prompt tokens (headless only, one per action in
the current set) followed by (obs, action, reward) token triples per step.
Predictions are read at the obs-token positions.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .action_map import EmbeddingMap, regenerate, select_action
from .data import Dataset, LearningHistory
from .envs import DarkroomSpec
from .errors import ActionSpaceSizeError, DivergenceError, ValidationError
from .model import (
    ROLE_ACT,
    ROLE_OBS,
    ROLE_PROMPT,
    ROLE_REW,
    Transformer,
    TransformerConfig,
    apply_gradients,
    make_optimizer,
)


@dataclass
class PolicyConfig:
    obs_dim: int
    transformer: TransformerConfig = field(default_factory=TransformerConfig)
    tau: float = 0.5
    inference_mode: str = "sample"
    use_prompt: bool = True
    map_mode: str = "orthonormal"
    loss: str = "infonce"

    def __post_init__(self):
        if self.tau <= 0:
            raise ValidationError("tau must be > 0")
        if self.loss not in ("infonce", "mse"):
            raise ValidationError(f"unknown loss {self.loss!r}")
        if self.inference_mode not in ("sample", "argmax"):
            raise ValidationError(f"unknown inference mode {self.inference_mode!r}")
        if self.loss == "mse":
            # direct embedding regression has no probabilistic reading;
            # nearest neighbor is the only sensible decode
            self.inference_mode = "argmax"


@dataclass
class ADConfig:
    obs_dim: int
    head_width: int
    transformer: TransformerConfig = field(default_factory=TransformerConfig)
    label_smoothing: float = 0.1
    inference_mode: str = "sample"
    permuted_training: bool = False

    def __post_init__(self):
        if not (0.0 <= self.label_smoothing < 1.0):
            raise ValidationError("label_smoothing must be in [0, 1)")
        if self.head_width < 1:
            raise ValidationError("head_width must be >= 1")
        if self.inference_mode not in ("sample", "argmax"):
            raise ValidationError(f"unknown inference mode {self.inference_mode!r}")


@dataclass
class TrainConfig:
    steps: int = 1500
    batch_size: int = 32
    seq_steps: int = 100
    lr: float = 1e-3
    warmup_steps: int = 100
    weight_decay: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    grad_clip: float = 1.0
    seed: int = 0

    def lr_at(self, step: int) -> float:
        if self.warmup_steps > 0 and step < self.warmup_steps:
            return self.lr * (step + 1) / self.warmup_steps
        return self.lr


def _interleave(obs_tok: torch.Tensor, act_tok: torch.Tensor, rew_tok: torch.Tensor) -> torch.Tensor:
    b, s, d = obs_tok.shape
    return torch.stack([obs_tok, act_tok, rew_tok], dim=2).reshape(b, 3 * s, d)


class _SequenceModel(nn.Module):
    """Shared token construction: learned affine projections for
    observations and rewards, raw embedding rows for actions."""

    def __init__(self, obs_dim: int, config: TransformerConfig):
        super().__init__()
        self.obs_dim = obs_dim
        self.model_dim = config.model_dim
        self.transformer = Transformer(config)
        self.obs_proj = nn.Linear(obs_dim, config.model_dim)
        self.rew_proj = nn.Linear(1, config.model_dim)

    def run(self, prompt: torch.Tensor | None, obs: torch.Tensor, act_tok: torch.Tensor,
            rew: torch.Tensor, step_pad: torch.Tensor | None = None,
            query_obs: torch.Tensor | None = None,
            prompt_pad: torch.Tensor | None = None) -> torch.Tensor:
        """Forward over [prompt, (o a r) * S, (o_query)?]; returns the full
        per-position output. ``step_pad`` marks padded steps (B, S);
        ``prompt_pad`` marks unused prompt slots when batch elements carry
        action sets of different sizes."""
        b, s = obs.shape[0], obs.shape[1]
        obs_tok = self.obs_proj(obs)
        rew_tok = self.rew_proj(rew.unsqueeze(-1))
        parts = []
        roles = []
        pads = []
        n_prompt = 0
        if prompt is not None:
            n_prompt = prompt.shape[-2]
            parts.append(prompt if prompt.dim() == 3 else prompt.unsqueeze(0).expand(b, -1, -1))
            roles.append(torch.full((b, n_prompt), ROLE_PROMPT, dtype=torch.long))
            if prompt_pad is not None:
                pads.append(prompt_pad)
            else:
                pads.append(torch.zeros(b, n_prompt, dtype=torch.bool))
        if s > 0:
            parts.append(_interleave(obs_tok, act_tok, rew_tok))
            step_roles = torch.tensor([ROLE_OBS, ROLE_ACT, ROLE_REW], dtype=torch.long)
            roles.append(step_roles.repeat(s).unsqueeze(0).expand(b, -1))
            if step_pad is None:
                pads.append(torch.zeros(b, 3 * s, dtype=torch.bool))
            else:
                pads.append(step_pad.unsqueeze(-1).expand(b, s, 3).reshape(b, 3 * s))
        if query_obs is not None:
            parts.append(self.obs_proj(query_obs).unsqueeze(1))
            roles.append(torch.full((b, 1), ROLE_OBS, dtype=torch.long))
            pads.append(torch.zeros(b, 1, dtype=torch.bool))
        tokens = torch.cat(parts, dim=1)
        roles = torch.cat(roles, dim=1)
        pad_mask = torch.cat(pads, dim=1)
        n_inter = tokens.shape[1] - n_prompt
        positions = torch.cat([
            torch.zeros(n_prompt, dtype=torch.long),
            torch.arange(1, n_inter + 1, dtype=torch.long),
        ]).unsqueeze(0).expand(b, -1)
        return self.transformer(tokens, positions, roles, pad_mask=pad_mask, causal=True)


class HeadlessPolicy(nn.Module):
    def __init__(self, config: PolicyConfig):
        super().__init__()
        self.config = config
        self.core = _SequenceModel(config.obs_dim, config.transformer)

    @property
    def model_dim(self) -> int:
        return self.core.model_dim

    def forward_windows(self, prompt: torch.Tensor | None, obs: torch.Tensor,
                        act_emb: torch.Tensor, rew: torch.Tensor,
                        step_pad: torch.Tensor | None = None) -> torch.Tensor:
        """Predicted next-action embedding at every obs-token position; (B, S, D)."""
        s = obs.shape[1]
        out = self.core.run(prompt, obs, act_emb, rew, step_pad=step_pad)
        n_prompt = 0 if prompt is None else prompt.shape[-2]
        idx = n_prompt + 3 * torch.arange(s)
        return out[:, idx, :]

    def predict_next(self, prompt: torch.Tensor | None, obs: torch.Tensor, act_emb: torch.Tensor,
                     rew: torch.Tensor, query_obs: torch.Tensor,
                     step_pad: torch.Tensor | None = None,
                     prompt_pad: torch.Tensor | None = None) -> torch.Tensor:
        """Prediction for the pending step given the rolling context; (B, D)."""
        out = self.core.run(prompt, obs, act_emb, rew, step_pad=step_pad, query_obs=query_obs,
                            prompt_pad=prompt_pad)
        return out[:, -1, :]


class ADPolicy(nn.Module):
    def __init__(self, config: ADConfig):
        super().__init__()
        self.config = config
        self.core = _SequenceModel(config.obs_dim, config.transformer)
        self.act_embed = nn.Embedding(config.head_width, config.transformer.model_dim)
        self.head = nn.Linear(config.transformer.model_dim, config.head_width)

    @property
    def head_width(self) -> int:
        return self.config.head_width

    def _check_actions(self, num_actions: int) -> None:
        if num_actions > self.head_width:
            raise ActionSpaceSizeError(
                f"action set of size {num_actions} exceeds the fixed output head "
                f"({self.head_width}); the classifier head ties each output "
                f"dimension to one action, so the model must be retrained with a "
                f"wider head to act on this set")

    def forward_windows(self, obs: torch.Tensor, act_idx: torch.Tensor, rew: torch.Tensor,
                        num_actions: int, step_pad: torch.Tensor | None = None) -> torch.Tensor:
        """Action logits over the first ``num_actions`` head slots; (B, S, num_actions)."""
        self._check_actions(num_actions)
        if act_idx.numel() and int(act_idx.max()) >= self.head_width:
            raise ActionSpaceSizeError(
                f"action index {int(act_idx.max())} exceeds the fixed output head "
                f"({self.head_width}); retrain with a wider head")
        s = obs.shape[1]
        out = self.core.run(None, obs, self.act_embed(act_idx), rew, step_pad=step_pad)
        idx = 3 * torch.arange(s)
        return self.head(out[:, idx, :])[..., :num_actions]

    def predict_next(self, obs: torch.Tensor, act_idx: torch.Tensor, rew: torch.Tensor,
                     query_obs: torch.Tensor, num_actions: int,
                     step_pad: torch.Tensor | None = None) -> torch.Tensor:
        self._check_actions(num_actions)
        out = self.core.run(None, obs, self.act_embed(act_idx), rew, step_pad=step_pad,
                            query_obs=query_obs)
        return self.head(out[:, -1, :])[..., :num_actions]


def infonce_loss(predictions: torch.Tensor, target_indices: torch.Tensor,
                 map_rows: torch.Tensor, tau: float) -> torch.Tensor:
    """Mean negative log-softmax of dot-product similarity at temperature tau,
    with every action in the current set as a negative."""
    if tau <= 0:
        raise ValidationError("tau must be > 0")
    logits = predictions @ map_rows.T / tau
    return F.cross_entropy(logits, target_indices)


def mse_loss(predictions: torch.Tensor, target_indices: torch.Tensor,
             map_rows: torch.Tensor) -> torch.Tensor:
    """Mean squared error against the taken action's embedding row."""
    return F.mse_loss(predictions, map_rows[target_indices])


def history_arrays(history: LearningHistory, obs_dim: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(obs, actions, rewards) as dense arrays; darkroom coordinates are
    scaled to [-1, 1]."""
    t = len(history)
    if obs_dim == 0:
        obs = np.zeros((t, 0), dtype=np.float32)
    else:
        obs = np.asarray([list(o) for o in history.observations], dtype=np.float32)
        if isinstance(history.env_spec, DarkroomSpec):
            n = history.env_spec.grid_size
            obs = 2.0 * obs / max(n - 1, 1) - 1.0
    if obs.shape != (t, obs_dim):
        raise ValidationError(f"observation shape {obs.shape} != ({t}, {obs_dim})")
    return obs, history.actions.astype(np.int64), history.rewards.astype(np.float32)


class _BatchSampler:
    """Size-bucketed window sampling: every element of a batch comes from a
    history with the same action-set size so one embedding map serves the
    whole batch."""

    def __init__(self, dataset: Dataset, obs_dim: int, seq_steps: int):
        self.seq_steps = seq_steps
        self.arrays = [history_arrays(h, obs_dim) for h in dataset.histories]
        self.buckets: dict[int, list[int]] = {}
        for i, h in enumerate(dataset.histories):
            self.buckets.setdefault(h.action_set_size, []).append(i)
        self.sizes = sorted(self.buckets)
        self.weights = np.array([len(self.buckets[s]) for s in self.sizes], dtype=float)
        self.weights /= self.weights.sum()

    def sample(self, batch_size: int, rng: np.random.Generator):
        size = int(rng.choice(self.sizes, p=self.weights))
        members = self.buckets[size]
        picks = rng.integers(len(members), size=batch_size)
        s = self.seq_steps
        obs = np.zeros((batch_size, s, self.arrays[0][0].shape[-1]), dtype=np.float32)
        acts = np.zeros((batch_size, s), dtype=np.int64)
        rews = np.zeros((batch_size, s), dtype=np.float32)
        pad = np.ones((batch_size, s), dtype=bool)
        for b, pick in enumerate(picks):
            o, a, r = self.arrays[members[int(pick)]]
            t = len(a)
            if t > s:
                start = int(rng.integers(0, t - s + 1))
                o, a, r = o[start:start + s], a[start:start + s], r[start:start + s]
                t = s
            obs[b, :t] = o
            acts[b, :t] = a
            rews[b, :t] = r
            pad[b, :t] = False
        return obs, acts, rews, pad, size


def _step_seeds(seed: int, step: int) -> tuple[np.random.Generator, np.random.Generator, int]:
    ss = np.random.SeedSequence((seed, step))
    batch_ss, map_ss = ss.spawn(2)
    torch_seed = int(ss.generate_state(1, dtype=np.uint64)[0] >> 1)
    return np.random.default_rng(batch_ss), np.random.default_rng(map_ss), torch_seed


def _headless_step_loss(policy: HeadlessPolicy, sampler: _BatchSampler, train_config: TrainConfig,
                        step: int) -> tuple[torch.Tensor, EmbeddingMap]:
    """Build the batch and embedding map for one optimizer step and return
    the loss; deterministic given (seed, step) so a checkpointed model can
    reproduce its final training loss exactly."""
    batch_rng, map_rng, torch_seed = _step_seeds(train_config.seed, step)
    obs, acts, rews, pad, size = sampler.sample(train_config.batch_size, batch_rng)
    emap = regenerate(size, policy.model_dim, policy.config.map_mode, map_rng)
    rows = torch.from_numpy(np.ascontiguousarray(emap.rows)).float()
    obs_t = torch.from_numpy(obs)
    acts_t = torch.from_numpy(acts)
    rews_t = torch.from_numpy(rews)
    pad_t = torch.from_numpy(pad)
    torch.manual_seed(torch_seed)
    prompt = rows if policy.config.use_prompt else None
    preds = policy.forward_windows(prompt, obs_t, rows[acts_t], rews_t, step_pad=pad_t)
    valid = ~pad_t
    preds_v = preds[valid]
    targets_v = acts_t[valid]
    if policy.config.loss == "infonce":
        loss = infonce_loss(preds_v, targets_v, rows, policy.config.tau)
    else:
        loss = mse_loss(preds_v, targets_v, rows)
    return loss, emap


def headless_train(dataset: Dataset, policy_config: PolicyConfig, train_config: TrainConfig,
                   on_step=None) -> tuple[HeadlessPolicy, list[dict]]:
    """Train a headless policy; returns the model and the per-step loss curve
    (step, loss, lr, map_seed)."""
    torch.manual_seed(train_config.seed)
    policy = HeadlessPolicy(policy_config)
    sampler = _BatchSampler(dataset, policy_config.obs_dim, train_config.seq_steps)
    optimizer = make_optimizer(policy, train_config.lr, train_config.weight_decay,
                               train_config.beta1, train_config.beta2)
    curve = []
    policy.train()
    for step in range(train_config.steps):
        lr = train_config.lr_at(step)
        for group in optimizer.param_groups:
            group["lr"] = lr
        loss, emap = _headless_step_loss(policy, sampler, train_config, step)
        if not torch.isfinite(loss):
            raise DivergenceError(f"non-finite loss {float(loss)} at step {step}")
        optimizer.zero_grad()
        loss.backward()
        apply_gradients(policy, optimizer, train_config.grad_clip)
        curve.append({"step": step, "loss": float(loss), "lr": lr, "map_seed": step})
        if on_step is not None:
            on_step(step, float(loss), emap)
    policy.eval()
    return policy, curve


def headless_step_loss_eval(policy: HeadlessPolicy, dataset: Dataset, train_config: TrainConfig,
                            step: int) -> float:
    """Recompute the training loss of one step without updating parameters."""
    sampler = _BatchSampler(dataset, policy.config.obs_dim, train_config.seq_steps)
    was_training = policy.training
    policy.train()
    with torch.no_grad():
        loss, _ = _headless_step_loss(policy, sampler, train_config, step)
    policy.train(was_training)
    return float(loss)


def _ad_step_loss(policy: ADPolicy, sampler: _BatchSampler, train_config: TrainConfig,
                  step: int) -> torch.Tensor:
    batch_rng, _, torch_seed = _step_seeds(train_config.seed, step)
    obs, acts, rews, pad, size = sampler.sample(train_config.batch_size, batch_rng)
    if policy.config.permuted_training:
        # relabel the action set independently per batch element so no head
        # slot can latch onto a fixed action meaning
        for b in range(len(acts)):
            perm = batch_rng.permutation(size)
            acts[b] = perm[acts[b]]
    obs_t = torch.from_numpy(obs)
    acts_t = torch.from_numpy(acts)
    rews_t = torch.from_numpy(rews)
    pad_t = torch.from_numpy(pad)
    torch.manual_seed(torch_seed)
    logits = policy.forward_windows(obs_t, acts_t, rews_t, size, step_pad=pad_t)
    valid = ~pad_t
    return F.cross_entropy(logits[valid], acts_t[valid],
                           label_smoothing=policy.config.label_smoothing)


def ad_train(dataset: Dataset, ad_config: ADConfig, train_config: TrainConfig,
             on_step=None) -> tuple[ADPolicy, list[dict]]:
    """Train the fixed-head baseline with label-smoothed cross-entropy."""
    max_size = max(h.action_set_size for h in dataset.histories)
    if max_size > ad_config.head_width:
        raise ActionSpaceSizeError(
            f"dataset uses {max_size} actions but the head has width "
            f"{ad_config.head_width}; the model must be built (and retrained) "
            f"with a head at least that wide")
    torch.manual_seed(train_config.seed)
    policy = ADPolicy(ad_config)
    sampler = _BatchSampler(dataset, ad_config.obs_dim, train_config.seq_steps)
    optimizer = make_optimizer(policy, train_config.lr, train_config.weight_decay,
                               train_config.beta1, train_config.beta2)
    curve = []
    policy.train()
    for step in range(train_config.steps):
        lr = train_config.lr_at(step)
        for group in optimizer.param_groups:
            group["lr"] = lr
        loss = _ad_step_loss(policy, sampler, train_config, step)
        if not torch.isfinite(loss):
            raise DivergenceError(f"non-finite loss {float(loss)} at step {step}")
        optimizer.zero_grad()
        loss.backward()
        apply_gradients(policy, optimizer, train_config.grad_clip)
        curve.append({"step": step, "loss": float(loss), "lr": lr, "map_seed": -1})
        if on_step is not None:
            on_step(step, float(loss), None)
    policy.eval()
    return policy, curve


def ad_step_loss_eval(policy: ADPolicy, dataset: Dataset, train_config: TrainConfig,
                      step: int) -> float:
    sampler = _BatchSampler(dataset, policy.config.obs_dim, train_config.seq_steps)
    was_training = policy.training
    policy.train()
    with torch.no_grad():
        loss = _ad_step_loss(policy, sampler, train_config, step)
    policy.train(was_training)
    return float(loss)


class RollingContext:
    """Per-environment interaction history for inference, with overflow
    handling that drops the oldest whole episodes first (oldest single steps
    when only one unfinished episode remains)."""

    def __init__(self, obs_dim: int, model_dim: int):
        self.obs: list[np.ndarray] = []
        self.act_emb: list[np.ndarray] = []
        self.act_idx: list[int] = []
        self.rew: list[float] = []
        self.boundary: list[bool] = []
        self.obs_dim = obs_dim
        self.model_dim = model_dim

    def __len__(self) -> int:
        return len(self.rew)

    def append(self, obs, act_idx: int, act_emb: np.ndarray, reward: float, done: bool) -> None:
        self.obs.append(np.asarray(obs, dtype=np.float32).reshape(self.obs_dim))
        self.act_idx.append(act_idx)
        self.act_emb.append(np.asarray(act_emb, dtype=np.float32))
        self.rew.append(float(reward))
        self.boundary.append(bool(done))

    def _drop(self, count: int) -> None:
        del self.obs[:count], self.act_emb[:count], self.act_idx[:count]
        del self.rew[:count], self.boundary[:count]

    def truncate(self, max_steps: int) -> None:
        while len(self) > max_steps:
            if True in self.boundary[:-1]:
                self._drop(self.boundary.index(True) + 1)
            else:
                self._drop(1)


class HeadlessActor:
    """Batched rollout driver; one embedding map per environment, fixed for
    the whole rollout. Different elements may use maps of different sizes
    (prompts are padded to the longest)."""

    def __init__(self, policy: HeadlessPolicy, emaps: list[EmbeddingMap]):
        self.policy = policy
        self.policy.eval()
        self.emaps = emaps
        self.contexts = [RollingContext(policy.config.obs_dim, policy.model_dim) for _ in emaps]
        n_prompt = max(m.num_actions for m in emaps) if policy.config.use_prompt else 0
        self.max_steps = (policy.config.transformer.max_seq_len - n_prompt - 1) // 3

    def num_actions(self, i: int) -> int:
        return self.emaps[i].num_actions

    def predict_logits(self, obs_batch: np.ndarray) -> list[np.ndarray]:
        b = len(self.contexts)
        for ctx in self.contexts:
            ctx.truncate(self.max_steps)
        t = max(len(ctx) for ctx in self.contexts)
        d = self.policy.model_dim
        obs_dim = self.policy.config.obs_dim
        obs = np.zeros((b, t, obs_dim), dtype=np.float32)
        act_emb = np.zeros((b, t, d), dtype=np.float32)
        rew = np.zeros((b, t), dtype=np.float32)
        pad = np.ones((b, t), dtype=bool)
        for i, ctx in enumerate(self.contexts):
            k = len(ctx)
            if k:
                # left-pad: real steps go to the rightmost slots
                obs[i, t - k:] = np.stack(ctx.obs)
                act_emb[i, t - k:] = np.stack(ctx.act_emb)
                rew[i, t - k:] = ctx.rew
                pad[i, t - k:] = False
        prompt = None
        prompt_pad = None
        if self.policy.config.use_prompt:
            n_max = max(m.num_actions for m in self.emaps)
            prompt_np = np.zeros((b, n_max, d), dtype=np.float32)
            prompt_pad_np = np.ones((b, n_max), dtype=bool)
            for i, m in enumerate(self.emaps):
                prompt_np[i, :m.num_actions] = m.rows
                prompt_pad_np[i, :m.num_actions] = False
            prompt = torch.from_numpy(prompt_np)
            prompt_pad = torch.from_numpy(prompt_pad_np)
        query = torch.from_numpy(np.asarray(obs_batch, dtype=np.float32).reshape(b, obs_dim))
        with torch.no_grad():
            preds = self.policy.predict_next(
                prompt, torch.from_numpy(obs), torch.from_numpy(act_emb),
                torch.from_numpy(rew), query, step_pad=torch.from_numpy(pad),
                prompt_pad=prompt_pad)
        preds_np = preds.numpy().astype(np.float64)
        return [preds_np[i] @ self.emaps[i].rows.T for i in range(b)]

    def observe(self, obs_batch, actions, rewards, dones) -> None:
        for i, ctx in enumerate(self.contexts):
            ctx.append(np.asarray(obs_batch[i]), int(actions[i]),
                       self.emaps[i].rows[int(actions[i])], rewards[i], dones[i])


class ADActor:
    """Batched rollout driver for the fixed-head baseline."""

    def __init__(self, policy: ADPolicy, num_actions_per_env: list[int]):
        self.policy = policy
        self.policy.eval()
        for n in num_actions_per_env:
            policy._check_actions(n)
        self.action_counts = list(num_actions_per_env)
        self.contexts = [RollingContext(policy.config.obs_dim, policy.config.transformer.model_dim)
                         for _ in num_actions_per_env]
        self.max_steps = (policy.config.transformer.max_seq_len - 1) // 3

    def num_actions(self, i: int) -> int:
        return self.action_counts[i]

    def predict_logits(self, obs_batch: np.ndarray) -> list[np.ndarray]:
        b = len(self.contexts)
        for ctx in self.contexts:
            ctx.truncate(self.max_steps)
        t = max(len(ctx) for ctx in self.contexts)
        obs_dim = self.policy.config.obs_dim
        obs = np.zeros((b, t, obs_dim), dtype=np.float32)
        act_idx = np.zeros((b, t), dtype=np.int64)
        rew = np.zeros((b, t), dtype=np.float32)
        pad = np.ones((b, t), dtype=bool)
        for i, ctx in enumerate(self.contexts):
            k = len(ctx)
            if k:
                obs[i, t - k:] = np.stack(ctx.obs)
                act_idx[i, t - k:] = ctx.act_idx
                rew[i, t - k:] = ctx.rew
                pad[i, t - k:] = False
        query = torch.from_numpy(np.asarray(obs_batch, dtype=np.float32).reshape(b, obs_dim))
        with torch.no_grad():
            logits = self.policy.predict_next(
                torch.from_numpy(obs), torch.from_numpy(act_idx), torch.from_numpy(rew),
                query, max(self.action_counts), step_pad=torch.from_numpy(pad))
        logits_np = logits.numpy().astype(np.float64)
        return [logits_np[i, :self.action_counts[i]] for i in range(b)]

    def observe(self, obs_batch, actions, rewards, dones) -> None:
        for i, ctx in enumerate(self.contexts):
            ctx.append(np.asarray(obs_batch[i]), int(actions[i]), np.zeros(0), rewards[i], dones[i])


def policy_act(actor, obs, mode: str, rng: np.random.Generator | None = None,
               noise: np.ndarray | None = None) -> int:
    """Single-environment convenience wrapper over a batched actor."""
    logits = actor.predict_logits(np.asarray(obs, dtype=np.float32).reshape(1, -1))[0]
    return select_action(logits, mode, rng=rng, noise=noise)


def save_policy(path: str, policy, meta: dict | None = None) -> None:
    """Checkpoint a policy with enough config echo to rebuild it."""
    from dataclasses import asdict

    from .model import save_checkpoint

    if isinstance(policy, HeadlessPolicy):
        config = {"policy": "headless", "policy_config": asdict(policy.config)}
    elif isinstance(policy, ADPolicy):
        config = {"policy": "ad", "policy_config": asdict(policy.config)}
    else:
        raise ValidationError(f"cannot checkpoint object of type {type(policy).__name__}")
    save_checkpoint(path, policy, config, rng_state=torch.get_rng_state(), meta=meta)


def load_policy(path: str):
    """Rebuild a policy from a checkpoint; returns (policy, checkpoint doc)."""
    from .model import load_checkpoint

    doc = load_checkpoint(path)
    kind = doc["config"].get("policy")
    params = dict(doc["config"]["policy_config"])
    params["transformer"] = TransformerConfig(**params["transformer"])
    if kind == "headless":
        policy = HeadlessPolicy(PolicyConfig(**params))
    elif kind == "ad":
        policy = ADPolicy(ADConfig(**params))
    else:
        raise ValidationError(f"checkpoint has unknown policy kind {kind!r}")
    policy.load_state_dict({k: v for k, v in doc["state"].items()})
    policy.eval()
    return policy, doc
