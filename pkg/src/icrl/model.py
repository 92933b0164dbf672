"""Minimal decoder-only transformer used by both sequence-model policies.

Token sequences carry a role tag per token (prompt / observation / action /
reward). Prompt tokens all share position id 0 and attend bidirectionally
to each other, so the block of action-set embeddings behaves as an
unordered set and the policy built on top is exactly equivariant to action
reordering. Interaction tokens use sequential position ids with rotary
attention and the usual autoregressive mask; every token can see the whole
prompt, and the prompt sees none of the interaction.

Gradients come from torch autograd and optimization from torch AdamW;
this module pins their contracts (finite-difference agreement, decoupled
weight decay) in the test suite and adds a deterministic checkpoint
container.
"""

from __future__ import annotations

import base64
import json
import struct
from dataclasses import asdict, dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import DivergenceError, ValidationError

ROLE_PROMPT, ROLE_OBS, ROLE_ACT, ROLE_REW = 0, 1, 2, 3

CHECKPOINT_MAGIC = b"ICRLCKPT1\n"
CHECKPOINT_VERSION = 1


@dataclass
class TransformerConfig:
    num_layers: int = 4
    num_heads: int = 4
    model_dim: int = 64
    max_seq_len: int = 512
    dropout_rate: float = 0.1
    attn_dropout_rate: float = 0.0
    ffn_hidden_mult: int = 2

    def __post_init__(self):
        if self.model_dim % self.num_heads != 0:
            raise ValidationError("model_dim must be divisible by num_heads")
        if (self.model_dim // self.num_heads) % 2 != 0:
            raise ValidationError("head dim must be even for rotary positions")
        if min(self.num_layers, self.num_heads, self.model_dim, self.max_seq_len) < 1:
            raise ValidationError("transformer dimensions must be positive")


class RMSNorm(nn.Module):
    def __init__(self, dim: int, eps: float = 1e-6):
        super().__init__()
        self.weight = nn.Parameter(torch.ones(dim))
        self.eps = eps

    def forward(self, x):
        scale = torch.rsqrt(x.pow(2).mean(-1, keepdim=True) + self.eps)
        return x * scale * self.weight


def rotary_angles(positions: torch.Tensor, head_dim: int, base: float = 10000.0) -> tuple[torch.Tensor, torch.Tensor]:
    """cos/sin tables for the given position ids; shape (..., L, head_dim/2)."""
    half = head_dim // 2
    inv_freq = base ** (-torch.arange(half, dtype=torch.float64) / half)
    freqs = positions.unsqueeze(-1).to(torch.float64) * inv_freq
    return freqs.cos(), freqs.sin()


def apply_rotary(x: torch.Tensor, cos: torch.Tensor, sin: torch.Tensor) -> torch.Tensor:
    # x: (B, H, L, head_dim); rotate concatenated halves
    cos = cos.to(x.dtype).unsqueeze(1)
    sin = sin.to(x.dtype).unsqueeze(1)
    x1, x2 = x.chunk(2, dim=-1)
    return torch.cat([x1 * cos - x2 * sin, x2 * cos + x1 * sin], dim=-1)


class Attention(nn.Module):
    def __init__(self, config: TransformerConfig):
        super().__init__()
        d = config.model_dim
        self.num_heads = config.num_heads
        self.head_dim = d // config.num_heads
        self.wq = nn.Linear(d, d, bias=False)
        self.wk = nn.Linear(d, d, bias=False)
        self.wv = nn.Linear(d, d, bias=False)
        self.wo = nn.Linear(d, d, bias=False)
        self.attn_dropout = config.attn_dropout_rate

    def forward(self, x, cos, sin, attn_mask):
        b, l, d = x.shape
        q = self.wq(x).view(b, l, self.num_heads, self.head_dim).transpose(1, 2)
        k = self.wk(x).view(b, l, self.num_heads, self.head_dim).transpose(1, 2)
        v = self.wv(x).view(b, l, self.num_heads, self.head_dim).transpose(1, 2)
        q = apply_rotary(q, cos, sin)
        k = apply_rotary(k, cos, sin)
        out = F.scaled_dot_product_attention(
            q, k, v, attn_mask=attn_mask,
            dropout_p=self.attn_dropout if self.training else 0.0,
        )
        return self.wo(out.transpose(1, 2).reshape(b, l, d))


class GatedFFN(nn.Module):
    def __init__(self, config: TransformerConfig):
        super().__init__()
        d = config.model_dim
        hidden = config.ffn_hidden_mult * d
        self.w_gate = nn.Linear(d, hidden, bias=False)
        self.w_up = nn.Linear(d, hidden, bias=False)
        self.w_down = nn.Linear(hidden, d, bias=False)

    def forward(self, x):
        return self.w_down(F.silu(self.w_gate(x)) * self.w_up(x))


class Block(nn.Module):
    def __init__(self, config: TransformerConfig):
        super().__init__()
        self.attn_norm = RMSNorm(config.model_dim)
        self.attn = Attention(config)
        self.ffn_norm = RMSNorm(config.model_dim)
        self.ffn = GatedFFN(config)
        self.dropout = nn.Dropout(config.dropout_rate)

    def forward(self, x, cos, sin, attn_mask):
        x = x + self.dropout(self.attn(self.attn_norm(x), cos, sin, attn_mask))
        x = x + self.dropout(self.ffn(self.ffn_norm(x)))
        return x


def build_attention_mask(positions: torch.Tensor, roles: torch.Tensor,
                         pad_mask: torch.Tensor | None, causal: bool) -> torch.Tensor:
    """Boolean (B, 1, L, L) mask, True where query i may attend key j.

    Causal mode: the prompt block is bidirectional within itself and blind
    to interaction tokens; interaction tokens see the full prompt plus every
    interaction token with position id <= their own.
    """
    is_prompt = roles == ROLE_PROMPT  # (B, L)
    if causal:
        qp = is_prompt.unsqueeze(2)
        kp = is_prompt.unsqueeze(1)
        ordered = positions.unsqueeze(2) >= positions.unsqueeze(1)
        allowed = kp | (~qp & ~kp & ordered)
    else:
        allowed = torch.ones(positions.shape[0], positions.shape[1], positions.shape[1],
                             dtype=torch.bool, device=positions.device)
    if pad_mask is not None:
        allowed = allowed & ~pad_mask.unsqueeze(1)
    return allowed.unsqueeze(1)


class Transformer(nn.Module):
    """Residual-stream output (no final norm): with all-zero parameters the
    forward pass is the identity on its input tokens."""

    def __init__(self, config: TransformerConfig):
        super().__init__()
        self.config = config
        self.blocks = nn.ModuleList(Block(config) for _ in range(config.num_layers))

    def forward(self, tokens: torch.Tensor, positions: torch.Tensor, roles: torch.Tensor,
                pad_mask: torch.Tensor | None = None, causal: bool = True) -> torch.Tensor:
        b, l, d = tokens.shape
        if l > self.config.max_seq_len:
            raise ValidationError(f"sequence length {l} exceeds max_seq_len {self.config.max_seq_len}")
        cos, sin = rotary_angles(positions, d // self.config.num_heads)
        attn_mask = build_attention_mask(positions, roles, pad_mask, causal)
        x = tokens
        for block in self.blocks:
            x = block(x, cos, sin, attn_mask)
        return x


def make_optimizer(module: nn.Module, lr: float, weight_decay: float,
                   beta1: float = 0.9, beta2: float = 0.999) -> torch.optim.AdamW:
    """AdamW with decoupled weight decay applied directly to the parameters."""
    return torch.optim.AdamW(module.parameters(), lr=lr, betas=(beta1, beta2),
                             weight_decay=weight_decay)


def apply_gradients(module: nn.Module, optimizer: torch.optim.Optimizer,
                    grad_clip: float | None = None) -> float:
    """Check gradients are finite, optionally clip, and step.

    Returns the pre-clip gradient norm. Raises DivergenceError on NaN/Inf
    gradients instead of corrupting the parameters.
    """
    total_sq = 0.0
    for name, p in module.named_parameters():
        if p.grad is None:
            continue
        if not torch.isfinite(p.grad).all():
            raise DivergenceError(f"non-finite gradient in parameter {name!r}")
        total_sq += float(p.grad.pow(2).sum())
    norm = total_sq ** 0.5
    if grad_clip is not None and norm > grad_clip > 0:
        for p in module.parameters():
            if p.grad is not None:
                p.grad.mul_(grad_clip / norm)
    optimizer.step()
    return norm


def save_checkpoint(path: str, module: nn.Module, config: dict,
                    rng_state: torch.Tensor | None = None, meta: dict | None = None) -> None:
    """Versioned, byte-deterministic container: JSON header plus named
    little-endian float32 tensor blobs."""
    tensors = []
    blobs = []
    offset = 0
    for name, p in sorted(module.state_dict().items()):
        arr = p.detach().to(torch.float32).numpy().astype("<f4")
        blob = arr.tobytes()
        tensors.append({"name": name, "shape": list(arr.shape), "offset": offset,
                        "nbytes": len(blob)})
        blobs.append(blob)
        offset += len(blob)
    header = {
        "version": CHECKPOINT_VERSION,
        "config": config,
        "meta": meta or {},
        "rng_state": None if rng_state is None else base64.b64encode(
            rng_state.numpy().tobytes()).decode("ascii"),
        "tensors": tensors,
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<Q", len(header_bytes)))
        f.write(header_bytes)
        for blob in blobs:
            f.write(blob)


def load_checkpoint(path: str) -> dict:
    """Returns {config, meta, rng_state, state} with float32 torch tensors."""
    with open(path, "rb") as f:
        magic = f.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise ValidationError(f"{path} is not a checkpoint file")
        (header_len,) = struct.unpack("<Q", f.read(8))
        header = json.loads(f.read(header_len).decode("utf-8"))
        if header["version"] != CHECKPOINT_VERSION:
            raise ValidationError(f"unsupported checkpoint version {header['version']}")
        payload = f.read()
    state = {}
    for t in header["tensors"]:
        raw = payload[t["offset"]:t["offset"] + t["nbytes"]]
        arr = np.frombuffer(raw, dtype="<f4").reshape(t["shape"]).copy()
        state[t["name"]] = torch.from_numpy(arr)
    rng_state = None
    if header.get("rng_state"):
        raw = base64.b64decode(header["rng_state"])
        rng_state = torch.from_numpy(np.frombuffer(raw, dtype=np.uint8).copy())
    return {"config": header["config"], "meta": header["meta"], "rng_state": rng_state,
            "state": state}
