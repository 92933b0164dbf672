"""Random action encodings.

Every action index in the current action set gets a random vector. During
training a fresh map is drawn at every optimizer step; during evaluation a
single map is drawn at rollout start and held fixed. Orthonormal rows keep
the similarity decoder from leaking probability mass between actions;
standard-normal rows exist as the degraded comparison mode.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError

logger = logging.getLogger(__name__)

MODES = ("orthonormal", "standard_normal")


@dataclass(frozen=True)
class EmbeddingMap:
    rows: np.ndarray  # (num_actions, embed_dim), float64, immutable
    mode: str

    @property
    def num_actions(self) -> int:
        return self.rows.shape[0]

    @property
    def embed_dim(self) -> int:
        return self.rows.shape[1]


def _semi_orthogonal(num_actions: int, embed_dim: int, rng: np.random.Generator) -> np.ndarray:
    # QR of a Gaussian draw, sign-corrected so the distribution is Haar
    # uniform. For num_actions <= embed_dim the rows are orthonormal; in the
    # overcomplete case the columns are, which keeps row similarities small.
    rows, cols = num_actions, embed_dim
    gauss = rng.normal(size=(max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(gauss)
    q = q * np.sign(np.diag(r))
    if rows < cols:
        return q.T[:rows]
    return q[:rows]


def regenerate(num_actions: int, embed_dim: int, mode: str, rng: np.random.Generator) -> EmbeddingMap:
    """Draw a fresh embedding map."""
    if num_actions < 1 or embed_dim < 1:
        raise ValidationError("num_actions and embed_dim must be >= 1")
    if mode not in MODES:
        raise ValidationError(f"unknown embedding mode {mode!r}")
    if num_actions > embed_dim and mode == "orthonormal":
        logger.warning("num_actions=%d exceeds embed_dim=%d; rows cannot be mutually orthogonal",
                       num_actions, embed_dim)
    if mode == "orthonormal":
        rows = _semi_orthogonal(num_actions, embed_dim, rng)
    else:
        rows = rng.normal(size=(num_actions, embed_dim))
    rows = np.ascontiguousarray(rows, dtype=np.float64)
    rows.setflags(write=False)
    return EmbeddingMap(rows=rows, mode=mode)


def encode(emap: EmbeddingMap, action_indices) -> np.ndarray:
    """Row lookup; equal indices always map to identical vectors."""
    idx = np.asarray(action_indices)
    if idx.size and (idx.min() < 0 or idx.max() >= emap.num_actions):
        raise IndexError(f"action index out of range for a {emap.num_actions}-action map")
    return emap.rows[idx]


def decode_logits(emap: EmbeddingMap, predicted_embedding: np.ndarray) -> np.ndarray:
    """Dot-product similarity of a prediction against every action row."""
    pred = np.asarray(predicted_embedding, dtype=np.float64)
    if pred.shape[-1] != emap.embed_dim:
        raise ValidationError(f"embedding dim {pred.shape[-1]} != map dim {emap.embed_dim}")
    return pred @ emap.rows.T


def select_action(logits: np.ndarray, mode: str, rng: np.random.Generator | None = None,
                  noise: np.ndarray | None = None) -> int:
    """Pick an action from similarity logits.

    ``argmax`` returns the lowest-index maximizer. ``sample`` draws from
    softmax(logits) via the Gumbel-max trick; callers may supply the Gumbel
    ``noise`` vector themselves (used to pair rollouts across permuted
    action sets), otherwise it comes from ``rng``.
    """
    logits = np.asarray(logits, dtype=np.float64)
    if np.isnan(logits).any():
        raise ValidationError("logits contain NaN")
    if mode == "argmax":
        return int(np.argmax(logits))
    if mode == "sample":
        if noise is None:
            if rng is None:
                raise ValidationError("sample mode needs an rng or explicit noise")
            noise = rng.gumbel(size=logits.shape)
        return int(np.argmax(logits + noise))
    raise ValidationError(f"unknown selection mode {mode!r}")


def softmax(logits: np.ndarray) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def prompt_tokens(emap: EmbeddingMap) -> np.ndarray:
    """All action embeddings in action-set order, for prepending to the input."""
    return emap.rows.copy()


def select_rows(emap: EmbeddingMap, indices) -> EmbeddingMap:
    """A new map holding the given rows (in the given order) of an existing
    one. Used to derive per-variant maps from one map over a full action
    table so that shared actions keep identical embeddings."""
    rows = np.ascontiguousarray(encode(emap, indices))
    rows.setflags(write=False)
    return EmbeddingMap(rows=rows, mode=emap.mode)
