"""Baseline learning algorithms used to generate training data and as
comparison points: Beta-Bernoulli Thompson Sampling, disjoint-arms LinUCB,
tabular epsilon-greedy Q-learning, and a uniform-random agent.
"""

from __future__ import annotations

import numpy as np

from .errors import ValidationError


class ThompsonSampling:
    """Beta-Bernoulli Thompson Sampling with unit priors.

    alpha_i - 1 counts observed successes of arm i, beta_i - 1 its failures.
    """

    def __init__(self, num_arms: int):
        self.num_arms = num_arms
        self.alpha = np.ones(num_arms)
        self.beta = np.ones(num_arms)

    def select(self, rng: np.random.Generator) -> int:
        theta = rng.beta(self.alpha, self.beta)
        return int(np.argmax(theta))

    def update(self, arm: int, reward: float) -> None:
        if reward not in (0.0, 1.0):
            raise ValidationError(f"Thompson Sampling expects binary rewards, got {reward}")
        if reward == 1.0:
            self.alpha[arm] += 1
        else:
            self.beta[arm] += 1


class LinUCB:
    """Disjoint-arms LinUCB (Li et al., 2010).

    Per-arm ridge design matrix A (identity init) and response vector b;
    score(a) = <theta_a, x> + alpha * sqrt(x' A_a^-1 x) with theta_a = A_a^-1 b_a.
    np.argmax breaks ties toward the lowest arm index.
    """

    def __init__(self, num_arms: int, feature_dim: int, alpha: float = 1.0):
        self.num_arms = num_arms
        self.feature_dim = feature_dim
        self.alpha = alpha
        self.A = np.stack([np.eye(feature_dim) for _ in range(num_arms)])
        self.b = np.zeros((num_arms, feature_dim))

    def theta(self) -> np.ndarray:
        return np.stack([np.linalg.solve(self.A[a], self.b[a]) for a in range(self.num_arms)])

    def select(self, context: np.ndarray) -> int:
        x = np.asarray(context, dtype=float)
        if x.shape != (self.feature_dim,):
            raise ValidationError(f"context shape {x.shape} != ({self.feature_dim},)")
        scores = np.empty(self.num_arms)
        for a in range(self.num_arms):
            a_inv_x = np.linalg.solve(self.A[a], x)
            theta = np.linalg.solve(self.A[a], self.b[a])
            scores[a] = theta @ x + self.alpha * np.sqrt(x @ a_inv_x)
        return int(np.argmax(scores))

    def update(self, arm: int, context: np.ndarray, reward: float) -> None:
        x = np.asarray(context, dtype=float)
        self.A[arm] += np.outer(x, x)
        self.b[arm] += reward * x


class QLearning:
    """Tabular Q-learning over (cell index, composite action index).

    Epsilon is annealed linearly from eps_start to eps_end across episodes;
    exploration scheme is a config knob, epsilon-greedy by default.
    """

    def __init__(self, num_cells: int, num_actions: int, lr: float = 0.1, gamma: float = 0.9,
                 eps_start: float = 1.0, eps_end: float = 0.05, num_episodes: int = 200):
        self.q = np.zeros((num_cells, num_actions))
        self.lr = lr
        self.gamma = gamma
        self.eps_start = eps_start
        self.eps_end = eps_end
        self.num_episodes = num_episodes

    def epsilon(self, episode: int) -> float:
        if self.num_episodes <= 1:
            return self.eps_end
        frac = min(episode / (self.num_episodes - 1), 1.0)
        return self.eps_start + frac * (self.eps_end - self.eps_start)

    def select(self, cell: int, episode: int, rng: np.random.Generator) -> int:
        if rng.random() < self.epsilon(episode):
            return int(rng.integers(self.q.shape[1]))
        return int(np.argmax(self.q[cell]))

    def update(self, cell: int, action: int, reward: float, next_cell: int, done: bool) -> None:
        target = reward + self.gamma * (0.0 if done else float(np.max(self.q[next_cell])))
        self.q[cell, action] += self.lr * (target - self.q[cell, action])


def random_select(action_set_size: int, rng: np.random.Generator) -> int:
    """Uniform choice; the normalization baseline."""
    return int(rng.integers(action_set_size))
