"""Behavioural-cloning learner: features, a small tanh MLP and its training loop.

Gradients are computed by hand (no autodiff); the network is tiny and the
whole forward/backward pass is a handful of matrix products.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import InputError
from .simenv import State

FEATURE_DIM = 12
POS_SCALE = 50.0    # m
SPEED_SCALE = 15.0  # m/s
SEEN_SCALE = 20     # steps; the in-view counter saturates here

CHECKPOINT_FORMAT = "sgda-mlp"
CHECKPOINT_VERSION = 1


def featurize(state: State) -> np.ndarray:
    """Fixed-length, normalised observation vector.

    Layout: ego x, y, speed, sin/cos heading, ado visible flag, ado observed
    x, y, speed, sin/cos heading, steps in view.  Ado entries are zero while
    it is hidden.  The ego acceleration is left out on purpose: it is the
    previous action, and a cloned policy that sees it learns to repeat it.
    """
    f = np.zeros(FEATURE_DIM)
    f[0] = state.ego_x / POS_SCALE
    f[1] = state.ego_y / POS_SCALE
    f[2] = state.ego_speed / SPEED_SCALE
    f[3] = math.sin(state.ego_heading)
    f[4] = math.cos(state.ego_heading)
    if state.ado_visible and state.ado_obs is not None:
        ox, oy, ov = state.ado_obs
        f[5] = 1.0
        f[6] = ox / POS_SCALE
        f[7] = oy / POS_SCALE
        f[8] = ov / SPEED_SCALE
        f[9] = math.sin(state.ado_heading)
        f[10] = math.cos(state.ado_heading)
        f[11] = min(state.ado_seen_steps, SEEN_SCALE) / SEEN_SCALE
    return f


def featurize_many(states: Sequence[State]) -> np.ndarray:
    if not states:
        return np.zeros((0, FEATURE_DIM))
    return np.stack([featurize(s) for s in states])


# --- network -----------------------------------------------------------------


class Mlp:
    """Fully connected network with tanh on every layer, output included."""

    def __init__(self, weights: list[np.ndarray], biases: list[np.ndarray]):
        if len(weights) != len(biases) or not weights:
            raise InputError("need one bias per weight matrix")
        self.weights = [np.asarray(w, dtype=float) for w in weights]
        self.biases = [np.asarray(b, dtype=float) for b in biases]

    @classmethod
    def init(cls, sizes: Sequence[int], rng: np.random.Generator) -> "Mlp":
        """Uniform init in +-1/sqrt(fan_in)."""
        ws, bs = [], []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            lim = 1.0 / math.sqrt(fan_in)
            ws.append(rng.uniform(-lim, lim, (fan_in, fan_out)))
            bs.append(rng.uniform(-lim, lim, fan_out))
        return cls(ws, bs)

    @classmethod
    def zeros(cls, sizes: Sequence[int]) -> "Mlp":
        return cls([np.zeros((a, b)) for a, b in zip(sizes[:-1], sizes[1:])],
                   [np.zeros(b) for b in sizes[1:]])

    @property
    def sizes(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    @property
    def params(self) -> list[np.ndarray]:
        """Flat parameter list ``[W0, b0, W1, b1, ...]`` (views, not copies)."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def num_params(self) -> int:
        return sum(p.size for p in self.params)

    def forward(self, x: np.ndarray) -> np.ndarray:
        h = np.asarray(x, dtype=float)
        for w, b in zip(self.weights, self.biases):
            h = np.tanh(h @ w + b)
        return h

    def _forward_cached(self, x):
        acts = [x]
        for w, b in zip(self.weights, self.biases):
            acts.append(np.tanh(acts[-1] @ w + b))
        return acts

    def l1_loss(self, x: np.ndarray, y: np.ndarray) -> float:
        pred = self.forward(x)[:, 0]
        return float(np.mean(np.abs(pred - y)))

    def loss_and_grads(self, x: np.ndarray, y: np.ndarray) -> tuple[float, list[np.ndarray]]:
        """Mean absolute error and its gradient, ordered like :attr:`params`."""
        acts = self._forward_cached(np.asarray(x, dtype=float))
        diff = acts[-1][:, 0] - y
        n = len(y)
        loss = float(np.mean(np.abs(diff)))
        delta = (np.sign(diff) / n)[:, None]
        grads: list[np.ndarray] = []
        for i in range(len(self.weights) - 1, -1, -1):
            delta = delta * (1.0 - acts[i + 1] ** 2)  # through tanh
            grads.append(delta.sum(axis=0))           # bias
            grads.append(acts[i].T @ delta)           # weight
            delta = delta @ self.weights[i].T
        grads.reverse()
        return loss, grads


# --- optimisation ------------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    hidden: int = 256
    depth: int = 3
    lr: float = 1e-4
    batch_size: int = 500
    epochs: int = 100
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @property
    def sizes(self) -> list[int]:
        return [FEATURE_DIM] + [self.hidden] * self.depth + [1]

    def digest(self) -> str:
        text = json.dumps(asdict(self), sort_keys=True)
        return hashlib.sha256(text.encode()).hexdigest()[:16]


class Adam:
    def __init__(self, params: list[np.ndarray], lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads: list[np.ndarray]) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


# --- data --------------------------------------------------------------------


@dataclass
class Dataset:
    """Aggregated (feature, action) pairs tagged with episode and round."""

    features: list[np.ndarray] = field(default_factory=list)
    actions: list[float] = field(default_factory=list)
    episodes: list[str] = field(default_factory=list)
    rounds: list[int] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.actions)

    def add_episode(self, states: Sequence[State], actions: Iterable[float],
                    episode: str, round_: int) -> int:
        acts = [float(a) for a in actions]
        if len(acts) != len(states):
            raise InputError("one action per state required")
        self.features.extend(featurize(s) for s in states)
        self.actions.extend(acts)
        self.episodes.extend([episode] * len(acts))
        self.rounds.extend([round_] * len(acts))
        return len(acts)

    def extend(self, other: "Dataset") -> None:
        self.features.extend(other.features)
        self.actions.extend(other.actions)
        self.episodes.extend(other.episodes)
        self.rounds.extend(other.rounds)

    def arrays(self) -> tuple[np.ndarray, np.ndarray]:
        if not self.actions:
            return np.zeros((0, FEATURE_DIM)), np.zeros(0)
        return np.stack(self.features), np.asarray(self.actions, dtype=float)


# --- policy ------------------------------------------------------------------


class MlpPolicy:
    def __init__(self, net: Mlp, config: Optional[TrainConfig] = None):
        self.net = net
        self.config = config or TrainConfig(hidden=net.sizes[1], depth=len(net.sizes) - 2)

    def __repr__(self) -> str:
        return f"MlpPolicy(sizes={self.net.sizes})"

    def act(self, state: State) -> float:
        out = float(self.net.forward(featurize(state)[None, :])[0, 0])
        return min(1.0, max(-1.0, out))

    def predict(self, x: np.ndarray) -> np.ndarray:
        return self.net.forward(x)[:, 0]

    # checkpoints are plain JSON; float repr round-trips exactly
    def to_dict(self) -> dict:
        return {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "sizes": self.net.sizes,
            "activation": "tanh",
            "normalization": {"position": POS_SCALE, "speed": SPEED_SCALE,
                              "seen_steps": SEEN_SCALE},
            "train_config": asdict(self.config),
            "train_config_hash": self.config.digest(),
            "weights": [w.tolist() for w in self.net.weights],
            "biases": [b.tolist() for b in self.net.biases],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MlpPolicy":
        if d.get("format") != CHECKPOINT_FORMAT or d.get("version") != CHECKPOINT_VERSION:
            raise InputError("not a policy checkpoint of a supported version")
        net = Mlp([np.array(w, dtype=float).reshape(a, b)
                   for w, a, b in zip(d["weights"], d["sizes"][:-1], d["sizes"][1:])],
                  [np.array(b, dtype=float) for b in d["biases"]])
        return cls(net, TrainConfig(**d["train_config"]))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "MlpPolicy":
        try:
            d = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise InputError(f"cannot read checkpoint {path}: {exc}") from None
        return cls.from_dict(d)


def act(policy, state: State) -> float:
    """Query any policy and clamp to the action range."""
    return min(1.0, max(-1.0, float(policy.act(state))))


def train_bc(data: Dataset, hp: TrainConfig = TrainConfig(), seed: int = 0,
             log: Optional[list] = None) -> MlpPolicy:
    """Fit an MLP to the dataset by minibatch Adam on the L1 loss.

    Deterministic given ``seed``: initialisation and shuffling draw from
    separate seeded streams.  Per-epoch training losses are appended to
    ``log`` when given.
    """
    x, y = data.arrays()
    if len(y) == 0:
        raise InputError("cannot train on an empty dataset")
    init_rng = np.random.default_rng([seed, 0])
    shuffle_rng = np.random.default_rng([seed, 1])
    net = Mlp.init(hp.sizes, init_rng)
    opt = Adam(net.params, hp.lr, hp.beta1, hp.beta2, hp.eps)
    n = len(y)
    bs = max(1, min(hp.batch_size, n))
    for _ in range(hp.epochs):
        order = shuffle_rng.permutation(n)
        total = 0.0
        for start in range(0, n, bs):
            idx = order[start:start + bs]
            loss, grads = net.loss_and_grads(x[idx], y[idx])
            opt.step(grads)
            total += loss * len(idx)
        if log is not None:
            log.append(total / n)
    return MlpPolicy(net, hp)
