"""Client-side simulation: explicit (Forward-Euler) integration of the local
gradient-flow ODE over a private time window, recording the checkpoint
trajectory the central agent later resamples."""

import json
from dataclasses import dataclass

import numpy as np


class DivergenceError(RuntimeError):
    """Raised when a state vector leaves the finite range; carries the step
    at which it happened (a too-large learning rate is the usual cause)."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


@dataclass(frozen=True)
class ClientConfig:
    """Per-client compute profile: the learning rate doubles as the local ODE
    time step, so a client covers window = epochs * lr of ODE time per round."""

    client_id: int
    lr: float
    epochs: int
    weight: float = 1.0

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("lr must be > 0")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.weight <= 0:
            raise ValueError("weight must be > 0")

    @property
    def window(self):
        return self.epochs * self.lr


@dataclass(frozen=True)
class ClientUpdate:
    """A client's recorded trajectory: strictly increasing checkpoint times
    and matching states, spanning exactly its window."""

    client_id: int
    times: np.ndarray   # (k,), k >= 2
    states: np.ndarray  # (k, d)
    window: float

    def __post_init__(self):
        t = np.asarray(self.times, dtype=np.float64)
        s = np.asarray(self.states, dtype=np.float64)
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "states", s)
        if t.ndim != 1 or len(t) < 2:
            raise ValueError("need at least 2 checkpoints")
        if s.shape[0] != len(t):
            raise ValueError("times/states length mismatch")
        if not (np.diff(t) > 0).all():
            raise ValueError("checkpoint times must be strictly increasing")
        if abs((t[-1] - t[0]) - self.window) > 1e-12:
            raise ValueError("checkpoint span does not match the window")

    @property
    def final_state(self):
        return self.states[-1]

    def to_json(self):
        return json.dumps({
            "id": self.client_id,
            "T": self.window,
            "checkpoints": [[float(t), x.tolist()] for t, x in zip(self.times, self.states)],
        })

    @classmethod
    def from_json(cls, text):
        obj = json.loads(text)
        times = np.array([c[0] for c in obj["checkpoints"]])
        states = np.array([c[1] for c in obj["checkpoints"]])
        return cls(obj["id"], times, states, obj["T"])


def simulate_local(obj, cfg, x_start, i_flow, t_start=0.0, record="steps",
                   minibatch=None, rng=None):
    """Integrate the local ODE with Forward-Euler steps:

        x <- x - lr * (weight * grad f(x) + i_flow)

    for cfg.epochs steps, holding the drift term i_flow constant over the
    window.  Records one checkpoint per step plus the initial state
    (record="steps"), or just the two endpoints (record="endpoints").

    minibatch selects a seeded random subset of that size per step and uses
    the rescaled stochastic gradient instead of the full one.
    """
    x = np.asarray(x_start, dtype=np.float64).copy()
    drift = np.asarray(i_flow, dtype=np.float64)
    if x.shape != drift.shape or x.shape != (obj.dim,):
        raise ValueError("x_start/i_flow shape mismatch with the objective")
    if record not in ("steps", "endpoints"):
        raise ValueError("record must be 'steps' or 'endpoints'")
    if minibatch is not None:
        if getattr(obj, "dataset", None) is None:
            raise ValueError("minibatch mode needs a dataset-backed objective")
        if rng is None:
            raise ValueError("minibatch mode needs an rng for reproducibility")
        minibatch = min(int(minibatch), len(obj.dataset))

    states = [x.copy()]
    for step in range(cfg.epochs):
        if minibatch is None:
            grad = obj.gradient(x)
        else:
            idx = rng.choice(len(obj.dataset), minibatch, replace=False)
            grad = obj.gradient(x, sample_indices=idx)
        with np.errstate(over="ignore", invalid="ignore"):
            x = x - cfg.lr * (cfg.weight * grad + drift)
        if not np.isfinite(x).all():
            raise DivergenceError(
                f"client {cfg.client_id} diverged at local step {step + 1} "
                f"(lr={cfg.lr:g})", step=step + 1)
        states.append(x.copy())

    times = t_start + cfg.lr * np.arange(cfg.epochs + 1)
    if record == "endpoints":
        times = times[[0, -1]]
        states = [states[0], states[-1]]
    return ClientUpdate(cfg.client_id, times, np.asarray(states), cfg.window)


def sample_heterogeneity(n_clients, seed, lr_range=(1e-4, 1e-3), epoch_range=(1, 10),
                         weights=None):
    """Draw per-client compute profiles: lr uniform on lr_range, epochs
    uniform integer on [epoch_range[0], epoch_range[1]].  Deterministic in
    seed."""
    rng = np.random.default_rng([int(seed), 9901])
    lrs = rng.uniform(lr_range[0], lr_range[1], n_clients)
    epochs = rng.integers(epoch_range[0], epoch_range[1] + 1, n_clients)
    if weights is None:
        weights = np.full(n_clients, 1.0 / n_clients)
    return [
        ClientConfig(i, float(lrs[i]), int(epochs[i]), float(weights[i]))
        for i in range(n_clients)
    ]
