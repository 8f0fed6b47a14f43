"""Adam and the plateau / early-stopping schedule."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class AdamState:
    m: list
    v: list
    t: int = 0


def adam_step(params, grads, state: AdamState | None, lr: float, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8):
    """One Adam update on plain arrays. Returns ``(new_params, new_state)``."""
    params = [np.asarray(p) for p in params]
    if state is None:
        state = AdamState([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params], 0)
    if len(state.m) != len(params) or any(m.shape != p.shape for m, p in zip(state.m, params)):
        raise ValueError("optimizer state does not match parameters")
    t = state.t + 1
    new_p, new_m, new_v = [], [], []
    for p, g, m, v in zip(params, grads, state.m, state.v):
        g = np.asarray(g)
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        m_hat = m / (1 - beta1 ** t)
        v_hat = v / (1 - beta2 ** t)
        new_p.append((p - lr * m_hat / (np.sqrt(v_hat) + eps)).astype(p.dtype))
        new_m.append(m)
        new_v.append(v)
    return new_p, AdamState(new_m, new_v, t)


class Adam:
    """In-place Adam over :class:`Parameter` objects. Parameters whose
    ``requires_grad`` is off, or that received no gradient, are skipped."""

    def __init__(self, params, lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1 - b1 ** self.t
        c2 = 1 - b2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if not p.requires_grad or p.grad is None:
                continue
            g = p.grad
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            p.data -= (self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.dtype)


@dataclass
class TrainSchedule:
    lr0: float = 1e-3
    plateau_patience: int = 3
    lr_factor: float = 0.7
    early_stop_patience: int = 5
    max_epochs: int = 100
    batch_size: int = 32
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.lr_factor < 1:
            raise ValueError("lr_factor must lie in (0, 1)")
        if self.plateau_patience < 1 or self.early_stop_patience < 1:
            raise ValueError("patience values must be >= 1")


@dataclass
class PlateauTracker:
    """Incremental form of :func:`schedule_step`."""

    sched: TrainSchedule
    lr: float = field(init=False)
    best: float = field(default=float("inf"), init=False)
    since_best: int = field(default=0, init=False)
    since_reduce: int = field(default=0, init=False)
    stop: bool = field(default=False, init=False)

    def __post_init__(self):
        self.lr = self.sched.lr0

    def update(self, loss: float) -> bool:
        """Record one epoch; returns True when the loss strictly improved."""
        if loss < self.best:
            self.best = loss
            self.since_best = 0
            self.since_reduce = 0
            return True
        self.since_best += 1
        self.since_reduce += 1
        if self.since_reduce >= self.sched.plateau_patience:
            self.lr *= self.sched.lr_factor
            self.since_reduce = 0
        if self.since_best >= self.sched.early_stop_patience:
            self.stop = True
        return False


def schedule_step(history, sched: TrainSchedule = TrainSchedule()) -> dict:
    """Replay a validation-loss history: the learning rate drops by
    ``lr_factor`` after each ``plateau_patience`` epochs without a strict
    improvement, and training stops after ``early_stop_patience`` such epochs."""
    if len(history) == 0:
        raise ValueError("empty history")
    tr = PlateauTracker(sched)
    for loss in history:
        tr.update(float(loss))
    return {"lr": tr.lr, "stop": tr.stop, "best": tr.best, "epochs_since_best": tr.since_best}
