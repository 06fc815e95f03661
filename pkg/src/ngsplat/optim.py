"""Adam optimizer over named parameter groups, plus the exponentially
decaying learning-rate schedule used for Gaussian means (restartable to
support the post-noise reset)."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-15


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0


def adam_step(
    param: np.ndarray,
    grad: np.ndarray,
    state: AdamState,
    lr: float,
    beta1: float = ADAM_BETA1,
    beta2: float = ADAM_BETA2,
    eps: float = ADAM_EPS,
) -> int:
    """One in-place Adam update with bias correction.

    Non-finite gradient elements are skipped (their moments and parameters
    are left untouched); returns how many were skipped.
    """
    finite = np.isfinite(grad)
    n_bad = int(grad.size - finite.sum())
    g = np.where(finite, grad, 0.0)
    state.t += 1
    state.m = beta1 * state.m + (1.0 - beta1) * g
    state.v = beta2 * state.v + (1.0 - beta2) * g * g
    m_hat = state.m / (1.0 - beta1**state.t)
    v_hat = state.v / (1.0 - beta2**state.t)
    update = lr * m_hat / (np.sqrt(v_hat) + eps)
    param -= np.where(finite, update, 0.0)
    return n_bad


class GroupedAdam:
    """Adam over a dict of named arrays with per-group learning rates."""

    def __init__(self, params: dict, lrs: dict):
        self.params = params
        self.lrs = dict(lrs)
        self.states = {k: AdamState(np.zeros_like(p), np.zeros_like(p)) for k, p in params.items()}
        self.skipped = 0

    def step(self, grads: dict, lr_overrides: dict | None = None, frozen: set = frozenset()):
        for name, param in self.params.items():
            if name in frozen or name not in grads:
                continue
            lr = (lr_overrides or {}).get(name, self.lrs[name])
            self.skipped += adam_step(param, grads[name], self.states[name], lr)

    def extend(self, name: str, n_new: int):
        """Zero-moment state for newly created trailing rows of a group."""
        st = self.states[name]
        pad = (n_new,) + st.m.shape[1:]
        st.m = np.concatenate([st.m, np.zeros(pad)])
        st.v = np.concatenate([st.v, np.zeros(pad)])

    def select(self, name: str, keep: np.ndarray):
        """Subset moment state after pruning a group's rows."""
        st = self.states[name]
        st.m = st.m[keep]
        st.v = st.v[keep]


@dataclass
class DecaySchedule:
    """Exponential half-life decay with a floor; reset restarts the clock."""

    initial: float
    half_life: float
    floor: float = 0.0
    start_iteration: int = 0

    def value(self, iteration: int) -> float:
        dt = max(iteration - self.start_iteration, 0)
        return max(self.initial * 2.0 ** (-dt / self.half_life), self.floor)

    def reset(self, iteration: int):
        self.start_iteration = iteration
