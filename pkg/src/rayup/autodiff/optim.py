from __future__ import annotations

import numpy as np

from .params import ParamStore


class OptimizerStateError(RuntimeError):
    pass


class Adam:
    """Adam with bias correction and a per-epoch multiplicative learning-rate decay."""

    def __init__(self, params: ParamStore, lr: float = 0.005, decay: float = 0.99,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        if lr <= 0:
            raise ValueError("lr must be positive")
        self.params = params
        self.lr = lr
        self.decay = decay
        self.betas = betas
        self.eps = eps
        self.step_count = 0
        self.m = {k: np.zeros_like(t.data) for k, t in params.items()}
        self.v = {k: np.zeros_like(t.data) for k, t in params.items()}

    def step(self) -> None:
        # parameters the loss never reached count as zero-gradient
        if all(t.grad is None for t in self.params.values()):
            raise OptimizerStateError("step() called with no gradients populated")
        b1, b2 = self.betas
        self.step_count += 1
        c1 = 1.0 - b1 ** self.step_count
        c2 = 1.0 - b2 ** self.step_count
        for k, t in self.params.items():
            g = t.grad if t.grad is not None else np.zeros_like(t.data)
            self.m[k] = b1 * self.m[k] + (1.0 - b1) * g
            self.v[k] = b2 * self.v[k] + (1.0 - b2) * g * g
            m_hat = self.m[k] / c1
            v_hat = self.v[k] / c2
            t.data = t.data - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def epoch_decay(self) -> None:
        self.lr *= self.decay

    def state_dict(self) -> dict:
        return {
            "lr": self.lr,
            "decay": self.decay,
            "step_count": self.step_count,
            "m": {k: v.copy() for k, v in self.m.items()},
            "v": {k: v.copy() for k, v in self.v.items()},
        }

    def load_state_dict(self, state: dict) -> None:
        self.lr = float(state["lr"])
        self.decay = float(state["decay"])
        self.step_count = int(state["step_count"])
        self.m = {k: np.array(v, dtype=np.float64) for k, v in state["m"].items()}
        self.v = {k: np.array(v, dtype=np.float64) for k, v in state["v"].items()}
