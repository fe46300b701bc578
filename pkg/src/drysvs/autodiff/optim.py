"""Adam and the step-decay learning-rate schedule."""
from __future__ import annotations

from dataclasses import dataclass
from decimal import Decimal

import numpy as np

from .tensor import Tensor


@dataclass(frozen=True)
class LrSchedule:
    base_lr: float = 0.001
    decay: float = 0.9
    interval: int = 15000

    def __post_init__(self):
        if not 0 < self.decay <= 1:
            raise ValueError(f"decay must be in (0, 1], got {self.decay}")
        if self.interval < 1:
            raise ValueError(f"interval must be >= 1, got {self.interval}")


def lr_at(schedule: LrSchedule, step: int) -> float:
    """base_lr * decay ** floor(step / interval).

    Evaluated in decimal on the configured values so that, e.g., 0.001 and
    0.9 give exactly 0.0009 and 0.00081 rather than binary-rounded products.
    """
    if step < 0:
        raise ValueError("step must be >= 0")
    k = step // schedule.interval
    return float(Decimal(repr(schedule.base_lr)) * Decimal(repr(schedule.decay)) ** k)


class Adam:
    """Adam with bias correction.

    `params` maps names to tensors; moments are kept under the same names
    so they can be checkpointed next to the weights.
    """

    def __init__(self, params: dict[str, Tensor], beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.step_count = 0

    def step(self, lr: float):
        missing = [k for k, p in self.params.items() if p.grad is None]
        if missing:
            raise ValueError(f"parameters without gradients: {missing[:5]}"
                             + (" ..." if len(missing) > 5 else ""))
        self.step_count += 1
        t = self.step_count
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** t
        c2 = 1.0 - b2 ** t
        for k, p in self.params.items():
            g = p.grad.astype(p.data.dtype, copy=False)
            m, v = self.m[k], self.v[k]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            update = (m / c1) / (np.sqrt(v / c2) + self.eps)
            p.data -= (lr * update).astype(p.data.dtype, copy=False)

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for k in self.params:
            out[f"adam.m.{k}"] = self.m[k]
            out[f"adam.v.{k}"] = self.v[k]
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray], step_count: int):
        for k in self.params:
            self.m[k] = np.array(arrays[f"adam.m.{k}"], dtype=self.params[k].dtype)
            self.v[k] = np.array(arrays[f"adam.v.{k}"], dtype=self.params[k].dtype)
        self.step_count = int(step_count)
