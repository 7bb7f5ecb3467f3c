"""Adam with bias correction and an inverse-square-root LR schedule."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .backend import kernels
from .errors import ConfigError, ContractError, NumericsError
from .tensor import Tensor


@dataclass
class AdamState:
    """Optimizer state over a named parameter collection.

    Moment buffers are keyed by parameter name; `step` counts completed
    updates. The schedule is evaluated at t = step + 1, warming linearly to
    `lr` over `warmup_steps` then decaying as sqrt(warmup/t). warmup_steps=0
    means a constant learning rate.
    """

    step: int = 0
    lr: float = 7e-4
    warmup_steps: int = 400
    beta1: float = 0.9
    beta2: float = 0.98
    eps: float = 1e-8
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    @classmethod
    def for_params(cls, params: dict[str, Tensor], **kwargs) -> "AdamState":
        state = cls(**kwargs)
        for name, t in params.items():
            state.m[name] = np.zeros(t.data.size)
            state.v[name] = np.zeros(t.data.size)
        return state

    def lr_at(self, t: int) -> float:
        if self.warmup_steps <= 0:
            return self.lr
        if t < self.warmup_steps:
            return self.lr * t / self.warmup_steps
        return self.lr * (self.warmup_steps / t) ** 0.5


def adam_step(params: dict[str, Tensor], state: AdamState) -> None:
    """One bias-corrected update over every parameter, in place.

    Parameters with no accumulated gradient are treated as zero-gradient
    (moments still decay). NaN/Inf in any gradient aborts with the
    offending block named.
    """
    t = state.step + 1
    lr_t = state.lr_at(t)
    for name in sorted(params):
        p = params[name]
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        if not np.isfinite(g).all():
            raise NumericsError(f"non-finite gradient in parameter block '{name}'")
        if name not in state.m:
            raise ConfigError(f"optimizer state is missing parameter block '{name}'")
        if not p.data.flags.c_contiguous:
            raise ContractError(f"parameter block '{name}' must stay C-contiguous")
        kernels.adam_update_(
            p.data.reshape(-1),
            np.ascontiguousarray(g.reshape(-1)),
            state.m[name],
            state.v[name],
            lr_t,
            state.beta1,
            state.beta2,
            state.eps,
            t,
        )
    state.step = t
