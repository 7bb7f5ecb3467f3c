"""Central finite-difference gradient checking."""

from __future__ import annotations

from typing import Callable

import numpy as np

from .errors import ContractError
from .tensor import Tape, Tensor, backward, zero_grads


def finite_diff_check(
    f: Callable[[Tensor], Tensor], x: Tensor, h: float = 1e-5, floor: float = 1e-8
) -> float:
    """Max relative error between analytic grad of f at x and central differences.

    f must map x to a scalar Tensor using ops from this package. x is
    perturbed in place element by element and restored afterwards. The
    relative error denominator is floored at `floor` so zero gradients
    compare cleanly.
    """
    if h <= 0:
        raise ContractError(f"finite_diff_check needs h > 0, got {h}")
    x.requires_grad = True
    zero_grads([x])
    with Tape() as tape:
        y = f(x)
    if tape.holds(y):
        backward(y, tape)
    analytic = np.zeros_like(x.data) if x.grad is None else x.grad.copy()

    numeric = np.empty_like(x.data)
    for i in range(x.data.size):
        idx = np.unravel_index(i, x.data.shape)
        orig = x.data[idx]
        x.data[idx] = orig + h
        up = float(f(x).data)
        x.data[idx] = orig - h
        dn = float(f(x).data)
        x.data[idx] = orig
        numeric[idx] = (up - dn) / (2.0 * h)

    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom))
