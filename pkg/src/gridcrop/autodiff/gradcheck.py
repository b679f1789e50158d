"""Central finite-difference verification of reverse-mode gradients."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor


def finite_difference_check(fn: Callable[..., Tensor], inputs: Sequence[Tensor], epsilon: float = 1e-6) -> float:
    """Max relative gradient error of ``fn`` over all entries of ``inputs``.

    ``fn(*inputs)`` must return a scalar tensor.  The error for each input is
    ``max|analytic - numeric| / max(max|analytic|, max|numeric|)`` and the
    worst input is reported.
    """
    for t in inputs:
        t.requires_grad = True
        t.grad = None
    out = fn(*inputs)
    if out.data.size != 1:
        raise ValueError("finite_difference_check needs a scalar-valued function")
    out.backward()
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in inputs]

    worst = 0.0
    for t, a in zip(inputs, analytic):
        numeric = np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        nflat = numeric.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + epsilon
            fp = float(fn(*inputs).data)
            flat[i] = orig - epsilon
            fm = float(fn(*inputs).data)
            flat[i] = orig
            nflat[i] = (fp - fm) / (2 * epsilon)
        scale = max(np.abs(a).max(), np.abs(numeric).max())
        if scale == 0.0:
            continue
        worst = max(worst, float(np.abs(a - numeric).max() / scale))
    for t in inputs:
        t.grad = None
    return worst
