"""Central-difference verification of analytic gradients."""

from __future__ import annotations

from typing import Callable, Sequence

from .tensor import Tensor

# Relative error floors out at this scale so near-zero gradients compare
# absolutely; central differences at h=1e-5 carry ~1e-10 noise themselves.
ATOL_SCALE = 1e-3


def gradcheck(f: Callable[[], Tensor], inputs: Sequence[Tensor], h: float = 1e-5) -> float:
    """Max relative error between backward() and central differences.

    f rebuilds a scalar-valued computation from the current contents of
    `inputs` on every call; each input element is perturbed in place by
    +/- h. Callers are responsible for keeping inputs away from
    ReLU/hinge kinks by at least h.
    """
    for t in inputs:
        t.requires_grad = True
        t.grad = None
    out = f()
    out.backward()
    analytic = []
    for t in inputs:
        g = t.grad if t.grad is not None else None
        analytic.append(g.copy() if g is not None else None)

    max_err = 0.0
    for t, an in zip(inputs, analytic):
        flat = t.data.reshape(-1)
        aflat = an.reshape(-1) if an is not None else None
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            f_plus = float(f().data)
            flat[i] = orig - h
            f_minus = float(f().data)
            flat[i] = orig
            numeric = (f_plus - f_minus) / (2.0 * h)
            a = float(aflat[i]) if aflat is not None else 0.0
            err = abs(a - numeric) / max(abs(a), abs(numeric), ATOL_SCALE)
            if err > max_err:
                max_err = err
    return max_err
