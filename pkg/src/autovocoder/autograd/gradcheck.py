"""Central finite-difference verification of analytic gradients."""

from __future__ import annotations

from typing import Callable

import numpy as np

from .tensor import Tensor, no_grad


def grad_check(f: Callable[[Tensor], Tensor], x: Tensor, eps: float = 1e-5,
               max_checks: int | None = None, seed: int = 0, floor: float = 1e-8,
               refine: int = 0, tol: float = 0.0) -> float:
    """Max elementwise relative error between backprop and central differences.

    ``x.data`` is perturbed in place, so ``x`` may be a parameter that ``f``
    reaches through a closure. The relative error uses the denominator
    ``max(|analytic|, |numeric|, floor)``, so gradients far below ``floor``
    are effectively judged on absolute error. With ``max_checks`` only a seeded
    random subset of coordinates is differenced.

    A coordinate whose error exceeds ``tol`` is re-differenced with a step
    ten times smaller, at most ``refine`` times, keeping the best error. This
    only helps when the wider step straddles a kink of relu/abs/clamp; a wrong
    analytic gradient stays wrong at every step size.
    """
    was = x.requires_grad
    x.requires_grad = True
    x.grad = None
    try:
        loss = f(x)
        if loss.size != 1:
            raise ValueError(f"grad_check needs a scalar function, got shape {loss.shape}")
        loss.backward()
        analytic = np.zeros_like(x.data) if x.grad is None else x.grad.copy()
        x.grad = None

        x.data = np.ascontiguousarray(x.data)
        flat = x.data.reshape(-1)
        coords = np.arange(flat.size)
        if max_checks is not None and max_checks < flat.size:
            coords = np.random.default_rng(seed).choice(flat.size, max_checks, replace=False)
        worst = 0.0
        for i in coords:
            ana = float(analytic.reshape(-1)[i])
            step, err = eps, np.inf
            for _ in range(refine + 1):
                num = _central(f, x, flat, i, step)
                err = min(err, abs(ana - num) / max(abs(ana), abs(num), floor))
                if err <= tol:
                    break
                step /= 10.0
            worst = max(worst, err)
        return worst
    finally:
        x.requires_grad = was
        x.grad = None


def _central(f, x: Tensor, flat: np.ndarray, i: int, eps: float) -> float:
    orig = flat[i]
    with no_grad():
        flat[i] = orig + eps
        fp = float(f(x).data)
        flat[i] = orig - eps
        fm = float(f(x).data)
    flat[i] = orig
    return (fp - fm) / (2.0 * eps)
