"""Central finite-difference gradients for checking the autodiff rules."""

from __future__ import annotations

from typing import Callable

import numpy as np

from .tensor import Tensor, no_grad


def numerical_gradient(f: Callable[[], Tensor], x: Tensor, eps: float = 1e-5,
                       entries: np.ndarray | None = None) -> np.ndarray:
    """d f() / d x by central differences, perturbing ``x.data`` in place.

    ``entries`` restricts the check to a subset of flat indices; other
    entries are left at zero.
    """
    grad = np.zeros(x.size)
    flat = x.data.reshape(-1)
    idx = range(x.size) if entries is None else entries
    with no_grad():
        for i in idx:
            old = flat[i]
            flat[i] = old + eps
            fp = float(f().data)
            flat[i] = old - eps
            fm = float(f().data)
            flat[i] = old
            grad[i] = (fp - fm) / (2 * eps)
    return grad.reshape(x.shape)


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> float:
    """‖a − n‖ / max(‖a‖, ‖n‖), or 0 when both are below ``floor``.

    The floor sits above the round-off of a central difference, so a
    gradient that is exactly zero (a bias feeding a normalization, say)
    does not register as a 100% error.
    """
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    scale = max(np.linalg.norm(a), np.linalg.norm(n))
    if scale < floor:
        return 0.0
    return float(np.linalg.norm(a - n) / scale)


def check_gradients(f: Callable[[], Tensor], params: dict[str, Tensor], eps: float = 1e-5,
                    max_entries: int | None = None, rng: np.random.Generator | None = None
                    ) -> dict[str, float]:
    """Relative error between backprop and finite differences for each named tensor."""
    for p in params.values():
        p.grad = None
    f().backward()
    errors = {}
    for name, p in params.items():
        analytic = p.grad if p.grad is not None else np.zeros_like(p.data)
        entries = None
        if max_entries is not None and p.size > max_entries:
            rng = rng or np.random.default_rng(0)
            entries = np.sort(rng.choice(p.size, size=max_entries, replace=False))
        numeric = numerical_gradient(f, p, eps, entries)
        if entries is not None:
            analytic = analytic.reshape(-1)[entries]
            numeric = numeric.reshape(-1)[entries]
        errors[name] = relative_error(analytic, numeric)
    return errors
