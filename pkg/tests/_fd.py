"""Finite-difference gradient oracle used across the test suite.

Central differences in float64 with h = 1e-6 give ~1e-10 truncation error,
so an analytic gradient agreeing to a relative 1e-4 is a real check, not a
tautology. For large parameter tensors a random index subset is probed.
"""

from __future__ import annotations

from typing import Callable, Optional

import numpy as np
import torch


def _scalar(out) -> torch.Tensor:
    """Accept a scalar tensor or a loss object carrying one."""
    if torch.is_tensor(out):
        return out
    if getattr(out, "tensor", None) is not None:
        return out.tensor
    if hasattr(out, "scalar"):
        return torch.as_tensor(out.scalar, dtype=torch.float64)
    return torch.as_tensor(out)


def fd_gradient_at(
    f: Callable[[], object],
    tensor: torch.Tensor,
    indices: np.ndarray,
    h: float = 1e-6,
) -> np.ndarray:
    """Central-difference df/dtensor[i] for each flat index i, evaluating
    ``f()`` with the tensor perturbed in place."""
    flat = tensor.data.view(-1)
    out = np.empty(len(indices))
    for j, i in enumerate(indices):
        orig = flat[i].item()
        flat[i] = orig + h
        fp = float(_scalar(f()))
        flat[i] = orig - h
        fm = float(_scalar(f()))
        flat[i] = orig
        out[j] = (fp - fm) / (2.0 * h)
    return out


def max_rel_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    analytic = np.asarray(analytic, dtype=np.float64).ravel()
    numeric = np.asarray(numeric, dtype=np.float64).ravel()
    scale = max(1e-6, float(np.abs(analytic).max(initial=0.0)),
                float(np.abs(numeric).max(initial=0.0)))
    return float(np.abs(analytic - numeric).max(initial=0.0) / scale)


def check_gradients(
    f: Callable[[], torch.Tensor],
    tensors: list[torch.Tensor],
    rng: np.random.Generator,
    probes_per_tensor: int = 12,
    tol: float = 1e-4,
) -> float:
    """Assert autograd gradients of scalar ``f()`` match finite differences
    on a random index subset of every tensor; returns the worst error."""
    for t in tensors:
        t.requires_grad_(True)
        if t.grad is not None:
            t.grad = None
    _scalar(f()).backward()
    worst = 0.0
    for t in tensors:
        n = t.numel()
        k = min(probes_per_tensor, n)
        indices = rng.choice(n, size=k, replace=False)
        with torch.no_grad():
            numeric = fd_gradient_at(f, t, indices)
        analytic = t.grad.detach().view(-1)[torch.as_tensor(indices)].cpu().numpy()
        err = max_rel_error(analytic, numeric)
        worst = max(worst, err)
        assert err < tol, f"gradient mismatch {err:.3e} on tensor of shape {tuple(t.shape)}"
    return worst
