"""Classic heavy-ball SGD with weight decay folded into the gradient.

The update is

    v <- momentum * v + lr * (grad + weight_decay * param)
    param <- param - v

applied per parameter with its own velocity buffer. This is the classic
momentum form (the learning rate scales the gradient before it enters the
velocity), so dropping the learning rate also shrinks the stored momentum's
future contribution, matching the schedule semantics assumed here.
"""

from __future__ import annotations

import torch
from torch import nn

from ..errors import DivergenceError


def sgd_step(
    params: dict[str, torch.Tensor],
    grads: dict[str, torch.Tensor],
    velocity: dict[str, torch.Tensor],
    lr: float,
    momentum: float,
    weight_decay: float,
) -> tuple[dict[str, torch.Tensor], dict[str, torch.Tensor]]:
    """One update over named parameters, in place. Raises on non-finite
    gradients rather than propagating them into the weights."""
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if not torch.isfinite(g).all():
            raise DivergenceError(f"non-finite gradient in {name!r}")
        v = velocity[name]
        v.mul_(momentum).add_(g + weight_decay * p, alpha=lr)
        p.sub_(v)
    return params, velocity


def init_velocity(module: nn.Module) -> dict[str, torch.Tensor]:
    return {name: torch.zeros_like(p) for name, p in module.named_parameters()}


def module_sgd_step(
    module: nn.Module,
    velocity: dict[str, torch.Tensor],
    lr: float,
    momentum: float,
    weight_decay: float,
) -> None:
    """Apply sgd_step to a module's accumulated .grad fields, then clear
    them. Parameters without gradients are skipped."""
    params, grads = {}, {}
    with torch.no_grad():
        for name, p in module.named_parameters():
            if p.grad is not None:
                params[name] = p
                grads[name] = p.grad
        sgd_step(params, grads, velocity, lr, momentum, weight_decay)
    for p in module.parameters():
        p.grad = None
