"""Cross-entropy losses over probabilities or pre-sigmoid outputs.

Model heads emit probabilities (sigmoid outputs), and every loss here is a
cross-entropy H(p, q) on those scores. Each function accepts either form:
by default the inputs are probabilities, clamped to [EPS, 1 - EPS] before
any log; with ``from_logits=True`` the inputs are the pre-sigmoid values
and the same cross-entropy is evaluated in its softplus form, which is
identical in value but keeps gradients alive however far a score has
saturated. Training steps use the logits form for exactly that reason: a
clamped probability has zero gradient, so a deeply misscored example could
never recover. Either way, each element at or beyond the clamp range is
counted as a numerical event so saturation is observable in telemetry.

Detector loss is plain binary cross-entropy against pixel labels. The
discriminator loss pulls real patches toward 1 and generated ones toward 0.
The generator loss pushes its outputs to read as bloom under the detector
and as real under the discriminator. In multi-class mode the detector runs
one sigmoid per class against one-hot targets, and the adversarial label for
a hard example is the non-true category with the largest loss.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np
import torch

from .errors import LabelError, NoAdversaryError

EPS = 1e-7
# Pre-sigmoid magnitude whose probability reaches the clamp bounds.
LOGIT_CLAMP = float(np.log((1.0 - EPS) / EPS))

ArrayLike = Union[torch.Tensor, np.ndarray, Sequence[float], float]


@dataclass
class LossValue:
    """A reduced loss with its per-example decomposition.

    ``scalar`` always equals the mean of ``per_example``. For two-term
    losses over equal-length score lists the decomposition is the pairwise
    sum of both terms, so the mean is the sum of the two term means; for
    unequal lengths each term is weighted by (total / group size) to keep
    the same identity. ``tensor`` carries the differentiable scalar when any
    input was a live tensor. ``clamp_events`` counts scores at or beyond the
    clamp range; in the logits form nothing is actually clamped, but the
    saturated elements are still counted."""

    scalar: float
    per_example: np.ndarray
    clamp_events: int = 0
    tensor: Optional[torch.Tensor] = field(default=None, repr=False)


def _as_tensor(x: ArrayLike) -> torch.Tensor:
    if torch.is_tensor(x):
        return x
    arr = np.asarray(x, dtype=np.float64)
    return torch.as_tensor(arr)


def _clamp(scores: torch.Tensor) -> tuple[torch.Tensor, int]:
    events = int(((scores < EPS) | (scores > 1.0 - EPS)).sum().item())
    return scores.clamp(EPS, 1.0 - EPS), events


def _bce(scores: torch.Tensor, labels: torch.Tensor) -> tuple[torch.Tensor, int]:
    """Elementwise −[y log s + (1−y) log(1−s)] with clamping."""
    s, events = _clamp(scores)
    y = labels.to(s.dtype)
    return -(y * torch.log(s) + (1.0 - y) * torch.log(1.0 - s)), events


def _bce_from_logits(logits: torch.Tensor, labels: torch.Tensor) -> tuple[torch.Tensor, int]:
    """The same cross-entropy evaluated from pre-sigmoid values in the
    stable softplus form. No clamp is needed, so the gradient never dies;
    elements whose probability would sit at the clamp are still counted."""
    y = labels.to(logits.dtype)
    vec = torch.nn.functional.binary_cross_entropy_with_logits(logits, y, reduction="none")
    events = int((logits.detach().abs() >= LOGIT_CLAMP).sum().item())
    return vec, events


def _bce_either(
    scores: torch.Tensor, labels: torch.Tensor, from_logits: bool
) -> tuple[torch.Tensor, int]:
    return _bce_from_logits(scores, labels) if from_logits else _bce(scores, labels)


def _pack(per_example_t: torch.Tensor, clamp_events: int) -> LossValue:
    mean_t = per_example_t.mean()
    return LossValue(
        scalar=float(mean_t.detach()),
        per_example=per_example_t.detach().cpu().numpy().astype(np.float64),
        clamp_events=clamp_events,
        tensor=mean_t if per_example_t.requires_grad else None,
    )


def detector_loss(
    scores: ArrayLike, labels: ArrayLike, *, from_logits: bool = False
) -> LossValue:
    """Binary cross-entropy of per-example scores against 0/1 labels.
    ``labels`` broadcasts, so a scalar label applies to the whole batch."""
    s = _as_tensor(scores)
    y = _as_tensor(labels).broadcast_to(s.shape)
    vec, events = _bce_either(s, y, from_logits)
    return _pack(vec, events)


def _two_term(a: torch.Tensor, ea: int, b: torch.Tensor, eb: int) -> LossValue:
    if a.numel() == 0 or b.numel() == 0:
        raise LabelError("two-term loss needs non-empty score lists")
    if a.shape == b.shape:
        return _pack(a + b, ea + eb)
    n = a.numel() + b.numel()
    weighted = torch.cat([a.flatten() * (n / a.numel()), b.flatten() * (n / b.numel())])
    return _pack(weighted, ea + eb)


def discriminator_loss(
    real_scores: ArrayLike, generated_scores: ArrayLike, *, from_logits: bool = False
) -> LossValue:
    """H(real, 1) + H(generated, 0): reward the discriminator for calling
    real patches real and generated ones generated."""
    r = _as_tensor(real_scores)
    g = _as_tensor(generated_scores)
    real_vec, er = _bce_either(r, torch.ones_like(r), from_logits)
    gen_vec, eg = _bce_either(g, torch.zeros_like(g), from_logits)
    return _two_term(real_vec, er, gen_vec, eg)


def hng_loss(
    detector_scores_on_generated: ArrayLike,
    discriminator_scores_on_generated: ArrayLike,
    *,
    from_logits: bool = False,
) -> LossValue:
    """H(detector(gen), 1) + H(discriminator(gen), 1): generated patches
    should score as bloom and as real."""
    d = _as_tensor(detector_scores_on_generated)
    f = _as_tensor(discriminator_scores_on_generated)
    if d.shape != f.shape:
        raise LabelError(
            f"score lists differ in shape: {tuple(d.shape)} vs {tuple(f.shape)}"
        )
    det_vec, e1 = _bce_either(d, torch.ones_like(d), from_logits)
    disc_vec, e2 = _bce_either(f, torch.ones_like(f), from_logits)
    return _two_term(det_vec, e1, disc_vec, e2)


def hsi_detector_loss(
    scores: ArrayLike, labels: ArrayLike, *, from_logits: bool = False
) -> LossValue:
    """Per-class sigmoid cross-entropy of (B, K) scores against one-hot
    targets from integer labels; per-example loss sums over K."""
    s = _as_tensor(scores)
    if s.dim() != 2:
        raise LabelError(f"expected (B, K) scores, got shape {tuple(s.shape)}")
    y = _as_tensor(labels)
    if y.dim() != 1 or y.size(0) != s.size(0):
        raise LabelError("labels must be a vector matching the batch size")
    k = s.size(1)
    y_long = y.long()
    if not torch.equal(y_long.to(y.dtype), y):
        raise LabelError("labels must be integers")
    if int(y_long.min()) < 0 or int(y_long.max()) >= k:
        raise LabelError(f"label outside [0, {k})")
    onehot = torch.zeros_like(s)
    onehot[torch.arange(s.size(0)), y_long] = 1.0
    vec, events = _bce_either(s, onehot, from_logits)
    return _pack(vec.sum(dim=1), events)


def hsi_per_category_losses(scores: ArrayLike) -> np.ndarray:
    """Loss each example would incur under every candidate one-hot label:
    a (B, K) matrix, used to pick adversarial labels for hard examples."""
    s = _as_tensor(_np_f64(scores))
    zeros_vec, _ = _bce(s, torch.zeros_like(s))  # every class pushed to 0
    ones_vec, _ = _bce(s, torch.ones_like(s))
    total_zero = zeros_vec.sum(dim=1, keepdim=True)
    # flipping class l from target 0 to target 1 swaps that one term
    return (total_zero - zeros_vec + ones_vec).cpu().numpy()


def _np_f64(x: ArrayLike) -> np.ndarray:
    if torch.is_tensor(x):
        return x.detach().cpu().numpy().astype(np.float64)
    return np.asarray(x, dtype=np.float64)


def heg_adversarial_label(
    example_losses_per_category: Sequence[float], true_category: int
) -> int:
    """The non-true category with the largest loss; ties break toward the
    lowest index."""
    losses = np.asarray(example_losses_per_category, dtype=np.float64)
    if losses.ndim != 1:
        raise LabelError("per-category losses must be a vector")
    k = losses.shape[0]
    if not 0 <= true_category < k:
        raise LabelError(f"true category {true_category} outside [0, {k})")
    if k < 2:
        raise NoAdversaryError("need at least two categories to pick an adversary")
    best, best_loss = -1, -np.inf
    for i in range(k):
        if i == true_category:
            continue
        if losses[i] > best_loss:
            best, best_loss = i, float(losses[i])
    return best
