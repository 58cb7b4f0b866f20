"""Nine-layer fully convolutional detector with a multi-scale filter bank.

Layer 1 is a bank of four parallel convolutions (1x1, 5x5, 9x9, 13x13). In
training mode each k x k filter slides over the (2k-1) x (2k-1) sub-patch
centered on a 25 x 25 input patch, so every filter placement covers the
center pixel, and the k x k response map is max pooled to 1 x 1. In test
mode the same filters run same-padded over an arbitrary raster followed by a
k x k stride-1 same-padded max pool, which computes the identical score at
every pixel whose receptive field lies inside the input. Either way the
receptive field is exactly 25 x 25.

Layers 2 to 8 are 1x1 convolutions; layers 3 to 6 carry identity skips
(y = x + relu(conv(x))). Dropout follows layers 7 and 8 in training when a
mask generator is supplied. Layer 9 maps to ``output_units`` sigmoid scores
(one unit for binary detection, one per class for multi-class).
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from ..data.patches import MARGIN, PATCH_SIZE
from ..errors import ConfigError, ShapeError
from .common import gaussian_init_, sliding_max_2d


@dataclass
class DetectorSpec:
    in_channels: int
    bank_sizes: tuple[int, ...] = (1, 5, 9, 13)
    bank_width: int = 100
    trunk_widths: tuple[int, ...] = (200, 200, 200, 200, 200, 200, 200)
    residual_layers: tuple[int, ...] = (3, 4, 5, 6)
    dropout_layers: tuple[int, ...] = (7, 8)
    dropout_rate: float = 0.5
    output_units: int = 1
    init_std: float = 0.01
    residual_init_std: float = 0.005

    def validate(self) -> None:
        if self.in_channels < 1:
            raise ConfigError("detector needs at least one input channel")
        if self.init_std <= 0 or self.residual_init_std <= 0:
            raise ConfigError("init standard deviations must be positive")
        if len(self.trunk_widths) != 7:
            raise ConfigError(
                f"trunk needs exactly 7 widths (layers 2-8), got {len(self.trunk_widths)}"
            )
        for k in self.bank_sizes:
            if k % 2 == 0 or k < 1 or k > PATCH_SIZE // 2 + 1:
                raise ConfigError(f"bank filter size {k} must be odd and at most 13")
        if max(self.bank_sizes) != PATCH_SIZE // 2 + 1:
            raise ConfigError(
                "largest bank filter must be 13 so the receptive field is 25"
            )
        if self.output_units < 1:
            raise ConfigError("output_units must be positive")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError("dropout_rate must be in [0, 1)")
        widths = self.layer_widths()
        for layer in self.residual_layers:
            if not 3 <= layer <= 8:
                raise ConfigError(f"residual layer {layer} outside trunk range 3-8")
            if widths[layer - 1] != widths[layer - 2]:
                raise ConfigError(
                    f"identity skip at layer {layer} needs equal widths, "
                    f"got {widths[layer - 2]} -> {widths[layer - 1]}"
                )
        for layer in self.dropout_layers:
            if not 2 <= layer <= 8:
                raise ConfigError(f"dropout layer {layer} outside trunk range 2-8")

    def layer_widths(self) -> list[int]:
        """Output width of layers 1..9 (bank width is the concatenation)."""
        return [len(self.bank_sizes) * self.bank_width, *self.trunk_widths, self.output_units]


class Detector(nn.Module):
    def __init__(self, spec: DetectorSpec, dtype: torch.dtype = torch.float32):
        super().__init__()
        spec.validate()
        self.spec = spec
        self.bank = nn.ModuleDict(
            {
                f"k{k}": nn.Conv2d(spec.in_channels, spec.bank_width, k, dtype=dtype)
                for k in spec.bank_sizes
            }
        )
        widths = spec.layer_widths()
        self.trunk = nn.ModuleList(
            nn.Conv2d(widths[i], widths[i + 1], 1, dtype=dtype) for i in range(7)
        )
        self.head = nn.Conv2d(widths[7], spec.output_units, 1, dtype=dtype)

    @property
    def dtype(self) -> torch.dtype:
        return self.head.weight.dtype

    def _check_input(self, x: torch.Tensor) -> torch.Tensor:
        if x.dim() != 4:
            raise ShapeError(f"expected (B, C, H, W), got shape {tuple(x.shape)}")
        if x.size(1) != self.spec.in_channels:
            raise ShapeError(
                f"expected {self.spec.in_channels} channels, got {x.size(1)}"
            )
        return x.to(self.dtype)

    def bank_branch(self, k: int, x: torch.Tensor, padded: bool = True) -> torch.Tensor:
        """One test-mode branch: conv then k x k stride-1 max pool."""
        conv = self.bank[f"k{k}"]
        if padded:
            y = F.conv2d(x, conv.weight, conv.bias, padding=(k - 1) // 2)
            return y if k == 1 else sliding_max_2d(y, k, padded=True)
        y = F.conv2d(x, conv.weight, conv.bias)
        return y if k == 1 else sliding_max_2d(y, k)

    def _bank_train(self, x: torch.Tensor) -> torch.Tensor:
        center = PATCH_SIZE // 2
        outs = []
        for k in self.spec.bank_sizes:
            conv = self.bank[f"k{k}"]
            lo, hi = center - (k - 1), center + k
            sub = x[:, :, lo:hi, lo:hi]
            y = F.conv2d(sub, conv.weight, conv.bias)
            outs.append(y.amax(dim=(-2, -1), keepdim=True))
        return torch.cat(outs, dim=1)

    def _bank_test(self, x: torch.Tensor, padded: bool) -> torch.Tensor:
        outs = []
        for k in self.spec.bank_sizes:
            y = self.bank_branch(k, x, padded=padded)
            if not padded:
                # each branch shrinks by 2k - 2; trim all to the common
                # central (H - 24) x (W - 24) grid of full receptive fields
                m = MARGIN - (k - 1)
                if m:
                    y = y[:, :, m:-m, m:-m]
            outs.append(y)
        return torch.cat(outs, dim=1)

    def _trunk(
        self,
        h: torch.Tensor,
        dropout_generator: torch.Generator | None,
        capture_features: bool,
    ) -> tuple[torch.Tensor, torch.Tensor | None]:
        features = None
        rate = self.spec.dropout_rate
        for i, conv in enumerate(self.trunk):
            layer = i + 2
            z = conv(h)
            h = h + F.relu(z) if layer in self.spec.residual_layers else F.relu(z)
            if capture_features and layer == 8:
                features = h
            if (
                dropout_generator is not None
                and rate > 0.0
                and layer in self.spec.dropout_layers
            ):
                keep = torch.empty_like(h).bernoulli_(1.0 - rate, generator=dropout_generator)
                h = h * keep / (1.0 - rate)
        return h, features

    def forward_train(
        self,
        x: torch.Tensor,
        dropout_generator: torch.Generator | None = None,
        return_features: bool = False,
        squash: bool = True,
    ):
        """Scores for a batch of 25 x 25 patches: (B,) for one output unit,
        (B, K) otherwise. Dropout applies only when a generator is given.
        ``squash=False`` returns the pre-sigmoid values for losses that
        evaluate the cross-entropy in its numerically live form."""
        x = self._check_input(x)
        if x.size(-2) != PATCH_SIZE or x.size(-1) != PATCH_SIZE:
            raise ShapeError(
                f"training patches must be {PATCH_SIZE}x{PATCH_SIZE}, "
                f"got {x.size(-2)}x{x.size(-1)}"
            )
        h = self._bank_train(x)
        h, features = self._trunk(h, dropout_generator, return_features)
        scores = self.head(h)[:, :, 0, 0]
        if squash:
            scores = torch.sigmoid(scores)
        if self.spec.output_units == 1:
            scores = scores[:, 0]
        if return_features:
            return scores, features[:, :, 0, 0]
        return scores

    def forward_test(self, x: torch.Tensor, padded: bool = True) -> torch.Tensor:
        """Dense score map. Padded mode keeps the input size (B, K, H, W);
        outputs within 12 px of the border see padding and are only
        meaningful if the caller discards them. Valid mode returns the
        (H - 24) x (W - 24) map of fully supported pixels."""
        x = self._check_input(x)
        if x.size(-2) < PATCH_SIZE or x.size(-1) < PATCH_SIZE:
            raise ShapeError(
                f"test input must be at least {PATCH_SIZE}x{PATCH_SIZE}, "
                f"got {x.size(-2)}x{x.size(-1)}"
            )
        h = self._bank_test(x, padded)
        h, _ = self._trunk(h, None, False)
        return torch.sigmoid(self.head(h))

    def forward(self, x: torch.Tensor, mode: str = "train", **kw):
        if mode == "train":
            return self.forward_train(x, **kw)
        if mode == "test":
            return self.forward_test(x, **kw)
        raise ConfigError(f"unknown detector mode {mode!r}")


def build_detector(
    spec: DetectorSpec, seed: int, dtype: torch.dtype = torch.float32
) -> Detector:
    """Construct and initialize: gaussian ``init_std`` everywhere except the
    identity-skip layers, which use ``residual_init_std``; biases zero."""
    det = Detector(spec, dtype=dtype)
    gen = torch.Generator().manual_seed(seed)
    for k in spec.bank_sizes:
        gaussian_init_(det.bank[f"k{k}"], spec.init_std, gen)
    for i, conv in enumerate(det.trunk):
        layer = i + 2
        std = spec.residual_init_std if layer in spec.residual_layers else spec.init_std
        gaussian_init_(conv, std, gen)
    gaussian_init_(det.head, spec.init_std, gen)
    return det
