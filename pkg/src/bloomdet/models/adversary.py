"""Hard-negative generator and discriminator.

The generator is an encoder-decoder over 25 x 25 patches: eight 3x3
convolutions and two stride-2 transposed convolutions, with skip
concatenations from the matching encoder resolutions (25 -> 13 -> 7 -> 13 ->
25). The output is linear in the input's channel space: the generator emits
a full patch meant to sit near the real-negative manifold while scoring high
under the detector. Weights start at std 0.02 except the output layer, which
starts at std 50 so early samples are wildly off-manifold and the
discriminator has something to reject.

The discriminator is four stride-2 3x3 convolutions (25 -> 13 -> 7 -> 4 ->
2) and a fully connected sigmoid head judging real versus generated.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from ..data.patches import PATCH_SIZE
from ..errors import ConfigError, ShapeError
from .common import gaussian_init_


@dataclass
class GeneratorSpec:
    channels: int
    base_width: int = 32
    init_std: float = 0.02
    output_init_std: float = 50.0

    def validate(self) -> None:
        if self.channels < 1 or self.base_width < 1:
            raise ConfigError("generator needs positive channels and base width")


class HardNegativeGenerator(nn.Module):
    def __init__(self, spec: GeneratorSpec, dtype: torch.dtype = torch.float32):
        super().__init__()
        spec.validate()
        self.spec = spec
        w = spec.base_width
        c = spec.channels
        kw = dict(kernel_size=3, padding=1, dtype=dtype)
        self.enc1 = nn.Conv2d(c, w, **kw)
        self.enc2 = nn.Conv2d(w, w, **kw)
        self.enc3 = nn.Conv2d(w, 2 * w, stride=2, **kw)
        self.enc4 = nn.Conv2d(2 * w, 2 * w, **kw)
        self.enc5 = nn.Conv2d(2 * w, 4 * w, stride=2, **kw)
        self.enc6 = nn.Conv2d(4 * w, 4 * w, **kw)
        self.dec1 = nn.ConvTranspose2d(4 * w, 2 * w, kernel_size=3, stride=2, padding=1, dtype=dtype)
        self.dec2 = nn.Conv2d(4 * w, 2 * w, **kw)
        self.dec3 = nn.ConvTranspose2d(2 * w, w, kernel_size=3, stride=2, padding=1, dtype=dtype)
        self.out = nn.Conv2d(2 * w, c, **kw)

    @property
    def dtype(self) -> torch.dtype:
        return self.out.weight.dtype

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.dim() != 4 or x.size(-2) != PATCH_SIZE or x.size(-1) != PATCH_SIZE:
            raise ShapeError(
                f"generator input must be (B, C, {PATCH_SIZE}, {PATCH_SIZE}), "
                f"got {tuple(x.shape)}"
            )
        if x.size(1) != self.spec.channels:
            raise ShapeError(f"expected {self.spec.channels} channels, got {x.size(1)}")
        x = x.to(self.dtype)
        h1 = F.relu(self.enc1(x))
        h2 = F.relu(self.enc2(h1))          # 25x25, skip A
        h3 = F.relu(self.enc3(h2))          # 13x13
        h4 = F.relu(self.enc4(h3))          # 13x13, skip B
        h5 = F.relu(self.enc5(h4))          # 7x7
        h6 = F.relu(self.enc6(h5))          # 7x7
        d1 = F.relu(self.dec1(h6))          # 13x13
        d1 = torch.cat([d1, h4], dim=1)
        d2 = F.relu(self.dec2(d1))          # 13x13
        d3 = F.relu(self.dec3(d2))          # 25x25
        d3 = torch.cat([d3, h2], dim=1)
        return self.out(d3)                 # linear output, full patch


def build_generator(
    spec: GeneratorSpec, seed: int, dtype: torch.dtype = torch.float32
) -> HardNegativeGenerator:
    gen_model = HardNegativeGenerator(spec, dtype=dtype)
    g = torch.Generator().manual_seed(seed)
    for name, module in gen_model.named_children():
        std = spec.output_init_std if name == "out" else spec.init_std
        gaussian_init_(module, std, g)
    return gen_model


@dataclass
class DiscriminatorSpec:
    channels: int
    widths: tuple[int, ...] = (32, 64, 128, 256)
    init_std: float = 0.01

    def validate(self) -> None:
        if self.channels < 1:
            raise ConfigError("discriminator needs positive channels")
        if len(self.widths) != 4:
            raise ConfigError(f"discriminator needs 4 conv widths, got {len(self.widths)}")


class Discriminator(nn.Module):
    def __init__(self, spec: DiscriminatorSpec, dtype: torch.dtype = torch.float32):
        super().__init__()
        spec.validate()
        self.spec = spec
        chans = (spec.channels, *spec.widths)
        self.convs = nn.ModuleList(
            nn.Conv2d(chans[i], chans[i + 1], 3, stride=2, padding=1, dtype=dtype)
            for i in range(4)
        )
        # 25 -> 13 -> 7 -> 4 -> 2 under stride-2 same padding
        self.fc = nn.Linear(spec.widths[-1] * 2 * 2, 1, dtype=dtype)

    @property
    def dtype(self) -> torch.dtype:
        return self.fc.weight.dtype

    def forward(self, x: torch.Tensor, squash: bool = True) -> torch.Tensor:
        """Realness score per patch; ``squash=False`` returns the
        pre-sigmoid value for the numerically live loss form."""
        if x.dim() != 4 or x.size(-2) != PATCH_SIZE or x.size(-1) != PATCH_SIZE:
            raise ShapeError(
                f"discriminator input must be (B, C, {PATCH_SIZE}, {PATCH_SIZE}), "
                f"got {tuple(x.shape)}"
            )
        if x.size(1) != self.spec.channels:
            raise ShapeError(f"expected {self.spec.channels} channels, got {x.size(1)}")
        h = x.to(self.dtype)
        for conv in self.convs:
            h = F.relu(conv(h))
        out = self.fc(h.flatten(1))[:, 0]
        return torch.sigmoid(out) if squash else out


def build_discriminator(
    spec: DiscriminatorSpec, seed: int, dtype: torch.dtype = torch.float32
) -> Discriminator:
    disc = Discriminator(spec, dtype=dtype)
    g = torch.Generator().manual_seed(seed)
    gaussian_init_(disc, spec.init_std, g)
    return disc
