"""Learning-rate schedules for the training stages."""

from __future__ import annotations

from dataclasses import dataclass

from ..errors import ConfigError


@dataclass
class StageSchedule:
    stage: str
    iterations: int
    base_lr: float
    lr_drop_every: int
    lr_drop_factor: float = 10.0
    momentum: float = 0.9
    weight_decay: float = 0.0005

    def validate(self) -> None:
        if self.iterations < 0:
            raise ConfigError("iterations cannot be negative")
        if self.base_lr <= 0 or self.lr_drop_every <= 0 or self.lr_drop_factor <= 0:
            raise ConfigError("learning-rate parameters must be positive")

    def lr(self, iteration: int) -> float:
        return lr_at(self.base_lr, iteration, self.lr_drop_every, self.lr_drop_factor)


def lr_at(base_lr: float, iteration: int, drop_every: int, factor: float = 10.0) -> float:
    """Step schedule: base divided by factor once per completed drop period."""
    return base_lr / factor ** (iteration // drop_every)
