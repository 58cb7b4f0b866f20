from .common import gaussian_init_, sliding_max_2d, parameter_count
from .detector import DetectorSpec, Detector, build_detector
from .adversary import (
    GeneratorSpec,
    HardNegativeGenerator,
    build_generator,
    DiscriminatorSpec,
    Discriminator,
    build_discriminator,
)
from .checkpoint import (
    save_model,
    load_model,
    state_digest,
    save_payload,
    load_payload,
)

__all__ = [
    "gaussian_init_",
    "sliding_max_2d",
    "parameter_count",
    "DetectorSpec",
    "Detector",
    "build_detector",
    "GeneratorSpec",
    "HardNegativeGenerator",
    "build_generator",
    "DiscriminatorSpec",
    "Discriminator",
    "build_discriminator",
    "save_model",
    "load_model",
    "state_digest",
    "save_payload",
    "load_payload",
]
