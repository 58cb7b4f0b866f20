from .raster import (
    Raster,
    NormalizationStats,
    load_raster,
    save_raster,
    compute_normalization,
    normalize_raster,
)
from .labels import LabelSet, read_label_sidecar, write_label_sidecar
from .patches import (
    PATCH_SIZE,
    MARGIN,
    Patch,
    extract_patch,
    extract_patches,
    enumerate_window_examples,
    mirror_augment,
    mirror_orbit_tables,
)
from .dataset import Dataset, load_dataset, save_dataset
from .synth import SynthConfig, generate_synthetic_scene, build_synthetic_dataset
from .hsi import load_hsi_benchmark, split_hsi_train_test, reflect_pad_raster

__all__ = [
    "Raster",
    "NormalizationStats",
    "load_raster",
    "save_raster",
    "compute_normalization",
    "normalize_raster",
    "LabelSet",
    "read_label_sidecar",
    "write_label_sidecar",
    "PATCH_SIZE",
    "MARGIN",
    "Patch",
    "extract_patch",
    "extract_patches",
    "enumerate_window_examples",
    "mirror_augment",
    "mirror_orbit_tables",
    "Dataset",
    "load_dataset",
    "save_dataset",
    "SynthConfig",
    "generate_synthetic_scene",
    "build_synthetic_dataset",
    "load_hsi_benchmark",
    "split_hsi_train_test",
    "reflect_pad_raster",
]
