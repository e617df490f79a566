"""Dataset container, preprocessing, splits and the synthetic generator."""
from .container import SampleRecord, read_dataset, read_manifest, read_sample, write_dataset
from .prepared import PreparedSplit
from .scaling import (ScalingStats, apply_mask, assemble_grid_input, encode_direction, encode_sex,
                      scale_age, scale_displacement, scale_frequency, scale_t1, scale_volume,
                      unscale_displacement)
from .split import split_counts, split_dataset, split_indices
from .synthetic import generate_synthetic_dataset

__all__ = [
    "SampleRecord", "read_dataset", "read_manifest", "read_sample", "write_dataset", "PreparedSplit",
    "ScalingStats", "apply_mask", "assemble_grid_input", "encode_direction", "encode_sex", "scale_age",
    "scale_displacement", "scale_frequency", "scale_t1", "scale_volume", "unscale_displacement",
    "split_counts", "split_dataset", "split_indices", "generate_synthetic_dataset",
]
