"""Python bindings for the artistembed audio embedding library."""

from ._core import (
    Error,
    Model,
    average_precision,
    generate_synthetic_dataset,
    log_mel,
    mean_average_precision,
    read_wav,
    write_wav,
)

__all__ = [
    "Error",
    "Model",
    "average_precision",
    "generate_synthetic_dataset",
    "log_mel",
    "mean_average_precision",
    "read_wav",
    "write_wav",
]
