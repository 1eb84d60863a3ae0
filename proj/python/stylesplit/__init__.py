"""Dual-branch style/content representation learning on a synthetic dataset."""

from ._core import (
    CheckpointError,
    ConfigError,
    classification_metrics,
    collapse_toy,
    covariance_penalty,
    fft_amplitude_loss,
    fuse,
    generate_dataset,
    gradient_suite,
    hinge_d,
    info_nce,
    instance_norm,
    linear_probe,
    load_config,
    parse_config,
    pretrain,
    probe,
    sample_mask,
    swd_loss,
    variance_penalty,
)

__all__ = [
    "CheckpointError",
    "ConfigError",
    "classification_metrics",
    "collapse_toy",
    "covariance_penalty",
    "fft_amplitude_loss",
    "fuse",
    "generate_dataset",
    "gradient_suite",
    "hinge_d",
    "info_nce",
    "instance_norm",
    "linear_probe",
    "load_config",
    "parse_config",
    "pretrain",
    "probe",
    "sample_mask",
    "swd_loss",
    "variance_penalty",
]
