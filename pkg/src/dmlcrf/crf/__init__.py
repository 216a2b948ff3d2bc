"""Windowed mean-field CRF with Gaussian edge potentials."""

from .engine import (
    PRESETS,
    CrfParams,
    KernelWindow,
    brute_force_infer,
    build_windows,
    infer,
    kernel_values,
    mean_field_step,
    unary_from_prob,
    window_offsets,
)

__all__ = [
    "PRESETS",
    "CrfParams",
    "KernelWindow",
    "brute_force_infer",
    "build_windows",
    "infer",
    "kernel_values",
    "mean_field_step",
    "unary_from_prob",
    "window_offsets",
]
