"""Multichannel source separation with directional nonnegative tensor factorization."""

from .doa import ArrayGeometry, DirectionField, design_doa_solver, direction_field, estimate_doa
from .estimators import DirectionalNMF, DirectionalNTF, SupervisedNMF
from .harness import ExperimentConfig, run_experiment, separate, synthesize_mixture
from .metrics import EvalScores, bss_eval
from .nmf import NmfModel, SupervisedModel, kl_divergence, nmf_fit, nmf_update
from .ntf import (
    DenseDirectionalObservation,
    NtfModel,
    SparseDirectionalObservation,
    dntf_update_dense,
    dntf_update_sparse,
    posterior_mask,
)
from .separation import SeparationMask, apply_mask, ideal_binary_mask, ideal_ratio_mask
from .spectral import AudioClip, ComplexGrid, Spectrogram, StftConfig, istft, normalize_magnitude, read_wav, stft, write_wav

__version__ = "0.1.0"

__all__ = [
    "ArrayGeometry", "DirectionField", "design_doa_solver", "direction_field", "estimate_doa",
    "DirectionalNMF", "DirectionalNTF", "SupervisedNMF",
    "ExperimentConfig", "run_experiment", "separate", "synthesize_mixture",
    "EvalScores", "bss_eval",
    "NmfModel", "SupervisedModel", "kl_divergence", "nmf_fit", "nmf_update",
    "DenseDirectionalObservation", "NtfModel", "SparseDirectionalObservation",
    "dntf_update_dense", "dntf_update_sparse", "posterior_mask",
    "SeparationMask", "apply_mask", "ideal_binary_mask", "ideal_ratio_mask",
    "AudioClip", "ComplexGrid", "Spectrogram", "StftConfig", "istft", "normalize_magnitude",
    "read_wav", "stft", "write_wav",
]
