"""Hyperspectral pixel classification: center-loss spectral features refined by a windowed CRF."""

from ._accel import NUMBA_AVAILABLE, USE_NUMBA
from .crf import CrfParams, brute_force_infer, infer
from .dml_net import MlpParams, TrainConfig, extract, forward, train
from .errors import DmlCrfError
from .hsi_data import HsiCube, LabelMap, SampleSet, load_cube, load_labels, normalize, synth_scene
from .metrics import evaluate

__version__ = "0.1.0"

__all__ = [
    "NUMBA_AVAILABLE", "USE_NUMBA", "CrfParams", "brute_force_infer", "infer", "MlpParams", "TrainConfig",
    "extract", "forward", "train", "DmlCrfError", "HsiCube", "LabelMap", "SampleSet", "load_cube",
    "load_labels", "normalize", "synth_scene", "evaluate",
]
