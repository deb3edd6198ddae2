"""Randomly weighted CNN front-ends as audio feature extractors.

The package builds untrained convolutional front-ends over waveforms and
log-mel spectrograms, turns their feature-map averages into fixed-length
vectors, and classifies those with an extreme learning machine or an SVM.
"""

from .classifiers import ELMClassifier, HyperGrid, Standardizer, SVMClassifier
from .dsp import Waveform, load_audio, log_mel, mfcc_vector, prepare_waveform
from .evaluation import EvalReport, FoldPlan, cross_validate, stratified_folds
from .frontends import (ARCHITECTURES, FrontEndSpec, MFCCFeatures, RandomCNNFeatures,
                        build_frontend, extract_features)

__version__ = "0.1.0"

__all__ = [
    "ARCHITECTURES", "ELMClassifier", "EvalReport", "FoldPlan", "FrontEndSpec", "HyperGrid",
    "MFCCFeatures", "RandomCNNFeatures", "SVMClassifier", "Standardizer", "Waveform",
    "build_frontend", "cross_validate", "extract_features", "load_audio", "log_mel",
    "mfcc_vector", "prepare_waveform", "stratified_folds",
]
