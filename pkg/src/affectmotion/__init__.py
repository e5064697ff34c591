"""Emotional style re-targeting of motion-capture trajectories.

Movements are described by Laban Effort/Shape features, affectively
non-discriminative features are found with an elastic-net multinomial
logistic regression, and a Gaussian HMM trained on the kinematic neighbours
of a desired path regenerates that path in the target emotion.
"""

from affectmotion.dataset import (
    LabeledDataset,
    MarkerSet,
    Movement,
    kfold_split,
    load_dataset,
    normalize_scale,
    parse_trajectory_file,
    resample,
)
from affectmotion.lma import COMPONENTS, FilterParams, LMAVector, lma_vector
from affectmotion.rmlr import RMLRModel, cross_validate, fit
from affectmotion.hmm import GaussianHMM, baum_welch, init_segmental, viterbi
from affectmotion.generation import GenerationConfig, GenerationResult, generate

__version__ = "0.1.0"

__all__ = [
    "COMPONENTS",
    "FilterParams",
    "GaussianHMM",
    "GenerationConfig",
    "GenerationResult",
    "LMAVector",
    "LabeledDataset",
    "MarkerSet",
    "Movement",
    "RMLRModel",
    "baum_welch",
    "cross_validate",
    "fit",
    "generate",
    "init_segmental",
    "kfold_split",
    "lma_vector",
    "load_dataset",
    "normalize_scale",
    "parse_trajectory_file",
    "resample",
    "viterbi",
]
