"""Gaussian conditional random fields for partially labeled temporal graphs.

The structured model couples unstructured predictions with graph smoothing;
``marginal`` fits it when labels are missing by integrating the unlabeled
nodes out, and ``baselines`` holds the imputation-based alternatives.
"""

from .gcrf import FitInfo, GcrfModel, OptimizerSettings, fit, log_likelihood, predict
from .graph import GcrfParams, LabelMask, TemporalAttributedGraph, laplacian
from .marginal import fit_marginal, marginal_log_likelihood, marginalize
from .missingness import Kind, Mechanism
from .synth import SyntheticSpec, generate

__all__ = [
    "FitInfo", "GcrfModel", "GcrfParams", "Kind", "LabelMask", "Mechanism", "OptimizerSettings",
    "SyntheticSpec", "TemporalAttributedGraph", "fit", "fit_marginal", "generate", "laplacian",
    "log_likelihood", "marginal_log_likelihood", "marginalize", "predict",
]

__version__ = "0.1.0"
