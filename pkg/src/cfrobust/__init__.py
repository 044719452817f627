"""Counterfactual and factual background augmentation against spurious correlations."""
from . import augment, evalkit, objectives, synthbench
from .augment import compose_counterfactual, compose_factual, counterfactual, factual, largest_background_rectangle
from .evalkit import MetricReport, macro_ovr_auc, next_class_shift, saliency_aupr
from .objectives import LossConfig, total_loss
from .synthbench import SplitMode, SynthSpec, generate_benchmark

__version__ = "0.1.0"
