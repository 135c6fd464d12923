"""Noisy partial-label learning with iterative candidate-set refinement."""

from .datagen import DatasetSpec, corrupt, generate_gaussian_clusters, make_dataset
from .losses import Loss
from .model import Classifier, OptimizerConfig
from .refine import RefineConfig, run_training
from .theory import TheoryParams, multi_round_refine, sample_oracle_population

__version__ = "0.1.0"
