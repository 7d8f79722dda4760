"""Hierarchical shrinkage Gaussian process emulators and equation recovery."""
from .basis import BasisFamily, TruncationVector, build_design_matrix, enumerate_indices, eval_basis
from .gibbs import GibbsConfig, run_chain, run_chain_1d
from .horseshoe import HorseshoeConfig, hs_run_chain
from .adaptive import AdaptiveConfig
from .model import ChainState, Dataset, Hyperparameters, PosteriorChain
from .predict import PredictionResult, predict

__version__ = "0.1.0"
