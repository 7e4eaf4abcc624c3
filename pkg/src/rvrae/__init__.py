"""Recurrent variational factor model for cross-sectional stock returns.

The model pairs a variational recurrent network that extracts latent factors
from the return cross-section with an LSTM that maps each stock's
characteristic history to factor exposures.  Everything runs on a small
reverse-mode autodiff layer over numpy (:mod:`rvrae.numerics`).
"""

from .config import RunConfig, load_config
from .data import (PanelDataset, SplitSpec, SyntheticSpec, generate_synthetic, load_csv,
                   normalize_characteristics, write_csv)
from .metrics import EvalReport, PortfolioSpec, rank_ic, rank_icir, sharpe, total_r2
from .model import ModelDims, RvraeModel, TrainConfig, compute_loss, predict, train

__version__ = "0.1.0"

__all__ = [
    "EvalReport", "ModelDims", "PanelDataset", "PortfolioSpec", "RunConfig", "RvraeModel",
    "SplitSpec", "SyntheticSpec", "TrainConfig", "compute_loss", "generate_synthetic", "load_config",
    "load_csv", "normalize_characteristics", "predict", "rank_ic", "rank_icir", "sharpe",
    "total_r2", "train", "write_csv",
]
