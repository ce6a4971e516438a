"""Federated peephole-LSTM load forecasting for smart-meter clusters.

Submodules: :mod:`numerics`, :mod:`model`, :mod:`data`, :mod:`federation`,
:mod:`compression`, :mod:`metrics`, :mod:`experiment` and :mod:`cli`.
"""

from . import compression, data, federation, metrics, model, numerics
from .compression import CompressionSpec
from .data import generate_synthetic, ingest_csv, make_windows, split_normalize
from .experiment import ExperimentConfig, run_experiment
from .federation import FedConfig, GlobalModel, run_federated, run_local_only
from .metrics import mae, nrmse
from .model import LstmParams, TrainConfig, backward, forward, init_params, train_segment

__version__ = "0.1.0"
