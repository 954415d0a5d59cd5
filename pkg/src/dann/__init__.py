"""Domain-adversarial training by gradient reversal, on a small numpy network stack."""
from .analysis import (BoundReport, DistanceEstimate, GapReport, bound_report, export_features,
                       gap_coverage, load_features, network_proxy_distance, proxy_hdh_distance)
from .batch import LabeledBatch
from .checkpoint import load_checkpoint, load_model, save_checkpoint, save_model
from .datasets import (DomainDataset, ToyShift, load_dataset, load_idx, make_mnistm,
                       make_shifted_toy, mean_subtract, procedural_backgrounds, read_idx, write_idx)
from .engine import TrainReport, TrainingDiverged, evaluate, train, train_semi_supervised, train_source_only
from .kernels import BACKEND
from .layers import GradientReversal, grl_backward, grl_forward
from .network import Network, build_network
from .optim import TrainConfig, dann_update, dual_loss_update, lambda_at, learning_rate_at
from .tensor import Rng, ShapeError

__version__ = "0.1.0"
