"""Point-cloud upsampling by sphere tracing a learned unsigned distance field."""

from .geometry import PointCloud, QueryBatch
from .network import NetConfig, init_params, march, parameter_count
from .pipeline import upsample
from .training import TrainConfig, train

__version__ = "0.1.0"

__all__ = ["NetConfig", "PointCloud", "QueryBatch", "TrainConfig", "init_params", "march",
           "parameter_count", "train", "upsample"]
