"""Clustered-patch element connection networks for few-shot classification, on numpy."""

from .config import RunConfig
from .errors import (CECError, CheckpointError, ConfigurationError, ContractError, DataError,
                     DimensionError, OracleError, ParameterError, TrainingError)
from .patch_cluster import ClusterMode, ClusterParams, patch_cluster
from .element_connection import cec, element_connect, relation_map
from .tensor import Tensor, backward, no_grad, set_precision

__version__ = "0.1.0"

__all__ = [
    "RunConfig", "CECError", "CheckpointError", "ConfigurationError", "ContractError",
    "DataError", "DimensionError", "OracleError", "ParameterError", "TrainingError",
    "ClusterMode", "ClusterParams", "patch_cluster", "cec", "element_connect",
    "relation_map", "Tensor", "backward", "no_grad", "set_precision",
]
