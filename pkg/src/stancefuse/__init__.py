"""Two-stage multimodal stance detection at desk scale.

Stage one extracts stance-relevant context (source-text summaries, image
captions); stage two encodes text, image and the joint reply+caption
sequence, projects them into a shared space and classifies the stance.
"""

from .config import AblationVariant, EncoderConfig, JtmoConfig, ModelConfig, RunConfig, resolve_config
from .dataset import ExampleRecord, StanceLabel
from .errors import (
    ConfigError,
    ContractError,
    DataError,
    NumericError,
    StanceFuseError,
    TrainingError,
    TransportError,
)
from .params import ParamStore
from .tensor import Tensor, backward, no_grad

__version__ = "0.1.0"

__all__ = [
    "AblationVariant",
    "ConfigError",
    "ContractError",
    "DataError",
    "EncoderConfig",
    "ExampleRecord",
    "JtmoConfig",
    "ModelConfig",
    "NumericError",
    "ParamStore",
    "RunConfig",
    "StanceFuseError",
    "StanceLabel",
    "Tensor",
    "TrainingError",
    "TransportError",
    "backward",
    "no_grad",
    "resolve_config",
]
