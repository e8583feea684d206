"""Core module for EMT: tensor engine, model, configuration and accounting"""

from .accounting import count_flops, count_params, ledger
from .config import AnalysisConfig, DataConfig, ModelConfig, RunConfig, TrainConfig, WindowSpec
from .config_file import RunConfigFile
from .errors import EmtError
from .model import EmtModel, EmtParameters, emt_forward
from .tensor import DType, Tape, Tensor, backward

__all__ = [
    'count_flops', 'count_params', 'ledger',
    'AnalysisConfig', 'DataConfig', 'ModelConfig', 'RunConfig', 'TrainConfig', 'WindowSpec',
    'RunConfigFile', 'EmtError',
    'EmtModel', 'EmtParameters', 'emt_forward',
    'DType', 'Tape', 'Tensor', 'backward',
]
