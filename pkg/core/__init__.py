"""O-FNN library: model, training, data, bench and the command runner."""
from .errors import (
    OFNNError,
    ConfigError,
    InvalidInputError,
    DataError,
    NumericFailure
)
from .model import (
    ModelConfig,
    InputMode,
    Params,
    OscillatoryFourierNetwork,
    forward,
    forward_batch,
    forward_dft_form,
    init_params,
    make_channels
)
from .training import (
    BackwardMode,
    LossSpec,
    TrainingSettings,
    backward,
    finite_diff_gradients,
    fit,
    multi_seed_eval
)
from .data import Dataset, load_idx, load_har2, synth_frequency_task, split

__all__ = [
    'OFNNError',
    'ConfigError',
    'InvalidInputError',
    'DataError',
    'NumericFailure',
    'ModelConfig',
    'InputMode',
    'Params',
    'OscillatoryFourierNetwork',
    'forward',
    'forward_batch',
    'forward_dft_form',
    'init_params',
    'make_channels',
    'BackwardMode',
    'LossSpec',
    'TrainingSettings',
    'backward',
    'finite_diff_gradients',
    'fit',
    'multi_seed_eval',
    'Dataset',
    'load_idx',
    'load_har2',
    'synth_frequency_task',
    'split'
]
