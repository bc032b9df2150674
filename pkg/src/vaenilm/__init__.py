"""Energy disaggregation with a convolutional variational autoencoder.

Everything is plain numpy with hand-written backward passes: tensor
kernels (:mod:`ndkernel`), network layers (:mod:`layers`), the model
(:mod:`vae`), training (:mod:`trainer`), data handling (:mod:`pipeline`),
metrics (:mod:`evaluation`) and the command line (:mod:`cli`).
"""

from .checkpoint import CheckpointError, ModelCheckpoint
from .evaluation import MetricsReport, ScenarioResult, disaggregate, evaluate, recombine_median
from .ndkernel import ContractError, EvaluationError
from .pipeline import APPLIANCES, ApplianceSpec, HouseRecord, PowerTrace, SyntheticHouseConfig, synth_house
from .trainer import NumericalError, TrainConfig, train
from .vae import ModelConfig, VaeNilm

__version__ = "0.1.0"
