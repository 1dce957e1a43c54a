"""Multilinear compressive learning with adaptive compression rate.

Separable tensor sensing with data-driven initialization, prefix-mask
training that orders measurement elements by importance, per-rate
server-side finetuning, and a client/server transmission simulator.
"""

from .flops import FlopReport, count_flops
from .masks import MaskDims, MaskSpec, materialize_mask, sample_mask_dims
from .model import MclModel
from .remote import ChannelTrace, SessionReport, rate_controller, run_session
from .sensing import (
    HosvdInit,
    SensingOperatorSet,
    SynthesisOperatorSet,
    hosvd_init,
    sense,
    synthesize,
)
from .training import (
    TrainConfig,
    evaluate,
    finetune_server_side,
    forward,
    initialize_model,
    predict,
    pretrain_task_network,
    train_adaptive,
    train_single_rate,
)

__version__ = "0.1.0"
