from .adam import AdamState, adam_update
from .checkpoint import Checkpoint, CheckpointError, load_checkpoint, save_checkpoint
from .conv import CausalConvParams, causal_conv_backward, causal_conv_forward
from .gradcheck import GradCheckReport, gradient_check
from .lstm import (
    DenseParams,
    LstmParams,
    LstmState,
    ShapeError,
    batch_backward,
    batch_forward,
    lstm_backward,
    lstm_forward,
    lstm_step,
)
