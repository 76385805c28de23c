"""Small fixed-architecture neural network toolkit on numpy."""
from .layers import (LstmState, activate, conv2d_backward, conv2d_forward, conv_output_size,
                     dense_backward, dense_forward, lstm_backward_sequence, lstm_forward_sequence,
                     lstm_step, lstm_step_backward, sigmoid)
from .params import (CKPT_MAGIC, ParamSet, adam_step, clip_by_global_norm, load_tensors,
                     save_tensors, uniform_init)

__all__ = [
    "LstmState", "ParamSet", "CKPT_MAGIC", "activate", "adam_step", "clip_by_global_norm",
    "conv2d_backward", "conv2d_forward", "conv_output_size", "dense_backward", "dense_forward",
    "load_tensors", "lstm_backward_sequence", "lstm_forward_sequence", "lstm_step",
    "lstm_step_backward", "save_tensors", "sigmoid", "uniform_init",
]
