"""Differentiable sequence-to-sequence parser (float64, second-order capable)."""

from .autodiff import DTYPE, ModelParams, Tensor, clip_grads, detached, global_norm, grad
from .seq2seq import (Batch, Dropout, Seq2SeqConfig, decode_greedy, init_params, make_batch,
                      nll_loss)

__all__ = [
    "DTYPE", "ModelParams", "Tensor", "clip_grads", "detached", "global_norm", "grad",
    "Batch", "Dropout", "Seq2SeqConfig", "decode_greedy", "init_params", "make_batch", "nll_loss",
]
