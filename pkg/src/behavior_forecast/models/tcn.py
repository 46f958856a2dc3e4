from __future__ import annotations

import numpy as np

from ..diffcore import tensor as T
from ..diffcore.layers import CausalConv1d
from ..diffcore.tensor import Tensor
from .base import Forecaster, RecurrentDecoder


class TCN(Forecaster):
    """Dilated causal convolution encoder collapsing the window to one context vector.

    Each block is a (K, D) causal convolution followed by a pointwise (1, 1)
    convolution, both with leaky ReLU.  With K=2 and dilations 1, 3, 9, 27, 59
    the receptive field is exactly 100 frames.  A GRU decoder takes the context
    vector as its hidden state; an LSTM decoder splits it into hidden and cell.
    """

    def _build(self, rng: np.random.Generator) -> None:
        c = self.config
        C = c.tcn_channels
        if c.cell == "lstm" and C % 2:
            raise ValueError("tcn_channels must be even for the LSTM decoder")
        dims = [self.encoder_in_dim] + [C] * len(c.tcn_dilations)
        self.blocks = [
            [CausalConv1d(a, C, c.tcn_kernel, d, rng), CausalConv1d(C, C, 1, 1, rng)]
            for a, d in zip(dims[:-1], c.tcn_dilations)
        ]
        self.dec_hidden = C if c.cell == "gru" else C // 2
        self.decoder = RecurrentDecoder(c.cell, self.decoder_in_dim(self.dec_hidden, self.dec_hidden),
                                        self.dec_hidden, c.head_widths, rng)

    def context(self, seq: Tensor) -> Tensor:
        rf = self.config.receptive_field
        n = seq.shape[1]
        if n < rf:
            raise ValueError(f"observation of {n} frames is shorter than the TCN receptive field ({rf})")
        x = seq[:, n - rf:] if n > rf else seq
        for conv, point in self.blocks:
            x = T.leaky_relu(point(T.leaky_relu(conv(x))))
        return x  # (B, 1, C)

    def encode(self, seq: Tensor, batch):
        ctx = self.context(seq)
        ctx = ctx.reshape(ctx.shape[0], ctx.shape[-1])
        if self.config.cell == "lstm":
            h = self.dec_hidden
            return ctx[:, :h], ctx[:, h:]
        return ctx
