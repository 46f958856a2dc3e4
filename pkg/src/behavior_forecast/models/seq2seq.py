from __future__ import annotations

import numpy as np

from ..diffcore import tensor as T
from ..diffcore.layers import GRUCell, LSTMCell
from ..diffcore.tensor import Tensor
from .base import Forecaster, RecurrentDecoder


class Seq2Seq(Forecaster):
    """Recurrent encoder whose final state initialises a recurrent offset decoder."""

    def _build(self, rng: np.random.Generator) -> None:
        c = self.config
        H = c.hidden
        enc_in = self.encoder_in_dim + (H if c.fusion == "interactive" else 0)
        self.encoder = GRUCell(enc_in, H, rng) if c.cell == "gru" else LSTMCell(enc_in, H, rng)
        self.decoder = RecurrentDecoder(c.cell, self.decoder_in_dim(H, H), H, c.head_widths, rng)

    def _zero_state(self, B: int):
        z = Tensor(np.zeros((B, self.config.hidden)))
        return (z, Tensor(np.zeros_like(z.data))) if self.config.cell == "lstm" else z

    def _hidden(self, state):
        return state[0] if self.config.cell == "lstm" else state

    def encode(self, seq: Tensor, batch):
        if seq.shape[1] < 1:
            raise ValueError("empty observation")
        state = self._zero_state(seq.shape[0])
        for gx in T.unbind(self.encoder.input_proj(seq), axis=1):
            state = self.encoder.recur(gx, state)
        return state

    def encode_interactive(self, seq_a: Tensor, seq_b: Tensor, batch):
        """Both encoders run in lock-step, each reading the other's current hidden state."""
        B = seq_a.shape[0]
        sa, sb = self._zero_state(B), self._zero_state(B)
        for xa, xb in zip(T.unbind(seq_a, 1), T.unbind(seq_b, 1)):
            ha, hb = self._hidden(sa), self._hidden(sb)
            sa, sb = (self.encoder.recur(self.encoder.input_proj(T.concat([xa, hb], -1)), sa),
                      self.encoder.recur(self.encoder.input_proj(T.concat([xb, ha], -1)), sb))
        return sa, sb
