from __future__ import annotations

import numpy as np

from ..diffcore import tensor as T
from ..diffcore.layers import CausalConv1d, Dense, Module, dropout
from ..diffcore.tensor import Parameter, Tensor
from ..skeleton import N_LANDMARKS
from .base import Forecaster, WindowBatch


def learned_adjacency(E: Tensor) -> Tensor:
    """Row-normalised non-negative adjacency from node embeddings: softmax(relu(E E^T))."""
    return T.softmax(T.relu(T.matmul(E, T.transpose(E, (1, 0)))), axis=-1)


def mixprop(x: Tensor, A: Tensor, order: int, alpha: float) -> Tensor:
    """Concatenate propagation depths 0..order with restarts: h_k = a x + (1-a) A h_{k-1}.

    ``x`` is (B, N, T, C); the result is (B, N, T, (order+1) C).
    """
    B, N, n, C = x.shape
    flat = x.reshape(B, N, n * C)
    h, out = flat, [flat]
    for _ in range(order):
        h = flat * alpha + T.matmul(A, h) * (1.0 - alpha)
        out.append(h)
    return T.concat([o.reshape(B, N, n, C) for o in out], axis=-1)


class Inception(Module):
    """Parallel causal convolutions of several widths, trimmed to a common length."""

    def __init__(self, c_in: int, c_out: int, kernels, rng):
        if c_out % len(kernels):
            raise ValueError("inception output channels must split evenly across kernels")
        self.convs = [CausalConv1d(c_in, c_out // len(kernels), k, 1, rng) for k in kernels]

    def __call__(self, x: Tensor) -> Tensor:
        outs = [conv(x) for conv in self.convs]
        n = min(o.shape[-2] for o in outs)
        return T.concat([o[..., o.shape[-2] - n:, :] for o in outs], axis=-1)


class GraphBlock(Module):
    def __init__(self, c, n_in_frames: int, rng):
        conv_c, res_c, graph_c, skip_c = c.stgnn_channels
        k = c.stgnn_kernels
        self.filt = Inception(res_c, conv_c, k, rng)
        self.gate = Inception(res_c, conv_c, k, rng)
        self.n_out_frames = n_in_frames - (max(k) - 1)
        self.skip = Dense(self.n_out_frames * conv_c, skip_c, rng)
        depth = c.stgnn_mixhop + 1
        self.gconv_fwd = Dense(depth * conv_c, res_c, rng)
        self.gconv_bwd = Dense(depth * conv_c, res_c, rng)


class STGNN(Forecaster):
    """Spatio-temporal graph network over the 78 landmarks with a direct multi-frame head.

    Every landmark is a node carrying its relative coordinates and offsets.
    Blocks alternate gated inception temporal convolutions with mix-hop
    propagation over a learned adjacency, with residual and skip paths; the
    skip sum feeds a two-layer head that emits all horizon offsets at once.
    """

    recurrent = False
    uses_embedding = False

    def _build(self, rng: np.random.Generator) -> None:
        c = self.config
        if c.metadata_dim or c.transcript or c.audio:
            raise ValueError("the STGNN takes skeleton input only")
        conv_c, res_c, graph_c, skip_c = c.stgnn_channels
        self.n_frames = max(c.obs_len, self.stgnn_receptive_field)
        self.node_emb = Parameter(0.1 * rng.standard_normal((N_LANDMARKS, c.stgnn_node_dim)))
        self.start = Dense(6, res_c, rng)
        self.skip0 = Dense(self.n_frames * 6, skip_c, rng)
        self.blocks = []
        n = self.n_frames
        for _ in range(c.stgnn_blocks):
            blk = GraphBlock(c, n, rng)
            self.blocks.append(blk)
            n = blk.n_out_frames
        self.skip_end = Dense(n * res_c, skip_c, rng)
        self.end1 = Dense(skip_c, c.stgnn_end, rng)
        self.end2 = Dense(c.stgnn_end, c.train_horizon * 2, rng)

    @property
    def stgnn_receptive_field(self) -> int:
        c = self.config
        return 1 + c.stgnn_blocks * (max(c.stgnn_kernels) - 1)

    def adjacency(self) -> Tensor:
        return learned_adjacency(self.node_emb)

    def node_features(self, batch: WindowBatch) -> Tensor:
        """(B, 78, T, 6) per-landmark relative coordinates and offsets, left-padded to the receptive field."""
        x = batch.feats * (self.feat_scale * self.input_mask)
        B, n, _ = x.shape
        L3 = 3 * N_LANDMARKS
        s = self.skel
        rel = x[:, :, s.rel_start:s.rel_start + L3].reshape(B, n, N_LANDMARKS, 3)
        off = x[:, :, s.off_start:s.off_start + L3].reshape(B, n, N_LANDMARKS, 3)
        nodes = np.concatenate([rel, off], axis=-1).transpose(0, 2, 1, 3)
        if n < self.n_frames:
            pad = np.zeros((B, N_LANDMARKS, self.n_frames - n, 6))
            nodes = np.concatenate([pad, nodes], axis=2)
        return Tensor(nodes[:, :, nodes.shape[2] - self.n_frames:])

    def forward(self, batch: WindowBatch, horizon: int):
        c = self.config
        if not 1 <= horizon <= c.train_horizon:
            raise ValueError(f"the STGNN emits at most {c.train_horizon} frames, asked for {horizon}")
        if batch.feats.shape[1] < 1:
            raise ValueError("empty observation")
        nodes = self.node_features(batch)
        B = nodes.shape[0]
        A = self.adjacency()
        At = T.transpose(A, (1, 0))
        skip = self.skip0(nodes.reshape(B, N_LANDMARKS, -1))
        x = self.start(nodes)
        for blk in self.blocks:
            res = x
            h = T.tanh(blk.filt(x)) * T.sigmoid(blk.gate(x))
            h = dropout(h, c.dropout, self.rng, self.training)
            skip = skip + blk.skip(h.reshape(B, N_LANDMARKS, -1))
            g = blk.gconv_fwd(mixprop(h, A, c.stgnn_mixhop, c.stgnn_alpha))
            g = g + blk.gconv_bwd(mixprop(h, At, c.stgnn_mixhop, c.stgnn_alpha))
            n = g.shape[2]
            x = g + res[:, :, res.shape[2] - n:]
        skip = skip + self.skip_end(x.reshape(B, N_LANDMARKS, -1))
        out = self.end2(T.leaky_relu(self.end1(T.leaky_relu(skip))))  # (B, 78, H*2)
        out = T.transpose(out.reshape(B, N_LANDMARKS, c.train_horizon, 2), (0, 2, 1, 3))
        return out[:, :horizon]

    def output_layer(self) -> Dense:
        return self.end2
