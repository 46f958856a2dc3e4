from __future__ import annotations

import numpy as np

from ..diffcore import tensor as T
from ..diffcore.layers import Dense, LayerNorm, Module, MultiHeadAttention, dropout
from ..diffcore.tensor import Parameter, Tensor
from ..skeleton import N_LANDMARKS
from .base import Forecaster, RecurrentDecoder, WindowBatch


def drop_path(x: Tensor, p: float, rng: np.random.Generator, training: bool) -> Tensor:
    """Stochastic depth: drop a whole residual branch per sample."""
    if not training or p <= 0.0:
        return x
    keep = (rng.random((x.shape[0],) + (1,) * (x.ndim - 1)) >= p) / (1.0 - p)
    return x * keep


class Block(Module):
    """Pre-norm transformer block (attention + leaky-ReLU MLP)."""

    def __init__(self, d: int, heads: int, mlp_ratio: int, rng: np.random.Generator):
        self.norm1 = LayerNorm(d)
        self.attn = MultiHeadAttention(d, heads, rng)
        self.norm2 = LayerNorm(d)
        self.fc1 = Dense(d, mlp_ratio * d, rng)
        self.fc2 = Dense(mlp_ratio * d, d, rng)

    def __call__(self, x: Tensor, p_drop: float, rng) -> tuple[Tensor, Tensor]:
        a, w = self.attn(self.norm1(x))
        x = x + drop_path(a, p_drop, rng, self.training)
        m = self.fc2(T.leaky_relu(self.fc1(self.norm2(x))))
        return x + drop_path(m, p_drop, rng, self.training), w


class TemporalEncoder(Module):
    """Temporal self-attention over frame tokens followed by learned softmax pooling."""

    def __init__(self, d: int, n_frames: int, depth: int, heads: int, mlp_ratio: int, rng):
        self.n_frames = n_frames
        self.pos = Parameter(0.02 * rng.standard_normal((n_frames, d)))
        self.blocks = [Block(d, heads, mlp_ratio, rng) for _ in range(depth)]
        self.norm = LayerNorm(d)
        self.pool_logits = Parameter(np.zeros(n_frames))
        self.attention: list[np.ndarray] = []

    def __call__(self, tokens: Tensor, p_drop: float, rng) -> Tensor:
        B, n, d = tokens.shape
        if n != self.n_frames:
            raise ValueError(f"expected {self.n_frames} frame tokens, got {n}")
        x = tokens + self.pos
        self.attention = []
        for blk in self.blocks:
            x, w = blk(x, p_drop, rng)
            self.attention.append(w.data)
        x = self.norm(x)
        weights = T.softmax(self.pool_logits, axis=0).reshape(1, 1, n)
        return T.matmul(weights, x).reshape(B, d)


class TransformerT(Forecaster):
    """Temporal transformer encoder; its pooled output initialises a GRU decoder."""

    def _build(self, rng: np.random.Generator) -> None:
        c = self.config
        d = self.encoder_in_dim
        self.temporal = TemporalEncoder(d, c.obs_len, c.depth, c.heads, c.mlp_ratio, rng)
        self.decoder = RecurrentDecoder("gru", self.decoder_in_dim(d, d), d, c.head_widths, rng)

    def encode(self, seq: Tensor, batch: WindowBatch):
        return self.temporal(seq, self.config.drop_path, self.rng)

    @property
    def attention_maps(self) -> list[np.ndarray]:
        """Per-depth (B, heads, T, T) weights from the last forward pass."""
        return self.temporal.attention


class TransformerST(TransformerT):
    """Spatial attention over the 78 joint tokens of each frame, then the temporal model.

    Joint tokens come from each landmark's 6 features (relative xyz, offset
    xyz); the per-frame spatial output is flattened, joined with the root and
    gaze slots and projected to the embedding width.
    """

    def _build(self, rng: np.random.Generator) -> None:
        super()._build(rng)
        c = self.config
        cj = c.joint_dim
        self.joint_in = Dense(6, cj, rng)
        self.spatial_pos = Parameter(0.02 * rng.standard_normal((N_LANDMARKS, cj)))
        self.spatial = [Block(cj, c.heads, c.mlp_ratio, rng) for _ in range(c.depth)]
        self.spatial_norm = LayerNorm(cj)
        n_global = self.skel.feature_size - 6 * N_LANDMARKS
        self.frame_proj = Dense(N_LANDMARKS * cj + n_global, c.embed_dim, rng)
        self.spatial_attention: list[np.ndarray] = []

    def frame_embeddings(self, x: Tensor) -> Tensor:
        B, n, F = x.shape
        L3 = 3 * N_LANDMARKS
        rel = x[:, :, :L3].reshape(B, n, N_LANDMARKS, 3)
        off = x[:, :, L3:2 * L3].reshape(B, n, N_LANDMARKS, 3)
        tok = self.joint_in(T.concat([rel, off], axis=-1)) + self.spatial_pos  # (B, n, 78, cj)
        tok = tok.reshape(B * n, N_LANDMARKS, self.config.joint_dim)
        self.spatial_attention = []
        for blk in self.spatial:
            tok, w = blk(tok, self.config.drop_path, self.rng)
            self.spatial_attention.append(w.data)
        tok = self.spatial_norm(tok).reshape(B, n, N_LANDMARKS * self.config.joint_dim)
        glob = x[:, :, 2 * L3:]
        e = T.leaky_relu(self.frame_proj(T.concat([tok, glob], axis=-1)))
        return dropout(e, self.config.dropout, self.rng, self.training)


def attention_profile(model, batch: WindowBatch) -> np.ndarray:
    """(B, T) attention received by each observed frame, averaged over depths, heads and queries."""
    if not isinstance(model, TransformerT):
        raise TypeError("attention profiles need an attention-based (transformer) model")
    model.predict(batch, 1)
    maps = model.attention_maps
    if not maps:
        raise RuntimeError("no attention maps recorded")
    # incoming attention: average each key column over queries, heads and depths
    return np.mean([w.mean(axis=(1, 2)) for w in maps], axis=0)
