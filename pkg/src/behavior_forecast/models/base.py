"""Shared encoder-decoder machinery.

All forecasters map an observation window to per-frame 2D landmark offsets of
shape (B, H, 78, 2).  Recurrent decoders are fed, at each step, the embedded
feature vector of the frame they just reconstructed; those feature vectors are
rebuilt inside the graph from the predicted 2D pose (depth and gaze are carried
over from the last observed frame).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from ..diffcore import tensor as T
from ..diffcore.layers import Dense, GRUCell, LSTMCell, Module, dropout
from ..diffcore.tensor import Parameter, Tensor, no_grad
from ..fusion import AUDIO_DIM, MODALITY_DIMS, TRANSCRIPT_DIM, concat_modality, early_fuse, interactive_decode, late_fuse
from ..skeleton import (DEFAULT_CONFIG, N_LANDMARKS, PARTS, SequenceArrays, SkeletonConfig, group_landmarks,
                        input_slot_mask, landmark_part_index, sequence_features)
from .config import ModelConfig

OUT_DIM = N_LANDMARKS * 2


class UnsupportedRollout(RuntimeError):
    """The model cannot be fed its own predictions (e.g. it needs future audio)."""


@dataclass
class Window:
    obs: SequenceArrays
    partner: Optional[SequenceArrays] = None
    metadata: Optional[np.ndarray] = None
    transcript: Optional[np.ndarray] = None
    audio: Optional[np.ndarray] = None


@dataclass
class WindowBatch:
    feats: np.ndarray  # (B, T, F) raw features
    last_coords: np.ndarray  # (B, 78, 3)
    last_present: np.ndarray  # (B, 4)
    last_gaze: np.ndarray  # (B, G, 3)
    last_gaze_present: np.ndarray  # (B,)
    metadata: Optional[np.ndarray] = None
    transcript: Optional[np.ndarray] = None
    audio: Optional[np.ndarray] = None
    partner: Optional["WindowBatch"] = None

    @property
    def size(self) -> int:
        return self.feats.shape[0]

    @property
    def last_pose(self) -> np.ndarray:
        return self.last_coords[..., :2]


def _stack_opt(items, name):
    vals = [getattr(w, name) for w in items]
    if all(v is None for v in vals):
        return None
    if any(v is None for v in vals):
        raise ValueError(f"{name} given for some windows only")
    return np.stack([np.asarray(v, dtype=np.float64) for v in vals])


def make_batch(windows: Sequence[Window], obs_len: Optional[int] = None,
               skel: SkeletonConfig = DEFAULT_CONFIG) -> WindowBatch:
    """Stack windows, keeping the last ``obs_len`` observed frames of each."""
    def arrays(seq_list):
        cut = [s if obs_len is None else s[len(s) - obs_len:] for s in seq_list]
        if obs_len is not None and any(len(s) < obs_len for s in seq_list):
            raise ValueError(f"observation shorter than obs_len={obs_len}")
        return WindowBatch(
            feats=np.stack([sequence_features(s, skel) for s in cut]),
            last_coords=np.stack([s.coords[-1] for s in cut]),
            last_present=np.stack([s.present[-1] for s in cut]),
            last_gaze=np.stack([s.gaze[-1] for s in cut]),
            last_gaze_present=np.array([s.gaze_present[-1] for s in cut]),
        )

    batch = arrays([w.obs for w in windows])
    batch.metadata = _stack_opt(windows, "metadata")
    batch.transcript = _stack_opt(windows, "transcript")
    audio = _stack_opt(windows, "audio")
    if audio is not None and obs_len is not None:
        audio = audio[:, -obs_len:]
    batch.audio = audio
    if all(w.partner is not None for w in windows) and windows:
        batch.partner = arrays([w.partner for w in windows])
        # partner shares the session-level context of the window
    return batch


class FrameFeatureMap:
    """Affine map from a predicted 2D pose and its offset to a feature vector."""

    def __init__(self, skel: SkeletonConfig):
        self.skel = skel
        F = skel.feature_size
        Q = skel.root_matrix
        R = skel.relative_matrix
        A = np.zeros((N_LANDMARKS, 2, F))
        Bm = np.zeros((N_LANDMARKS, 2, F))
        for c in range(2):
            # relative coordinates: rel_l = sum_j R[l, j] p_j
            A[:, c, skel.rel_start + 3 * np.arange(N_LANDMARKS) + c] = R.T
            Bm[np.arange(N_LANDMARKS), c, skel.off_start + 3 * np.arange(N_LANDMARKS) + c] = 1.0
            for r in range(4):
                A[:, c, skel.root_start + 4 * r + c] = Q[r]
                Bm[:, c, skel.root_start + 4 * r + 2 + c] = Q[r]
        self.pose_map = A.reshape(OUT_DIM, F)
        self.offset_map = Bm.reshape(OUT_DIM, F)
        self.slot_parts = skel.slot_part_matrix()

    def constants(self, batch: WindowBatch) -> tuple[np.ndarray, np.ndarray]:
        """(constant slots, presence mask) for frames decoded after the window's last frame."""
        skel = self.skel
        B = batch.size
        F = skel.feature_size
        const = np.zeros((B, F))
        z = batch.last_coords[..., 2]
        root_z = z @ skel.root_matrix.T  # (B, 4)
        rel_z = (z - root_z[:, landmark_part_index()]) * batch.last_present[:, landmark_part_index()]
        const[:, skel.rel_start + 3 * np.arange(N_LANDMARKS) + 2] = rel_z
        G = skel.n_gaze
        const[:, skel.gaze_start: skel.gaze_start + 3 * G] = (
            batch.last_gaze.reshape(B, -1) * batch.last_gaze_present[:, None])
        mask = batch.last_present.astype(np.float64) @ self.slot_parts
        mask[:, skel.gaze_slots()] = batch.last_gaze_present[:, None]
        return const, mask


class DecodeContext:
    """Per-participant decoding state: current pose and the next step's features."""

    def __init__(self, model: "Forecaster", batch: WindowBatch, first_feat: Tensor, extras: list):
        const, mask = model.featmap.constants(batch)
        scale = model.feat_scale * model.input_mask
        self.const = const * mask * scale
        self.mask = mask * scale
        self.featmap = model.featmap
        self.B = batch.size
        self.pose = Tensor(batch.last_pose.reshape(self.B, OUT_DIM))
        self.feat = first_feat
        self.extras = extras
        self.outputs: list[Tensor] = []

    def advance(self, offset_flat: Tensor) -> None:
        self.outputs.append(offset_flat)
        self.pose = self.pose + offset_flat
        lin = T.matmul(self.pose, self.featmap.pose_map) + T.matmul(offset_flat, self.featmap.offset_map)
        self.feat = lin * self.mask + self.const

    def offsets(self) -> Tensor:
        return T.stack(self.outputs, axis=1).reshape(self.B, len(self.outputs), N_LANDMARKS, 2)


class OffsetHead(Module):
    """Dense stack ending in the 156-unit offset layer (``final``)."""

    def __init__(self, n_in: int, widths: Sequence[int], rng: np.random.Generator, n_out: int = OUT_DIM):
        dims = [n_in] + list(widths)
        self.layers = [Dense(a, b, rng) for a, b in zip(dims[:-1], dims[1:])]
        self.final = Dense(dims[-1], n_out, rng)

    def __call__(self, x: Tensor) -> Tensor:
        for layer in self.layers:
            x = T.leaky_relu(layer(x))
        return self.final(x)


class RecurrentDecoder(Module):
    def __init__(self, cell: str, n_in: int, hidden: int, head_widths: Sequence[int], rng: np.random.Generator):
        self.cell_type = cell
        self.cell = GRUCell(n_in, hidden, rng) if cell == "gru" else LSTMCell(n_in, hidden, rng)
        self.head = OffsetHead(hidden, head_widths, rng)

    def hidden(self, state):
        return state[0] if self.cell_type == "lstm" else state

    def step(self, x, state):
        if self.cell_type == "lstm":
            return self.cell(x, *state)
        return self.cell(x, state)

    def output(self, state) -> Tensor:
        return self.head(self.hidden(state))


class Forecaster(Module):
    """Base class: embedding layer, normalisation buffers, modality encoders, decode loop."""

    recurrent = True
    uses_embedding = True

    def __init__(self, config: ModelConfig, skel: SkeletonConfig = DEFAULT_CONFIG):
        self.config = config
        self.skel = skel
        if skel.n_gaze != config.n_gaze:
            raise ValueError("skeleton and model configs disagree on the number of gaze vectors")
        rng = np.random.default_rng(config.seed)
        self.rng = np.random.default_rng(config.seed + 1)
        F = skel.feature_size
        self.feat_scale = np.ones(F)
        self.input_mask = input_slot_mask(config.masked_parts, skel)
        self.featmap = FrameFeatureMap(skel)
        E = config.embed_dim
        self.embedding = Dense(F, E, rng) if self.uses_embedding else None
        self.meta_enc = Dense(config.metadata_dim, MODALITY_DIMS["metadata"], rng) if config.metadata_dim else None
        self.text_enc = Dense(TRANSCRIPT_DIM, MODALITY_DIMS["transcript"], rng) if config.transcript else None
        self.audio_enc = Dense(AUDIO_DIM, MODALITY_DIMS["audio"], rng) if config.audio else None
        uses_early = config.fusion == "early" or (config.fusion == "interactive" and config.family != "seq2seq")
        self.early_proj = Dense(2 * E, E, rng) if uses_early else None
        self._build(rng)

    # -- to be provided by subclasses ---------------------------------------
    def _build(self, rng: np.random.Generator) -> None:
        raise NotImplementedError

    def encode(self, seq: Tensor, batch: WindowBatch):
        """Encode an embedded (B, T, D) sequence into an initial decoder state."""
        raise NotImplementedError

    def encoding_vector(self, state) -> Tensor:
        return self.decoder.hidden(state)

    # -- widths ---------------------------------------------------------------
    @property
    def step_extra_dim(self) -> int:
        c = self.config
        return (MODALITY_DIMS["metadata"] if c.metadata_dim else 0) + (MODALITY_DIMS["transcript"] if c.transcript else 0)

    @property
    def encoder_in_dim(self) -> int:
        return self.config.embed_dim + self.step_extra_dim + (MODALITY_DIMS["audio"] if self.config.audio else 0)

    def decoder_in_dim(self, enc_dim: int, hidden: int) -> int:
        d = self.config.embed_dim + self.step_extra_dim
        if self.config.fusion == "late":
            d += enc_dim
        elif self.config.fusion == "interactive":
            d += hidden
        return d

    # -- inputs -------------------------------------------------------------
    @property
    def supports_rollout(self) -> bool:
        c = self.config
        if c.audio:
            return False
        # a part-specific target without masking of the other parts needs their future too
        if c.target_parts is not None and set(c.target_parts) != set(("face", "body", "hands")):
            others = {"face", "body", "hands"} - set(c.target_parts)
            return others <= set(c.masked_parts)
        return True

    def normalized(self, feats: np.ndarray) -> Tensor:
        return Tensor(feats * (self.feat_scale * self.input_mask))

    def embed(self, x) -> Tensor:
        e = T.leaky_relu(self.embedding(x))
        return dropout(e, self.config.dropout, self.rng, self.training)

    def frame_embeddings(self, x: Tensor) -> Tensor:
        """Per-frame tokens fed to the encoder; the decoder always uses ``embed``."""
        return self.embed(x)

    def step_extras(self, batch: WindowBatch) -> list[Tensor]:
        extras = []
        if self.meta_enc is not None:
            if batch.metadata is None:
                raise ValueError("model expects metadata")
            extras.append(("metadata", T.leaky_relu(self.meta_enc(Tensor(batch.metadata)))))
        if self.text_enc is not None:
            if batch.transcript is None:
                raise ValueError("model expects transcript embeddings")
            extras.append(("transcript", T.leaky_relu(self.text_enc(Tensor(batch.transcript)))))
        return extras

    def with_extras(self, emb: Tensor, extras) -> Tensor:
        for name, vec in extras:
            emb = concat_modality(emb, vec, name)
        return emb

    def encoder_sequence(self, batch: WindowBatch, extras, partner: Optional[WindowBatch] = None) -> Tensor:
        emb = self.frame_embeddings(self.normalized(batch.feats))
        if partner is not None:
            emb = early_fuse(emb, self.frame_embeddings(self.normalized(partner.feats)), self.early_proj)
        emb = self.with_extras(emb, extras)
        if self.audio_enc is not None:
            if batch.audio is None:
                raise ValueError("model expects audio features")
            emb = concat_modality(emb, T.leaky_relu(self.audio_enc(Tensor(batch.audio))), "audio")
        return emb

    # -- forward ------------------------------------------------------------
    def forward(self, batch: WindowBatch, horizon: int):
        """Offsets (B, H, 78, 2); dyadic models return a pair (own, partner)."""
        if horizon < 1:
            raise ValueError("horizon must be >= 1")
        if batch.feats.shape[1] < 1:
            raise ValueError("empty observation")
        fusion = self.config.fusion
        if fusion == "none":
            extras = self.step_extras(batch)
            state = self.encode(self.encoder_sequence(batch, extras), batch)
            ctx = self._context(batch, extras)
            return self._decode([ctx], [state], horizon)[0]
        if batch.partner is None:
            raise ValueError("dyadic model needs the partner's observation")
        pb = batch.partner
        extras = self.step_extras(batch)
        early = fusion in ("early", "interactive")
        if fusion == "interactive" and hasattr(self, "encode_interactive"):
            sa, sb = self.encode_interactive(self.encoder_sequence(batch, extras),
                                             self.encoder_sequence(pb, extras), batch)
        else:
            sa = self.encode(self.encoder_sequence(batch, extras, pb if early else None), batch)
            sb = self.encode(self.encoder_sequence(pb, extras, batch if early else None), pb)
        ctxs = [self._context(batch, extras), self._context(pb, extras)]
        partner_vecs = None
        if fusion == "late":
            enc_a, enc_b = self.encoding_vector(sa), self.encoding_vector(sb)
            partner_vecs = [enc_b, enc_a]  # the same encodings drive both decoders
        out = self._decode(ctxs, [sa, sb], horizon, partner_vecs, interactive=fusion == "interactive")
        return out[0], out[1]

    def _context(self, batch: WindowBatch, extras) -> DecodeContext:
        first = self.normalized(batch.feats[:, -1])
        return DecodeContext(self, batch, first, extras)

    def _decode(self, ctxs: list[DecodeContext], states: list, horizon: int,
                partner_vecs: Optional[list[Tensor]] = None, interactive: bool = False) -> list[Tensor]:
        dec = self.decoder
        for _ in range(horizon):
            inputs = [self.with_extras(self.embed(c.feat), c.extras) for c in ctxs]
            if partner_vecs is not None:
                inputs = [late_fuse(x, v) for x, v in zip(inputs, partner_vecs)]
            if interactive:
                sa, sb, outs = interactive_decode(dec, states[0], states[1], inputs[0], inputs[1])
                states = [sa, sb]
            else:
                states = [dec.step(x, s) for x, s in zip(inputs, states)]
                outs = [dec.output(s) for s in states]
            for c, o in zip(ctxs, outs):
                c.advance(o)
        return [c.offsets() for c in ctxs]

    # -- inference ----------------------------------------------------------
    def predict(self, batch: WindowBatch, horizon: int):
        was = self.training
        self.eval()
        try:
            with no_grad():
                out = self.forward(batch, horizon)
        finally:
            self.train(was)
        if isinstance(out, tuple):
            return tuple(o.data for o in out)
        return out.data

    def output_layer(self) -> Dense:
        return self.decoder.head.final

    def zero_head(self) -> None:
        self.output_layer().zero_()

    # -- persistence ---------------------------------------------------------
    def state_dict(self) -> dict[str, np.ndarray]:
        sd = {k: p.data.copy() for k, p in self.parameters().items()}
        sd["buffer.feat_scale"] = self.feat_scale.copy()
        return sd

    def load_state_dict(self, sd: dict[str, np.ndarray]) -> None:
        params = self.parameters()
        missing = set(params) - set(sd)
        if missing:
            raise KeyError(f"checkpoint lacks parameters: {sorted(missing)[:5]}")
        for k, p in params.items():
            if sd[k].shape != p.data.shape:
                raise ValueError(f"{k}: checkpoint shape {sd[k].shape} != model shape {p.data.shape}")
            p.data[...] = sd[k]
        self.feat_scale = np.asarray(sd["buffer.feat_scale"], dtype=np.float64).copy()

    def fit_normalizer(self, feats: np.ndarray) -> None:
        """Per-slot RMS scaling (no centring, so absent parts stay exactly zero)."""
        flat = feats.reshape(-1, feats.shape[-1])
        rms = np.sqrt((flat ** 2).mean(axis=0))
        self.feat_scale = np.where(rms > 1e-8, 1.0 / np.maximum(rms, 1e-8), 1.0)


def target_landmarks(config: ModelConfig) -> np.ndarray:
    """(78,) 0/1 weights of the landmarks a model is trained to predict."""
    if config.target_parts is None:
        return np.ones(N_LANDMARKS)
    w = np.zeros(N_LANDMARKS)
    for g in config.target_parts:
        w[group_landmarks(g)] = 1.0
    return w
