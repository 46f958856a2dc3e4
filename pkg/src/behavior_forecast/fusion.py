"""Dyadic fusion (early, late, interactive) and multimodal concatenation.

Metadata vector layout (34 slots with personality, 29 without)::

    age (1) | gender (1) | country one-hot (6) | education one-hot (7) |
    [big-five z-scores (5)] | language one-hot (3) | relationship (1) |
    mood (8) | fatigue (1) | padding (1)

The listed fields add up to 33 (28 without personality); the trailing
padding slot is always zero and keeps the vector at the documented length.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .diffcore import tensor as T
from .diffcore.layers import Dense
from .diffcore.tensor import Tensor

AGE_RANGE = (17.0, 75.0)
MODALITY_DIMS = {"metadata": 16, "audio": 64, "transcript": 64}
AUDIO_DIM = 128
TRANSCRIPT_DIM = 768
AUDIO_ZEROED_FRAMES = 12


@dataclass
class MetadataRecord:
    age: float
    gender: int  # male 0, female 1
    country: Sequence[float]  # one-hot, 6
    education: Sequence[float]  # one-hot, 7
    language: Sequence[float]  # one-hot, 3 (English, Spanish, Catalan)
    relationship: int  # unknown 0, known 1
    mood: Sequence[float]  # 8 values in [1, 5]
    fatigue: float  # [0, 10]
    personality: Optional[Sequence[float]] = None  # big-five z-scores

    def to_dict(self) -> dict:
        d = {k: (list(map(float, v)) if isinstance(v, (list, tuple, np.ndarray)) else v)
             for k, v in self.__dict__.items()}
        return d


def _one_hot(v, n: int, name: str) -> np.ndarray:
    a = np.asarray(v, dtype=np.float64)
    if a.shape != (n,) or not np.isin(a, (0.0, 1.0)).all() or a.sum() != 1:
        raise ValueError(f"{name} must be a {n}-dimensional one-hot vector")
    return a


def encode_metadata(rec: MetadataRecord, with_personality: bool = True) -> np.ndarray:
    lo, hi = AGE_RANGE
    if not lo <= rec.age <= hi:
        raise ValueError(f"age {rec.age} outside [{lo}, {hi}]")
    if rec.gender not in (0, 1) or rec.relationship not in (0, 1):
        raise ValueError("gender and relationship must be 0 or 1")
    mood = np.asarray(rec.mood, dtype=np.float64)
    if mood.shape != (8,) or mood.min() < 1 or mood.max() > 5:
        raise ValueError("mood must hold 8 values in [1, 5]")
    if not 0 <= rec.fatigue <= 10:
        raise ValueError(f"fatigue {rec.fatigue} outside [0, 10]")
    parts = [
        [(rec.age - lo) / (hi - lo)],
        [float(rec.gender)],
        _one_hot(rec.country, 6, "country"),
        _one_hot(rec.education, 7, "education"),
    ]
    if with_personality:
        if rec.personality is None or len(rec.personality) != 5:
            raise ValueError("personality needs 5 big-five z-scores")
        parts.append(np.asarray(rec.personality, dtype=np.float64))
    parts += [
        _one_hot(rec.language, 3, "language"),
        [float(rec.relationship)],
        (mood - 1.0) / 4.0,
        [rec.fatigue / 10.0],
        [0.0],
    ]
    return np.concatenate([np.asarray(p, dtype=np.float64) for p in parts])


def decode_age(scaled: float) -> float:
    lo, hi = AGE_RANGE
    return lo + scaled * (hi - lo)


def metadata_dim(with_personality: bool) -> int:
    return 34 if with_personality else 29


def load_metadata(path: str | Path) -> dict[str, MetadataRecord]:
    """Session metadata JSON: {"session_id", "participants": {pid: {raw fields}}, "session": {...}}.

    Session-level fields (language, relationship) are merged into each participant.
    """
    doc = json.loads(Path(path).read_text())
    shared = doc.get("session", {})
    return {pid: MetadataRecord(**{**shared, **fields}) for pid, fields in doc["participants"].items()}


@dataclass
class ModalityFeatures:
    audio: Optional[np.ndarray] = None  # (obs_len, 128)
    transcript: Optional[np.ndarray] = None  # (768,)

    def __post_init__(self):
        if self.audio is not None:
            self.audio = zero_audio_tail(self.audio)
        if self.transcript is not None:
            self.transcript = np.asarray(self.transcript, dtype=np.float64)
            if self.transcript.shape != (TRANSCRIPT_DIM,):
                raise ValueError(f"transcript embedding must have {TRANSCRIPT_DIM} values")


def zero_audio_tail(audio: np.ndarray, n: int = AUDIO_ZEROED_FRAMES) -> np.ndarray:
    """Zero the last ``n`` observation frames (their audio chunk overlaps the future)."""
    a = np.array(audio, dtype=np.float64, copy=True)
    if a.ndim != 2 or a.shape[1] != AUDIO_DIM:
        raise ValueError(f"audio features must be (T, {AUDIO_DIM}), got {a.shape}")
    a[-n:] = 0.0
    return a


def load_audio(path: str | Path) -> np.ndarray:
    """Audio features stored as a JSON array (T x 128) or raw little-endian float64."""
    p = Path(path)
    if p.suffix == ".json":
        a = np.asarray(json.loads(p.read_text()), dtype=np.float64)
    else:
        a = np.frombuffer(p.read_bytes(), dtype="<f8").reshape(-1, AUDIO_DIM).astype(np.float64)
    return zero_audio_tail(a)


def load_transcript(path: str | Path) -> np.ndarray:
    return ModalityFeatures(transcript=json.loads(Path(path).read_text())).transcript


# -- differentiable fusion operations -----------------------------------------

def concat_modality(skel_embed: Tensor, modality_embed: Tensor, modality: str) -> Tensor:
    """Join a modality embedding to skeleton embeddings along the feature axis.

    Metadata and transcripts are per-window vectors broadcast to every step;
    audio is per observation frame and must match the sequence length.
    """
    if modality not in MODALITY_DIMS:
        raise ValueError(f"unknown modality {modality!r}; expected one of {sorted(MODALITY_DIMS)}")
    if modality == "audio":
        if modality_embed.shape[:-1] != skel_embed.shape[:-1]:
            raise ValueError("audio embeddings must align frame by frame with the observation")
        return T.concat([skel_embed, modality_embed], axis=-1)
    if skel_embed.ndim == 3:
        B, L, _ = skel_embed.shape
        modality_embed = T.mul(T.reshape(modality_embed, (B, 1, -1)), np.ones((1, L, 1)))
    return T.concat([skel_embed, modality_embed], axis=-1)


def early_fuse(emb_a: Tensor, emb_b: Tensor, proj: Dense) -> Tensor:
    """Concatenate both participants' frame embeddings and project back to the embedding width."""
    if emb_a.shape != emb_b.shape:
        raise ValueError(f"early fusion needs equal shapes, got {emb_a.shape} and {emb_b.shape}")
    return T.leaky_relu(proj(T.concat([emb_a, emb_b], axis=-1)))


def late_fuse(decoder_input: Tensor, other_encoding: Tensor) -> Tensor:
    """Append the partner's (fixed) encoding to one decoder step input."""
    return T.concat([decoder_input, other_encoding], axis=-1)


def interactive_decode(decoder, state_a, state_b, input_a: Tensor, input_b: Tensor):
    """One lock-step decoding step where each decoder sees the partner's current hidden state.

    ``decoder`` provides ``hidden(state)``, ``step(x, state)`` and ``output(state)``.
    Returns (state_a', state_b', (out_a, out_b)).
    """
    ha, hb = decoder.hidden(state_a), decoder.hidden(state_b)
    if ha.shape != hb.shape:
        raise ValueError("interactive decoding needs equal hidden widths")
    new_a = decoder.step(T.concat([input_a, hb], axis=-1), state_a)
    new_b = decoder.step(T.concat([input_b, ha], axis=-1), state_b)
    return new_a, new_b, (decoder.output(new_a), decoder.output(new_b))
