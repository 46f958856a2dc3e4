"""Forecasting architectures sharing one embedding and offset-decoding scheme."""
from .base import (OUT_DIM, DecodeContext, Forecaster, FrameFeatureMap, UnsupportedRollout, Window, WindowBatch,
                   make_batch, target_landmarks)
from .config import ARCHS, FAMILY_DEFAULTS, FUSIONS, ModelConfig
from .seq2seq import Seq2Seq
from .stgnn import STGNN, learned_adjacency, mixprop
from .tcn import TCN
from .transformer import TransformerST, TransformerT, attention_profile

REGISTRY = {
    "seq2seq-gru": Seq2Seq,
    "seq2seq-lstm": Seq2Seq,
    "tcn-gru": TCN,
    "tcn-lstm": TCN,
    "transformer-t": TransformerT,
    "transformer-st": TransformerST,
    "stgnn": STGNN,
}


def build_model(config: ModelConfig, skel=None) -> Forecaster:
    cls = REGISTRY[config.arch]
    return cls(config) if skel is None else cls(config, skel)


__all__ = [
    "ARCHS", "DecodeContext", "FAMILY_DEFAULTS", "FUSIONS", "Forecaster", "FrameFeatureMap", "ModelConfig",
    "OUT_DIM", "REGISTRY", "STGNN", "Seq2Seq", "TCN", "TransformerST", "TransformerT", "UnsupportedRollout",
    "Window", "WindowBatch", "attention_profile", "build_model", "learned_adjacency", "make_batch", "mixprop",
    "target_landmarks",
]
