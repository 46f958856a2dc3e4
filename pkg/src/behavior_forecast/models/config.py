from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Optional

ARCHS = ("seq2seq-gru", "seq2seq-lstm", "tcn-gru", "tcn-lstm", "transformer-t", "transformer-st", "stgnn")
FUSIONS = ("none", "early", "late", "interactive")

# batch size and dropout tuned per model family in the original experiments
FAMILY_DEFAULTS = {
    "seq2seq": {"batch_size": 512, "dropout": 0.5},
    "tcn": {"batch_size": 512, "dropout": 0.25},
    "transformer": {"batch_size": 32, "dropout": 0.25},
    "stgnn": {"batch_size": 32, "dropout": 0.3},
}


def family(arch: str) -> str:
    if arch not in ARCHS:
        raise ValueError(f"unknown architecture {arch!r}; choose from {', '.join(ARCHS)}")
    return arch.split("-")[0]


@dataclass
class ModelConfig:
    arch: str = "seq2seq-gru"
    embed_dim: int = 512
    hidden: int = 1024
    head_widths: Optional[tuple[int, ...]] = None  # None -> per-family default
    # TCN encoder
    tcn_dilations: tuple[int, ...] = (1, 3, 9, 27, 59)
    tcn_kernel: int = 2
    tcn_channels: int = 512
    # transformers
    depth: int = 4
    heads: int = 8
    drop_path: float = 0.2
    mlp_ratio: int = 2
    joint_dim: int = 32
    # STGNN
    stgnn_blocks: int = 3
    stgnn_kernels: tuple[int, ...] = (2, 3, 9, 11)
    stgnn_mixhop: int = 2
    stgnn_node_dim: int = 40
    stgnn_channels: tuple[int, int, int, int] = (32, 32, 32, 64)  # conv, residual, graph, skip
    stgnn_end: int = 128
    stgnn_alpha: float = 0.05
    # windows
    obs_len: int = 100
    train_horizon: int = 10
    dropout: Optional[float] = None
    batch_size: Optional[int] = None
    # holistic part masking and targets
    masked_parts: tuple[str, ...] = ()
    target_parts: Optional[tuple[str, ...]] = None
    # fusion / modalities
    fusion: str = "none"
    metadata_dim: int = 0  # 0 disables; 34 with personality, 29 without
    transcript: bool = False
    audio: bool = False
    n_gaze: int = 2
    seed: int = 0

    def __post_init__(self):
        fam = family(self.arch)
        d = FAMILY_DEFAULTS[fam]
        if self.dropout is None:
            self.dropout = d["dropout"]
        if self.batch_size is None:
            self.batch_size = d["batch_size"]
        if self.head_widths is None:
            self.head_widths = (1024,) if fam == "seq2seq" else (1024, 512)
        self.head_widths = tuple(self.head_widths)
        self.tcn_dilations = tuple(self.tcn_dilations)
        self.stgnn_kernels = tuple(self.stgnn_kernels)
        self.stgnn_channels = tuple(self.stgnn_channels)
        self.masked_parts = tuple(self.masked_parts)
        if self.target_parts is not None:
            self.target_parts = tuple(self.target_parts)
        if self.fusion not in FUSIONS:
            raise ValueError(f"unknown fusion {self.fusion!r}; choose from {', '.join(FUSIONS)}")
        if self.fusion != "none" and fam == "stgnn":
            raise ValueError("dyadic fusion is not defined for the STGNN")
        if self.train_horizon < 1:
            raise ValueError("train_horizon must be >= 1")

    @property
    def family(self) -> str:
        return family(self.arch)

    @property
    def cell(self) -> str:
        return "lstm" if self.arch.endswith("lstm") else "gru"

    @property
    def receptive_field(self) -> int:
        return 1 + sum(self.tcn_dilations) * (self.tcn_kernel - 1)

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        for k, v in out.items():
            if isinstance(v, tuple):
                out[k] = list(v)
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown model config keys: {sorted(unknown)}")
        kw = {k: (tuple(v) if isinstance(v, list) else v) for k, v in d.items()}
        return cls(**kw)
