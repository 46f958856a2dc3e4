"""Segmentation, filtering, training, autoregressive rollout and evaluation."""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .baselines import BASELINES, Prediction2D
from .diffcore import checkpoint
from .diffcore import tensor as T
from .diffcore.layers import masked_mse
from .diffcore.optim import AMSGrad
from .diffcore.tensor import no_grad
from .fusion import encode_metadata, load_metadata
from .metrics import MetricsReport, NoDataError, aggregate, report
from .models.base import Forecaster, UnsupportedRollout, Window, WindowBatch, make_batch, target_landmarks
from .skeleton import PARTS, SequenceArrays, apply_offsets, read_jsonl

log = logging.getLogger(__name__)

OBS_LEN = 100
PRED_LEN = 50
STRIDE = 50
HAND_PARTS = (PARTS.index("left_hand"), PARTS.index("right_hand"))


class NumericalError(RuntimeError):
    """Training produced a non-finite loss."""


# -- data ---------------------------------------------------------------------

@dataclass
class Session:
    session_id: str
    participants: tuple[str, str]
    clean: dict[str, SequenceArrays]
    raw: Optional[dict[str, SequenceArrays]] = None
    metadata: Optional[dict[str, np.ndarray]] = None


@dataclass
class Segment:
    obs: SequenceArrays
    future: SequenceArrays
    session_id: str = ""
    participant_id: str = ""
    start: int = 0
    partner_obs: Optional[SequenceArrays] = None
    partner_future: Optional[SequenceArrays] = None
    raw_obs: Optional[SequenceArrays] = None
    metadata: Optional[np.ndarray] = None
    tag: str = "clean"

    def __post_init__(self):
        if len(self.future) < 1 or len(self.obs) < 1:
            raise ValueError("segments need observed and future frames")

    def window(self, noisy: bool = False) -> Window:
        obs = self.obs
        if noisy and self.raw_obs is not None:
            # the last observed frame is always the cleaned one
            obs = SequenceArrays.concat([self.raw_obs[:-1], self.obs[-1:]])
        return Window(obs=obs, partner=self.partner_obs, metadata=self.metadata)


def segment(seq: SequenceArrays, obs_len: int = OBS_LEN, pred_len: int = PRED_LEN,
            stride: int = STRIDE) -> list[Segment]:
    """Windows starting at 0, stride, 2*stride, ... that fit entirely in the sequence."""
    if min(obs_len, pred_len, stride) < 1:
        raise ValueError("obs_len, pred_len and stride must be positive")
    out = []
    for s in range(0, len(seq) - obs_len - pred_len + 1, stride):
        out.append(Segment(seq[s:s + obs_len], seq[s + obs_len:s + obs_len + pred_len], start=s))
    return out


def session_segments(sess: Session, obs_len: int = OBS_LEN, pred_len: int = PRED_LEN,
                     stride: int = STRIDE) -> list[Segment]:
    """Segments for both participants, each carrying the other as partner."""
    out = []
    a, b = sess.participants
    for pid, other in ((a, b), (b, a)):
        own, oth = sess.clean[pid], sess.clean[other]
        raw = sess.raw[pid] if sess.raw else None
        meta = sess.metadata.get(pid) if sess.metadata else None
        for seg in segment(own, obs_len, pred_len, stride):
            s, e = seg.start, seg.start + obs_len
            seg.session_id, seg.participant_id = sess.session_id, pid
            seg.partner_obs = oth[s:e]
            seg.partner_future = oth[e:e + pred_len]
            if raw is not None:
                seg.raw_obs = raw[s:e]
            seg.metadata = meta
            out.append(seg)
    return out


@dataclass
class DropReport:
    total: int
    dropped: int

    @property
    def fraction(self) -> float:
        return self.dropped / self.total if self.total else 0.0


def filter_segments(segments: Sequence[Segment]) -> tuple[list[Segment], DropReport]:
    """Drop segments where a hand is missing at the last observed frame but shows up in the future."""
    kept = []
    for seg in segments:
        bad = any(not seg.obs.present[-1, i] and seg.future.present[:, i].any() for i in HAND_PARTS)
        if not bad:
            kept.append(seg)
    rep = DropReport(len(segments), len(segments) - len(kept))
    log.info("filtered %d of %d segments (%.1f%%)", rep.dropped, rep.total, 100 * rep.fraction)
    return kept, rep


def load_split(directory: str | Path, with_personality: bool = True) -> list[Session]:
    """Read one split directory written by the synthetic generator (or in the same layout)."""
    d = Path(directory)
    clean = read_jsonl(d / "sessions.jsonl")
    raw = read_jsonl(d / "raw.jsonl") if (d / "raw.jsonl").exists() else None
    by_session: dict[str, list[str]] = {}
    for pid, seq in clean.items():
        by_session.setdefault(seq.session_id, []).append(pid)
    sessions = []
    for sid, pids in by_session.items():
        if len(pids) != 2:
            raise ValueError(f"session {sid} has {len(pids)} participants, expected 2")
        meta = None
        mpath = d / "metadata" / f"{sid}.json"
        if mpath.exists():
            meta = {pid: encode_metadata(rec, with_personality) for pid, rec in load_metadata(mpath).items()}
        sessions.append(Session(
            sid, (pids[0], pids[1]),
            {p: clean[p].to_arrays() for p in pids},
            {p: raw[p].to_arrays() for p in pids} if raw else None,
            meta,
        ))
    return sessions


def load_segments(directory: str | Path, obs_len: int = OBS_LEN, pred_len: int = PRED_LEN,
                  stride: int = STRIDE, filter_hands: bool = True) -> list[Segment]:
    segs = [s for sess in load_split(directory) for s in session_segments(sess, obs_len, pred_len, stride)]
    if filter_hands:
        segs, _ = filter_segments(segs)
    return segs


# -- training -----------------------------------------------------------------

def offset_targets(obs: SequenceArrays, future: SequenceArrays, horizon: int) -> tuple[np.ndarray, np.ndarray]:
    """Ground-truth 2D offsets (H, 78, 2) and the (H, 78) mask of landmarks usable in the loss.

    An offset counts only if the landmark is valid in both frames it spans and
    its part is present in the last observed frame.
    """
    if len(future) < horizon:
        raise ValueError(f"future has {len(future)} frames, need {horizon}")
    pose = np.concatenate([obs.pose_2d[-1:], future.pose_2d[:horizon]])
    valid = np.concatenate([obs.landmark_valid()[-1:], future.landmark_valid()[:horizon]])
    offsets = np.diff(pose, axis=0)
    mask = valid[1:] & valid[:-1] & obs.landmark_present()[-1][None]
    return offsets * mask[..., None], mask


@dataclass
class TrainConfig:
    max_epochs: int = 1000
    patience: int = 20
    lr: float = 1e-4
    weight_decay: float = 1e-3
    batch_size: Optional[int] = None  # None -> model config
    max_batches_per_epoch: Optional[int] = None
    time_budget: Optional[float] = None  # seconds; checked between epochs
    fit_normalizer: bool = True
    seed: int = 0


@dataclass
class TrainResult:
    state_dict: dict
    history: list[tuple[int, float, float]] = field(default_factory=list)
    best_epoch: int = -1
    best_val: float = math.inf
    stopped_early: bool = False

    def write_history(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "train_loss", "val_loss"])
            for e, tr, va in self.history:
                w.writerow([e, repr(tr), repr(va)])


def _batch_targets(model: Forecaster, segs: Sequence[Segment], horizon: int, dyadic: bool):
    weights = target_landmarks(model.config)
    offs, masks = [], []
    for seg in segs:
        o, m = offset_targets(seg.obs, seg.future, horizon)
        offs.append(o)
        masks.append(m * weights)
    if dyadic:
        for seg in segs:
            o, m = offset_targets(seg.partner_obs, seg.partner_future, horizon)
            offs.append(o)
            masks.append(m * weights)
    return np.stack(offs), np.stack(masks)[..., None]


def batch_loss(model: Forecaster, segs: Sequence[Segment], horizon: int):
    """Masked MSE of predicted offsets and the number of masked-in entries."""
    batch = make_batch([s.window() for s in segs], model.config.obs_len, model.skel)
    dyadic = model.config.fusion != "none"
    target, mask = _batch_targets(model, segs, horizon, dyadic)
    out = model.forward(batch, horizon)
    pred = T.concat(list(out), axis=0) if dyadic else out
    n = float(np.broadcast_to(mask, target.shape).sum())
    if n == 0:
        return None, 0.0
    return masked_mse(pred, target, mask), n


def validation_loss(model: Forecaster, segs: Sequence[Segment], horizon: int, batch_size: int) -> float:
    was = model.training
    model.eval()
    total, count = 0.0, 0.0
    try:
        with no_grad():
            for i in range(0, len(segs), batch_size):
                loss, n = batch_loss(model, segs[i:i + batch_size], horizon)
                if loss is not None:
                    total += float(loss.data) * n
                    count += n
    finally:
        model.train(was)
    if count == 0:
        raise NoDataError("validation split has no valid targets")
    return total / count


def train(model: Forecaster, train_segs: Sequence[Segment], val_segs: Sequence[Segment],
          config: Optional[TrainConfig] = None, on_epoch: Optional[Callable] = None) -> TrainResult:
    """AMSGrad on masked offset MSE with per-epoch validation and early stopping.

    The model is left holding the best-validation weights.
    """
    cfg = config or TrainConfig()
    if not train_segs or not val_segs:
        raise ValueError("train and validation splits must be non-empty")
    horizon = model.config.train_horizon
    if cfg.fit_normalizer:
        model.fit_normalizer(np.concatenate([make_batch([s.window() for s in train_segs[i:i + 256]],
                                                        model.config.obs_len, model.skel).feats
                                             for i in range(0, len(train_segs), 256)]))
    bs = cfg.batch_size or model.config.batch_size
    bs = min(bs, len(train_segs))
    n_batches = len(train_segs) // bs  # ragged tail dropped
    if cfg.max_batches_per_epoch:
        n_batches = min(n_batches, cfg.max_batches_per_epoch)
    opt = AMSGrad(model.parameters(), lr=cfg.lr, weight_decay=cfg.weight_decay)
    rng = np.random.default_rng(cfg.seed)
    result = TrainResult(state_dict=model.state_dict())
    since = 0
    t0 = time.monotonic()
    model.train()
    for epoch in range(cfg.max_epochs):
        order = rng.permutation(len(train_segs))
        losses, counts = [], []
        for b in range(n_batches):
            segs = [train_segs[i] for i in order[b * bs:(b + 1) * bs]]
            loss, n = batch_loss(model, segs, horizon)
            if loss is None:
                continue
            if not np.isfinite(loss.data):
                raise NumericalError(f"non-finite training loss at epoch {epoch}, batch {b}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            losses.append(float(loss.data))
            counts.append(n)
        if not losses:
            raise NoDataError("no training batch had valid targets")
        tr = float(np.average(losses, weights=counts))
        va = validation_loss(model, val_segs, horizon, bs)
        if not math.isfinite(va):
            raise NumericalError(f"non-finite validation loss at epoch {epoch}")
        result.history.append((epoch, tr, va))
        if va < result.best_val:
            result.best_val, result.best_epoch = va, epoch
            result.state_dict = model.state_dict()
            since = 0
        else:
            since += 1
        log.info("epoch %d train %.6g val %.6g", epoch, tr, va)
        if on_epoch is not None:
            on_epoch(epoch, tr, va)
        if since >= cfg.patience:
            result.stopped_early = True
            break
        if cfg.time_budget is not None and time.monotonic() - t0 > cfg.time_budget:
            break
    model.load_state_dict(result.state_dict)
    model.eval()
    return result


def save_model(path: str | Path, model: Forecaster, extra: Optional[dict] = None) -> None:
    meta = {"model_config": model.config.to_dict(), **(extra or {})}
    checkpoint.save(path, model.state_dict(), meta)


def load_model(path: str | Path) -> Forecaster:
    from .models import ModelConfig, build_model
    tensors, meta = checkpoint.load(path)
    model = build_model(ModelConfig.from_dict(meta["model_config"]))
    model.load_state_dict(tensors)
    model.eval()
    return model


def file_sha256(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_manifest(path: str | Path, **fields) -> None:
    Path(path).write_text(json.dumps(fields, indent=2, sort_keys=True, default=str) + "\n")


# -- inference ----------------------------------------------------------------

def _extend(seq: SequenceArrays, poses: np.ndarray) -> SequenceArrays:
    """Append predicted 2D poses, carrying depth, presence, quality and gaze from the last frame."""
    n = poses.shape[0]
    last = seq[-1]
    coords = np.repeat(last.coords, n, axis=0)
    lp = last.landmark_present()[0]
    coords[..., :2] = np.where(lp[None, :, None], poses, 0.0)
    new = SequenceArrays(coords, np.repeat(last.present, n, axis=0), np.repeat(last.quality, n, axis=0),
                         np.repeat(last.gaze, n, axis=0), np.repeat(last.gaze_present, n, axis=0))
    return SequenceArrays.concat([seq, new])


def rollout_batch(model: Forecaster, windows: Sequence[Window], total: int = PRED_LEN,
                  step: Optional[int] = None) -> list[Prediction2D]:
    """Predict ``step`` frames, append them to the observation, slide, repeat until ``total``."""
    step = step or model.config.train_horizon
    if total < 1 or step < 1 or total % step:
        raise ValueError(f"total ({total}) must be a positive multiple of step ({step})")
    if total > step and not model.supports_rollout:
        raise UnsupportedRollout(f"{model.config.arch} with this configuration cannot be fed its own predictions")
    obs_len = model.config.obs_len
    cur = [Window(w.obs, w.partner, w.metadata, w.transcript, w.audio) for w in windows]
    valid = [w.obs.landmark_present()[-1] for w in windows]
    chunks: list[list[np.ndarray]] = [[] for _ in windows]
    for _ in range(total // step):
        batch = make_batch(cur, obs_len, model.skel)
        out = model.predict(batch, step)
        own, partner = out if isinstance(out, tuple) else (out, None)
        for i, w in enumerate(cur):
            lp = w.obs.landmark_present()[-1]
            poses = apply_offsets(w.obs.pose_2d[-1], own[i] * lp[None, :, None])
            chunks[i].append(poses)
            obs = _extend(w.obs, poses)
            part = w.partner
            if partner is not None:
                plp = part.landmark_present()[-1]
                part = _extend(part, apply_offsets(part.pose_2d[-1], partner[i] * plp[None, :, None]))
                part = part[len(part) - obs_len:]
            cur[i] = Window(obs[len(obs) - obs_len:], part, w.metadata, w.transcript, w.audio)
    return [Prediction2D(np.concatenate(c), v) for c, v in zip(chunks, valid)]


def rollout(model: Forecaster, window: Window, total: int = PRED_LEN, step: Optional[int] = None) -> Prediction2D:
    return rollout_batch(model, [window], total, step)[0]


def freeze_after_n(pred: Prediction2D, n: int, last_obs: np.ndarray) -> Prediction2D:
    """Keep the first ``n`` predicted frames and hold frame ``n`` (or the last observation) afterwards."""
    H = pred.horizon
    if not 0 <= n <= H:
        raise ValueError(f"N must lie in [0, {H}], got {n}")
    poses = pred.poses.copy()
    hold = np.asarray(last_obs, dtype=np.float64) if n == 0 else poses[n - 1]
    poses[n:] = hold
    return Prediction2D(poses, pred.valid.copy())


class ModelPredictor:
    """Adapter giving a trained model the baseline call signature."""

    def __init__(self, model: Forecaster, step: Optional[int] = None, batch_size: int = 64):
        self.model = model
        self.step = step
        self.batch_size = batch_size

    def __call__(self, windows: Sequence[Window], H: int) -> list[Prediction2D]:
        out = []
        for i in range(0, len(windows), self.batch_size):
            out += rollout_batch(self.model, windows[i:i + self.batch_size], H, self.step)
        return out


class BaselinePredictor:
    def __init__(self, name: str):
        if name not in BASELINES:
            raise ValueError(f"unknown baseline {name!r}; choose from {', '.join(BASELINES)}")
        self.fn = BASELINES[name]

    def __call__(self, windows: Sequence[Window], H: int) -> list[Prediction2D]:
        return [self.fn(w.obs, H) for w in windows]


@dataclass
class Evaluation:
    report: MetricsReport
    per_segment: list[MetricsReport]
    segments: list[Segment]


def evaluate(predictor, segments: Sequence[Segment], noisy_mode: bool = False, horizon: int = PRED_LEN,
             freeze_after: Optional[int] = None) -> Evaluation:
    """Run a predictor over segments and aggregate the metrics (count-weighted)."""
    if not segments:
        raise NoDataError("no segments to evaluate")
    preds = predictor([s.window(noisy=noisy_mode) for s in segments], horizon)
    reps, used = [], []
    for seg, pred in zip(segments, preds):
        last = seg.obs.pose_2d[-1]
        if freeze_after is not None:
            pred = freeze_after_n(pred, freeze_after, last)
        fut = seg.future[:horizon]
        rep = report(pred.poses, fut.pose_2d, last, fut.landmark_valid(), pred.valid)
        reps.append(rep)
        used.append(seg)
    total = aggregate(reps)
    if total.counts.get("mpjpe", 0) == 0:
        raise NoDataError("no valid ground-truth landmarks in the evaluated segments")
    return Evaluation(total, reps, used)

