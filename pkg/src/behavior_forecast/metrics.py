"""Masked forecasting metrics: MPJPE, its short/mid/long-term windows, FDE and divergence.

Frame ranges are 1-based and inclusive, so ``(1, 10)`` is the first ten
predicted frames.  Every metric keeps a (sum, count) pair internally, which is
what makes aggregation across segments a count-weighted mean.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from .skeleton import GROUPS, N_LANDMARKS, group_landmarks

WINDOWS = {"st": (1, 10), "mt": (11, 25), "lt": (26, 50)}
FIELDS = ("mpjpe", "st", "mt", "lt", "fde", "div", "div_st", "div_mt", "div_lt")
PART_NAMES = tuple(GROUPS)


class NoDataError(ValueError):
    """Raised when a metric has no valid (frame, landmark) pair to average over."""


def _frame_slice(horizon: int, frames: Optional[tuple[int, int]]) -> slice:
    if frames is None:
        return slice(0, horizon)
    a, b = frames
    if a < 1 or b < a or b > horizon:
        raise ValueError(f"frame range {frames} outside 1..{horizon}")
    return slice(a - 1, b)


def _as_valid(valid, shape) -> np.ndarray:
    if valid is None:
        return np.ones(shape, dtype=bool)
    v = np.asarray(valid, dtype=bool)
    return np.broadcast_to(v, shape)


def error_sums(pred, gt, gt_valid=None, frames=None, pred_valid=None, landmarks=None) -> tuple[float, int]:
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError(f"prediction shape {pred.shape} != ground truth shape {gt.shape}")
    H, L = gt.shape[:2]
    mask = _as_valid(gt_valid, (H, L)) & _as_valid(pred_valid, (H, L))
    if landmarks is not None:
        sel = np.zeros(L, dtype=bool)
        sel[landmarks] = True
        mask = mask & sel
    sl = _frame_slice(H, frames)
    d = np.linalg.norm(pred[sl] - gt[sl], axis=-1)
    m = mask[sl]
    return float(d[m].sum()), int(m.sum())


def divergence_sums(seq, last_obs, valid=None, frames=None, landmarks=None) -> tuple[float, int]:
    seq = np.asarray(seq, dtype=np.float64)
    H, L = seq.shape[:2]
    prev = np.concatenate([np.asarray(last_obs, dtype=np.float64)[None], seq[:-1]])
    mask = _as_valid(valid, (H, L))
    if landmarks is not None:
        sel = np.zeros(L, dtype=bool)
        sel[landmarks] = True
        mask = mask & sel
    sl = _frame_slice(H, frames)
    d = np.linalg.norm(seq[sl] - prev[sl], axis=-1)
    m = mask[sl]
    return float(d[m].sum()), int(m.sum())


def _ratio(s: float, n: int, what: str) -> float:
    if n == 0:
        raise NoDataError(f"{what}: no valid landmarks in range")
    return s / n


def mpjpe(pred, gt, gt_valid=None, frames=None, pred_valid=None) -> float:
    """Mean L2 error over valid (frame, landmark) pairs within ``frames``."""
    return _ratio(*error_sums(pred, gt, gt_valid, frames, pred_valid), "mpjpe")


def fde(pred, gt, gt_valid=None, pred_valid=None) -> float:
    H = np.asarray(gt).shape[0]
    return _ratio(*error_sums(pred, gt, gt_valid, (H, H), pred_valid), "fde")


def divergence(seq, last_obs, valid=None, frames=None) -> float:
    """Mean per-frame, per-landmark displacement; frame 1 is compared with ``last_obs``."""
    return _ratio(*divergence_sums(seq, last_obs, valid, frames), "divergence")


@dataclass
class MetricsReport:
    """Accumulated metric sums and counts.

    Keys are the nine field names, optionally suffixed by ``_face``, ``_body``
    or ``_hands``.  Merging two reports adds sums and counts.
    """

    sums: dict[str, float] = field(default_factory=dict)
    counts: dict[str, int] = field(default_factory=dict)

    def add(self, key: str, s: float, n: int) -> None:
        self.sums[key] = self.sums.get(key, 0.0) + s
        self.counts[key] = self.counts.get(key, 0) + n

    def merge(self, other: "MetricsReport") -> "MetricsReport":
        for k in other.sums:
            self.add(k, other.sums[k], other.counts[k])
        return self

    def value(self, key: str) -> float:
        return _ratio(self.sums.get(key, 0.0), self.counts.get(key, 0), key)

    def __getattr__(self, name: str) -> float:
        if name in FIELDS or any(name == f"{f}_{p}" for f in FIELDS for p in PART_NAMES):
            return self.value(name)
        raise AttributeError(name)

    def keys(self) -> list[str]:
        return list(FIELDS) + [f"{f}_{p}" for p in PART_NAMES for f in FIELDS]

    def as_row(self) -> dict[str, float]:
        row = {}
        for k in self.keys():
            n = self.counts.get(k, 0)
            row[k] = self.sums[k] / n if n else math.nan
        return row


def report(pred, gt, last_obs, gt_valid=None, pred_valid=None) -> MetricsReport:
    """All error/divergence fields for one prediction, overall and per body part.

    ``pred``/``gt`` are (H, 78, 2); ``last_obs`` is the (78, 2) last observed pose.
    ``pred_valid`` (78,) marks landmarks the prediction covers; divergence is
    averaged over those.
    """
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    H, L = gt.shape[:2]
    pv = _as_valid(pred_valid, (H, L))
    rep = MetricsReport()
    selections = [("", None)]
    if L == N_LANDMARKS:
        selections += [(f"_{p}", group_landmarks(p)) for p in PART_NAMES]
    for suffix, lms in selections:
        rep.add("mpjpe" + suffix, *error_sums(pred, gt, gt_valid, None, pv, lms))
        rep.add("fde" + suffix, *error_sums(pred, gt, gt_valid, (H, H), pv, lms))
        rep.add("div" + suffix, *divergence_sums(pred, last_obs, pv, None, lms))
        for w, (a, b) in WINDOWS.items():
            if a > H:
                rep.add(w + suffix, 0.0, 0)
                rep.add(f"div_{w}" + suffix, 0.0, 0)
                continue
            fr = (a, min(b, H))
            rep.add(w + suffix, *error_sums(pred, gt, gt_valid, fr, pv, lms))
            rep.add(f"div_{w}" + suffix, *divergence_sums(pred, last_obs, pv, fr, lms))
    return rep


def aggregate(reports: Iterable[MetricsReport]) -> MetricsReport:
    out = MetricsReport()
    for r in reports:
        out.merge(r)
    return out


def csv_header() -> list[str]:
    return ["model"] + MetricsReport().keys()


def write_csv(path: str | Path, rows: Iterable[tuple[str, MetricsReport]]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(csv_header())
        for name, rep in rows:
            vals = rep.as_row()
            w.writerow([name] + [repr(float(vals[k])) for k in rep.keys()])
