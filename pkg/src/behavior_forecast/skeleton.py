"""Whole-body skeleton data structures and the per-frame feature representation.

Landmarks are stored in a fixed global order: 28 face points, 10 upper-body
joints, 20 left-hand and 20 right-hand landmarks (78 in total).  Each part is
independently optional.

Feature vector layout (default configuration, 496 slots)::

    [0, 234)    root-relative 3D coordinates, landmark-major (x, y, z)
    [234, 468)  3D offsets vs. the previous frame, landmark-major
    [468, 484)  4 roots (face, body, left hand, right hand) x (x, y, dx, dy)
    [484, 496)  gaze: G x 3 directions followed by G x 3 direction offsets

Absent parts occupy zero-filled slots.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

PARTS = ("face", "body", "left_hand", "right_hand")
PART_SIZES = {"face": 28, "body": 10, "left_hand": 20, "right_hand": 20}
N_LANDMARKS = 78
FPS = 25

_starts = np.cumsum([0] + [PART_SIZES[p] for p in PARTS])
PART_SLICES = {p: slice(int(_starts[i]), int(_starts[i + 1])) for i, p in enumerate(PARTS)}

# mask/metric groups: the two hands are treated as one body part
GROUPS = {"face": ("face",), "body": ("body",), "hands": ("left_hand", "right_hand")}


def landmark_part_index() -> np.ndarray:
    """Part index (0..3) of each of the 78 landmarks."""
    out = np.empty(N_LANDMARKS, dtype=np.int64)
    for i, p in enumerate(PARTS):
        out[PART_SLICES[p]] = i
    return out


def group_landmarks(group: str) -> np.ndarray:
    if group not in GROUPS:
        raise ValueError(f"unknown body part group {group!r}; expected one of {sorted(GROUPS)}")
    return np.concatenate([np.arange(N_LANDMARKS)[PART_SLICES[p]] for p in GROUPS[group]])


@dataclass(frozen=True)
class SkeletonConfig:
    """Landmark index conventions and gaze count.

    The eye-center, chest and middle-knuckle indices are local to their part.
    """

    eye_indices: tuple[int, int] = (0, 1)
    chest_index: int = 0
    knuckle_index: int = 0
    n_gaze: int = 2

    @cached_property
    def root_matrix(self) -> np.ndarray:
        """(4, 78) matrix mapping landmark positions to the four root positions."""
        q = np.zeros((4, N_LANDMARKS))
        face0 = PART_SLICES["face"].start
        q[0, face0 + self.eye_indices[0]] += 0.5
        q[0, face0 + self.eye_indices[1]] += 0.5
        q[1, PART_SLICES["body"].start + self.chest_index] = 1.0
        q[2, PART_SLICES["left_hand"].start + self.knuckle_index] = 1.0
        q[3, PART_SLICES["right_hand"].start + self.knuckle_index] = 1.0
        return q

    @cached_property
    def relative_matrix(self) -> np.ndarray:
        """(78, 78) matrix turning global positions into root-relative positions."""
        q = self.root_matrix
        return np.eye(N_LANDMARKS) - q[landmark_part_index()]

    @property
    def feature_size(self) -> int:
        return N_LANDMARKS * 6 + 16 + self.n_gaze * 6

    # slot ranges ---------------------------------------------------------
    @property
    def rel_start(self) -> int:
        return 0

    @property
    def off_start(self) -> int:
        return N_LANDMARKS * 3

    @property
    def root_start(self) -> int:
        return N_LANDMARKS * 6

    @property
    def gaze_start(self) -> int:
        return N_LANDMARKS * 6 + 16

    def part_slots(self, part: str) -> np.ndarray:
        """Feature slots owned by one of the four parts (coords, offsets, root)."""
        sl = PART_SLICES[part]
        lm = np.arange(sl.start, sl.stop)
        xyz = (lm[:, None] * 3 + np.arange(3)).ravel()
        r = PARTS.index(part)
        root = self.root_start + 4 * r + np.arange(4)
        return np.concatenate([self.rel_start + xyz, self.off_start + xyz, root])

    def group_slots(self, group: str) -> np.ndarray:
        if group not in GROUPS:
            raise ValueError(f"unknown body part group {group!r}; expected one of {sorted(GROUPS)}")
        return np.concatenate([self.part_slots(p) for p in GROUPS[group]])

    def gaze_slots(self) -> np.ndarray:
        return np.arange(self.gaze_start, self.feature_size)

    def slot_part_matrix(self) -> np.ndarray:
        """(4, F) 0/1 matrix: which feature slots belong to which part."""
        m = np.zeros((4, self.feature_size))
        for i, p in enumerate(PARTS):
            m[i, self.part_slots(p)] = 1.0
        return m


DEFAULT_CONFIG = SkeletonConfig()


@dataclass
class LandmarkSet:
    face: Optional[np.ndarray] = None
    body: Optional[np.ndarray] = None
    left_hand: Optional[np.ndarray] = None
    right_hand: Optional[np.ndarray] = None
    gaze: Optional[np.ndarray] = None

    def __post_init__(self):
        for p in PARTS:
            v = getattr(self, p)
            if v is None:
                continue
            v = np.asarray(v, dtype=np.float64)
            if v.shape != (PART_SIZES[p], 3):
                raise ValueError(f"{p}: expected shape ({PART_SIZES[p]}, 3), got {v.shape}")
            setattr(self, p, v)
        if self.gaze is not None:
            g = np.asarray(self.gaze, dtype=np.float64).reshape(-1, 3)
            if not np.all(np.isfinite(g)):
                raise ValueError("gaze vectors must be finite")
            self.gaze = g

    def present(self, part: str) -> bool:
        return getattr(self, part) is not None


@dataclass
class Frame:
    frame_index: int
    landmarks: LandmarkSet
    quality: dict[str, bool] = field(default_factory=dict)

    def __post_init__(self):
        if self.frame_index < 0:
            raise ValueError("frame_index must be non-negative")
        q = {p: bool(self.quality.get(p, self.landmarks.present(p))) for p in PARTS}
        for p in PARTS:
            if q[p] and not self.landmarks.present(p):
                raise ValueError(f"quality flag set for absent part {p!r}")
        self.quality = q


@dataclass
class SkeletonSequence:
    session_id: str
    participant_id: str
    frames: list[Frame]

    def __post_init__(self):
        if not self.frames:
            raise ValueError("a skeleton sequence needs at least one frame")
        idx = np.array([f.frame_index for f in self.frames])
        if np.any(np.diff(idx) != 1):
            raise ValueError("frame indices must increase by exactly 1")

    def __len__(self) -> int:
        return len(self.frames)

    def to_arrays(self, n_gaze: int = DEFAULT_CONFIG.n_gaze) -> "SequenceArrays":
        return SequenceArrays.from_frames(self.frames, n_gaze=n_gaze)


@dataclass
class RootSet:
    face_root: Optional[np.ndarray] = None
    body_root: Optional[np.ndarray] = None
    left_hand_root: Optional[np.ndarray] = None
    right_hand_root: Optional[np.ndarray] = None

    def as_list(self) -> list[Optional[np.ndarray]]:
        return [self.face_root, self.body_root, self.left_hand_root, self.right_hand_root]


def compute_roots(frame: Frame, config: SkeletonConfig = DEFAULT_CONFIG) -> RootSet:
    lm = frame.landmarks
    roots = RootSet()
    if lm.face is not None:
        a, b = config.eye_indices
        roots.face_root = 0.5 * (lm.face[a] + lm.face[b])
    if lm.body is not None:
        roots.body_root = lm.body[config.chest_index].copy()
    if lm.left_hand is not None:
        roots.left_hand_root = lm.left_hand[config.knuckle_index].copy()
    if lm.right_hand is not None:
        roots.right_hand_root = lm.right_hand[config.knuckle_index].copy()
    return roots


def to_features(
    frame: Frame,
    prev: Optional[Frame] = None,
    roots: Optional[RootSet] = None,
    config: SkeletonConfig = DEFAULT_CONFIG,
) -> np.ndarray:
    """Build the feature vector of one frame (see the module docstring for the layout)."""
    roots = roots if roots is not None else compute_roots(frame, config)
    prev_roots = compute_roots(prev, config).as_list() if prev is not None else [None] * 4
    fv = np.zeros(config.feature_size)
    for i, p in enumerate(PARTS):
        pts = getattr(frame.landmarks, p)
        if pts is None:
            continue
        root = roots.as_list()[i]
        sl = PART_SLICES[p]
        fv[config.rel_start + 3 * sl.start: config.rel_start + 3 * sl.stop] = (pts - root).ravel()
        prev_pts = getattr(prev.landmarks, p) if prev is not None else None
        r0 = config.root_start + 4 * i
        fv[r0: r0 + 2] = root[:2]
        if prev_pts is not None:
            fv[config.off_start + 3 * sl.start: config.off_start + 3 * sl.stop] = (pts - prev_pts).ravel()
            fv[r0 + 2: r0 + 4] = root[:2] - prev_roots[i][:2]
    g = frame.landmarks.gaze
    if g is not None:
        g = _fit_gaze(g, config.n_gaze)
        gs = config.gaze_start
        fv[gs: gs + 3 * config.n_gaze] = g.ravel()
        pg = prev.landmarks.gaze if prev is not None else None
        if pg is not None:
            fv[gs + 3 * config.n_gaze: gs + 6 * config.n_gaze] = (g - _fit_gaze(pg, config.n_gaze)).ravel()
    return fv


def _fit_gaze(g: np.ndarray, n: int) -> np.ndarray:
    if g.shape[0] != n:
        raise ValueError(f"expected {n} gaze vectors, got {g.shape[0]}")
    return g


def apply_offsets(last_pose_2d: np.ndarray, offsets: np.ndarray) -> np.ndarray:
    """Reconstruct poses by accumulating per-frame 2D offsets onto the last pose."""
    last_pose_2d = np.asarray(last_pose_2d, dtype=np.float64)
    offsets = np.asarray(offsets, dtype=np.float64)
    if offsets.ndim != 3 or offsets.shape[0] < 1:
        raise ValueError(f"offsets must have shape (H>=1, L, 2), got {offsets.shape}")
    if offsets.shape[1:] != last_pose_2d.shape:
        raise ValueError(f"offset frames {offsets.shape[1:]} do not match pose {last_pose_2d.shape}")
    return last_pose_2d[None] + np.cumsum(offsets, axis=0)


def mask_part(fv: np.ndarray, part: str, config: SkeletonConfig = DEFAULT_CONFIG) -> np.ndarray:
    """Zero every slot of ``part`` ('face', 'body' or 'hands'); works on (..., F) arrays."""
    out = np.array(fv, dtype=np.float64, copy=True)
    out[..., config.group_slots(part)] = 0.0
    return out


def input_slot_mask(masked_groups: Iterable[str], config: SkeletonConfig = DEFAULT_CONFIG) -> np.ndarray:
    keep = np.ones(config.feature_size)
    for g in masked_groups:
        keep[config.group_slots(g)] = 0.0
    return keep


# ---------------------------------------------------------------------------
# dense array form used by the training/evaluation pipeline


@dataclass
class SequenceArrays:
    """Dense per-frame arrays for a run of frames.

    ``coords`` is zero wherever a part is absent.  ``present``/``quality`` are
    (T, 4) in PARTS order.
    """

    coords: np.ndarray  # (T, 78, 3)
    present: np.ndarray  # (T, 4) bool
    quality: np.ndarray  # (T, 4) bool
    gaze: np.ndarray  # (T, G, 3)
    gaze_present: np.ndarray  # (T,) bool

    def __len__(self) -> int:
        return self.coords.shape[0]

    def __getitem__(self, idx) -> "SequenceArrays":
        if isinstance(idx, int):
            idx = slice(idx, idx + 1 if idx != -1 else None)
        return SequenceArrays(
            self.coords[idx], self.present[idx], self.quality[idx], self.gaze[idx], self.gaze_present[idx]
        )

    @classmethod
    def from_frames(cls, frames: Sequence[Frame], n_gaze: int = DEFAULT_CONFIG.n_gaze) -> "SequenceArrays":
        T = len(frames)
        coords = np.zeros((T, N_LANDMARKS, 3))
        present = np.zeros((T, 4), dtype=bool)
        quality = np.zeros((T, 4), dtype=bool)
        gaze = np.zeros((T, n_gaze, 3))
        gaze_present = np.zeros(T, dtype=bool)
        for t, f in enumerate(frames):
            for i, p in enumerate(PARTS):
                pts = getattr(f.landmarks, p)
                if pts is not None:
                    coords[t, PART_SLICES[p]] = pts
                    present[t, i] = True
                    quality[t, i] = f.quality[p]
            if f.landmarks.gaze is not None:
                gaze[t] = _fit_gaze(f.landmarks.gaze, n_gaze)
                gaze_present[t] = True
        return cls(coords, present, quality, gaze, gaze_present)

    @classmethod
    def concat(cls, parts: Sequence["SequenceArrays"]) -> "SequenceArrays":
        return cls(*(np.concatenate([getattr(p, f) for p in parts]) for f in
                     ("coords", "present", "quality", "gaze", "gaze_present")))

    def copy(self) -> "SequenceArrays":
        return SequenceArrays(self.coords.copy(), self.present.copy(), self.quality.copy(),
                              self.gaze.copy(), self.gaze_present.copy())

    def to_frames(self, start_index: int = 0) -> list[Frame]:
        frames = []
        for t in range(len(self)):
            kw = {p: (self.coords[t, PART_SLICES[p]].copy() if self.present[t, i] else None)
                  for i, p in enumerate(PARTS)}
            gaze = self.gaze[t].copy() if self.gaze_present[t] else None
            q = {p: bool(self.quality[t, i]) for i, p in enumerate(PARTS)}
            frames.append(Frame(start_index + t, LandmarkSet(gaze=gaze, **kw), q))
        return frames

    @property
    def pose_2d(self) -> np.ndarray:
        return self.coords[..., :2]

    def landmark_present(self) -> np.ndarray:
        """(T, 78) presence per landmark."""
        return self.present[:, landmark_part_index()]

    def landmark_valid(self) -> np.ndarray:
        """(T, 78) landmarks that are present and flagged as correctly annotated."""
        return (self.present & self.quality)[:, landmark_part_index()]


def sequence_features(arr: SequenceArrays, config: SkeletonConfig = DEFAULT_CONFIG) -> np.ndarray:
    """Vectorised ``to_features`` over a window; the first frame gets zero offsets."""
    T = len(arr)
    part_idx = landmark_part_index()
    lp = arr.present[:, part_idx]  # (T, 78)
    roots = np.einsum("rl,tlc->trc", config.root_matrix, arr.coords)  # (T, 4, 3)
    rel = (arr.coords - roots[:, part_idx]) * lp[..., None]
    off = np.zeros_like(arr.coords)
    both = lp[1:] & lp[:-1]
    off[1:] = (arr.coords[1:] - arr.coords[:-1]) * both[..., None]
    root_feat = np.zeros((T, 4, 4))
    root_feat[:, :, :2] = roots[:, :, :2] * arr.present[..., None]
    rboth = arr.present[1:] & arr.present[:-1]
    root_feat[1:, :, 2:] = (roots[1:, :, :2] - roots[:-1, :, :2]) * rboth[..., None]
    G = config.n_gaze
    gz = arr.gaze * arr.gaze_present[:, None, None]
    goff = np.zeros_like(gz)
    gboth = arr.gaze_present[1:] & arr.gaze_present[:-1]
    goff[1:] = (arr.gaze[1:] - arr.gaze[:-1]) * gboth[:, None, None]
    return np.concatenate(
        [rel.reshape(T, -1), off.reshape(T, -1), root_feat.reshape(T, -1),
         gz.reshape(T, 3 * G), goff.reshape(T, 3 * G)], axis=1)


# ---------------------------------------------------------------------------
# JSON Lines interchange format


def frame_to_record(session_id: str, participant_id: str, frame: Frame) -> dict:
    lm = frame.landmarks
    rec = {"session_id": session_id, "participant_id": participant_id, "frame_idx": frame.frame_index}
    for p in PARTS:
        v = getattr(lm, p)
        rec[p] = None if v is None else v.tolist()
    rec["gaze"] = None if lm.gaze is None else lm.gaze.tolist()
    rec["quality"] = {p: bool(frame.quality[p]) for p in PARTS}
    return rec


def record_to_frame(rec: dict) -> Frame:
    kw = {p: (None if rec.get(p) is None else np.asarray(rec[p], dtype=np.float64)) for p in PARTS}
    gaze = rec.get("gaze")
    lm = LandmarkSet(gaze=None if gaze is None else np.asarray(gaze, dtype=np.float64), **kw)
    return Frame(int(rec["frame_idx"]), lm, dict(rec.get("quality") or {}))


def write_jsonl(path: str | Path, sequences: Iterable[SkeletonSequence]) -> None:
    with open(path, "w") as fh:
        for seq in sequences:
            for fr in seq.frames:
                fh.write(json.dumps(frame_to_record(seq.session_id, seq.participant_id, fr)) + "\n")


def read_jsonl(path: str | Path) -> dict[str, SkeletonSequence]:
    """Read a dataset file; returns one sequence per participant id, in file order."""
    frames: dict[str, list[Frame]] = {}
    sessions: dict[str, str] = {}
    with open(path) as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            pid = str(rec["participant_id"])
            sessions.setdefault(pid, str(rec["session_id"]))
            frames.setdefault(pid, []).append(record_to_frame(rec))
    return {pid: SkeletonSequence(sessions[pid], pid, fr) for pid, fr in frames.items()}
