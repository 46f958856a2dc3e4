"""Deterministic synthetic dyadic skeleton sessions.

Two seated participants face each other in a 1280x720 image plane.  Motion is
assembled from timed primitives (holds, drifts, sways, hand gestures, nods)
that are rendered as rigid per-part displacements of a template pose.  The
``static`` and ``constant_velocity`` presets use coordinates on a 1/64 pixel
grid so the matching analytic baselines are exact in floating point.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .fusion import MetadataRecord, encode_metadata
from .pipeline import Session, file_sha256
from .skeleton import (N_LANDMARKS, PART_SLICES, PARTS, SequenceArrays, SkeletonSequence, landmark_part_index,
                       write_jsonl)

WIDTH, HEIGHT = 1280, 720
ANCHORS = {"A": 400.0, "B": 880.0}
PRESETS = ("static", "constant_velocity", "conversational", "noisy", "coupled_nod")
GRID = 64.0  # coordinates of the exact presets are multiples of 1/GRID
NOD_LAG = 25
SPLIT_RATIOS = (0.6, 0.2, 0.2)


def _snap(x):
    return np.round(np.asarray(x, dtype=np.float64) * GRID) / GRID


def template_pose(x0: float, facing: float, rng: np.random.Generator) -> np.ndarray:
    """(78, 3) seated upper-body pose centred at ``x0``; ``facing`` is +1 or -1."""
    pts = np.zeros((N_LANDMARKS, 3))
    # face: two eyes then 26 points on an ellipse
    face = [[x0 - 18, 215], [x0 + 18, 215]]
    ang = np.linspace(0, 2 * np.pi, 26, endpoint=False)
    face += list(np.stack([x0 + 45 * np.cos(ang), 222 + 60 * np.sin(ang)], axis=1))
    body = [[x0, 360], [x0, 300], [x0 - 70, 320], [x0 + 70, 320], [x0 - 95, 420],
            [x0 + 95, 420], [x0 - 80, 470], [x0 + 80, 470], [x0 - 50, 520], [x0 + 50, 520]]

    def hand(cx):
        out = [[cx, 480]]
        for f in range(5):
            dx = (f - 2) * 9
            for k in range(1, 5):
                out.append([cx + dx * (1 + 0.15 * k), 480 - 9 * k])
        return out[:20]

    xy = np.array(face + body + hand(x0 - 80 * facing) + hand(x0 + 80 * facing), dtype=np.float64)
    xy += rng.uniform(-3, 3, size=xy.shape)
    pts[:, :2] = xy
    pts[:, 2] = rng.uniform(-20, 20, size=N_LANDMARKS)
    return _snap(pts)


# -- motion scripts ----------------------------------------------------------

@dataclass
class Primitive:
    kind: str  # hold, drift, sway, gesture, nod
    start: int
    length: int
    part: str = "body"
    params: dict = field(default_factory=dict)

    @property
    def end(self) -> int:
        return self.start + self.length


@dataclass
class MotionScript:
    """Per-participant primitive lists; base primitives (hold/drift) tile the timeline."""

    length: int
    tracks: dict[str, list[Primitive]]

    def validate(self) -> None:
        for pid, prims in self.tracks.items():
            for p in prims:
                if p.length < 1 or p.start < 0 or p.end > self.length:
                    raise ValueError(f"{pid}: primitive {p.kind} at {p.start} outside the timeline")
                for v in p.params.values():
                    if isinstance(v, (int, float)) and not np.isfinite(v):
                        raise ValueError(f"{pid}: non-finite parameter in {p.kind}")
            base = sorted((p for p in prims if p.kind in ("hold", "drift")), key=lambda p: p.start)
            t = 0
            for p in base:
                if p.start != t:
                    raise ValueError(f"{pid}: base primitives leave a gap or overlap at frame {t}")
                t = p.end
            if t != self.length:
                raise ValueError(f"{pid}: base primitives stop at {t}, timeline is {self.length}")

    def onsets(self, pid: str, kind: str) -> list[int]:
        return [p.start for p in self.tracks[pid] if p.kind == kind]


def _tile_base(length: int, rng, drift: bool, speed: float) -> list[Primitive]:
    """Alternating holds and short body/face drifts covering the whole timeline."""
    out, t, sign = [], 0, 1.0
    while t < length:
        n = int(min(length - t, rng.integers(40, 160)))
        if drift and rng.random() < 0.5:
            v = sign * rng.uniform(0.3, 1.0) * speed * np.array([1.0, 0.3 * rng.standard_normal()])
            out.append(Primitive("drift", t, n, rng.choice(["body", "face"]).item(), {"vx": float(v[0]), "vy": float(v[1])}))
            sign = -sign
        else:
            out.append(Primitive("hold", t, n))
        t += n
    return out


def _gestures(length: int, rng, mean_gap: float, min_gap: int = 45) -> list[Primitive]:
    out, t = [], int(rng.integers(10, 60))
    while True:
        dur = int(rng.integers(20, 40))
        if t + dur > length:
            break
        hand = rng.choice(["left_hand", "right_hand"]).item()
        theta = rng.uniform(-0.75 * np.pi, -0.25 * np.pi)  # mostly upwards
        mag = rng.uniform(20, 60)
        out.append(Primitive("gesture", t, dur, hand, {"dx": float(mag * np.cos(theta)), "dy": float(mag * np.sin(theta))}))
        t += max(min_gap, int(rng.exponential(mean_gap)) + dur)
    return out


def build_script(preset: str, length: int, rng: np.random.Generator, lag: int = NOD_LAG) -> MotionScript:
    if preset not in PRESETS:
        raise ValueError(f"unknown preset {preset!r}; choose from {', '.join(PRESETS)}")
    tracks: dict[str, list[Primitive]] = {}
    if preset in ("static", "constant_velocity"):
        for pid in ("A", "B"):
            prim = Primitive("hold", 0, length)
            if preset == "constant_velocity":
                prim = Primitive("drift", 0, length, "all", {
                    p: [float(v) for v in _snap(rng.uniform(-0.25, 0.25, size=2))] for p in PARTS})
            tracks[pid] = [prim]
        return MotionScript(length, tracks)
    conversational = preset in ("conversational", "noisy")
    for pid in ("A", "B"):
        prims = _tile_base(length, rng, drift=conversational, speed=0.4)
        if conversational:
            prims.append(Primitive("sway", 0, length, "face", {
                "amp": float(rng.uniform(2, 6)), "period": float(rng.uniform(75, 200)),
                "phase": float(rng.uniform(0, 2 * np.pi))}))
        prims += _gestures(length, rng, mean_gap=70.0 if conversational else 50.0)
        tracks[pid] = prims
    # each gesture makes the partner nod ``lag`` frames later
    p_nod = 0.7 if conversational else 1.0
    for pid, other in (("A", "B"), ("B", "A")):
        for g in [p for p in tracks[other] if p.kind == "gesture"]:
            s = g.start + lag
            if s + 20 <= length and rng.random() < p_nod:
                tracks[pid].append(Primitive("nod", s, 20, "face", {"amp": 12.0, "trigger": g.start, "lag": lag}))
    script = MotionScript(length, tracks)
    script.validate()
    return script


def _bump(s: np.ndarray, n: int) -> np.ndarray:
    """Smooth 0 -> 1 -> 0 profile over ``n`` frames."""
    return 0.5 * (1.0 - np.cos(2.0 * np.pi * s / n))


def render(script: MotionScript, pid: str, base: np.ndarray) -> np.ndarray:
    """(T, 78, 3) coordinates: the template displaced by every primitive on the track."""
    L = script.length
    t = np.arange(L, dtype=np.float64)
    disp = np.zeros((L, 4, 2))
    pidx = {p: i for i, p in enumerate(PARTS)}
    groups = {"face": [0], "body": [1], "left_hand": [2], "right_hand": [3], "all": [0, 1, 2, 3]}
    for p in script.tracks[pid]:
        s = np.clip(t - p.start, 0, p.length)  # frames elapsed, held after the end
        inside = (t >= p.start) & (t < p.end)
        if p.kind == "drift":
            if p.part == "all":
                for part, v in p.params.items():
                    disp[:, pidx[part]] += s[:, None] * np.asarray(v)
            else:
                v = np.array([p.params["vx"], p.params["vy"]])
                for i in groups[p.part]:
                    disp[:, i] += s[:, None] * v
                if p.part == "body":  # the head and hands ride along with the torso
                    for i in (0, 2, 3):
                        disp[:, i] += s[:, None] * v
        elif p.kind == "sway":
            dx = p.params["amp"] * np.sin(2 * np.pi * t / p.params["period"] + p.params["phase"])
            disp[:, 0, 0] += dx
            disp[:, 1, 0] += 0.5 * dx
        elif p.kind == "gesture":
            b = np.where(inside, _bump(s, p.length), 0.0)
            disp[:, pidx[p.part]] += b[:, None] * np.array([p.params["dx"], p.params["dy"]])
        elif p.kind == "nod":
            disp[:, 0, 1] += np.where(inside, _bump(s, p.length), 0.0) * p.params["amp"]
    coords = np.repeat(base[None], L, axis=0)
    coords[..., :2] += disp[:, landmark_part_index()]
    return coords


# -- sessions ----------------------------------------------------------------

@dataclass
class GeneratedSession:
    session_id: str
    clean: dict[str, SequenceArrays]
    metadata: dict[str, MetadataRecord]
    script: MotionScript
    raw: Optional[dict[str, SequenceArrays]] = None

    def to_session(self, with_personality: bool = True) -> Session:
        meta = {p: encode_metadata(r, with_personality) for p, r in self.metadata.items()}
        return Session(self.session_id, tuple(self.clean), self.clean, self.raw, meta)

    def sequences(self, raw: bool = False) -> list[SkeletonSequence]:
        src = self.raw if raw else self.clean
        return [SkeletonSequence(self.session_id, pid, arr.to_frames()) for pid, arr in src.items()]


def random_metadata(rng: np.random.Generator) -> MetadataRecord:
    def one_hot(n):
        v = [0.0] * n
        v[int(rng.integers(n))] = 1.0
        return v
    return MetadataRecord(
        age=float(rng.integers(18, 70)), gender=int(rng.integers(2)), country=one_hot(6), education=one_hot(7),
        language=one_hot(3), relationship=int(rng.integers(2)), mood=[float(v) for v in rng.integers(1, 6, 8)],
        fatigue=float(rng.integers(0, 11)), personality=[float(v) for v in np.round(rng.standard_normal(5), 3)])


def _hand_gap(arr: SequenceArrays, rng) -> None:
    """Take one hand out of view for a while (as when it leaves the frame)."""
    L = len(arr)
    i = PARTS.index(rng.choice(["left_hand", "right_hand"]).item())
    s = int(rng.integers(0, L - 40))
    e = min(L, s + int(rng.integers(40, 150)))
    arr.present[s:e, i] = False
    arr.quality[s:e, i] = False
    arr.coords[s:e, PART_SLICES[PARTS[i]]] = 0.0


def jitter_hands(arr: SequenceArrays, rng: np.random.Generator, fraction: float = 0.10,
                 radius: float = 15.0) -> SequenceArrays:
    """Copy with hand landmarks displaced uniformly within ``radius`` px on a fraction of frames."""
    out = arr.copy()
    L = len(arr)
    frames = np.sort(rng.choice(L, size=int(round(fraction * L)), replace=False))
    for i in (PARTS.index("left_hand"), PARTS.index("right_hand")):
        sl = PART_SLICES[PARTS[i]]
        n = sl.stop - sl.start
        r = radius * np.sqrt(rng.random((len(frames), n)))
        a = rng.uniform(0, 2 * np.pi, size=(len(frames), n))
        d = np.stack([r * np.cos(a), r * np.sin(a)], axis=-1)
        on = out.present[frames, i][:, None, None]
        out.coords[frames, sl, :2] += d * on
    return out


def generate_session(seed: int, preset: str = "conversational", length: int = 400,
                     session_id: Optional[str] = None, lag: int = NOD_LAG,
                     noise_fraction: float = 0.10, noise_radius: float = 15.0) -> GeneratedSession:
    if preset not in PRESETS:
        raise ValueError(f"unknown preset {preset!r}; choose from {', '.join(PRESETS)}")
    if length < 150:
        raise ValueError("sessions need at least 150 frames (one observation plus prediction window)")
    rng = np.random.default_rng(seed)
    sid = session_id or f"S{seed:06d}"
    script = build_script(preset, length, rng, lag)
    clean, meta = {}, {}
    for pid, facing in (("A", 1.0), ("B", -1.0)):
        base = template_pose(ANCHORS[pid], facing, rng)
        coords = render(script, pid, base)
        gaze_dir = np.array([facing, 0.1, -0.2]) / np.linalg.norm([1.0, 0.1, 0.2])
        gaze = np.repeat(np.repeat(gaze_dir[None, None], 2, axis=1), length, axis=0)
        arr = SequenceArrays(coords, np.ones((length, 4), bool), np.ones((length, 4), bool),
                             _snap(gaze), np.ones(length, bool))
        if preset in ("conversational", "noisy") and rng.random() < 0.3:
            _hand_gap(arr, rng)
        clean[f"{sid}-{pid}"] = arr
        meta[f"{sid}-{pid}"] = random_metadata(rng)
    raw = None
    if preset == "noisy":
        raw = {p: jitter_hands(a, rng, noise_fraction, noise_radius) for p, a in clean.items()}
    script.tracks = {f"{sid}-{k}": v for k, v in script.tracks.items()}
    return GeneratedSession(sid, clean, meta, script, raw)


def split_sizes(n: int) -> tuple[int, int, int]:
    if n < 3:
        raise ValueError("need at least 3 sessions for train/val/test splits")
    n_val = max(1, int(round(n * SPLIT_RATIOS[1])))
    n_test = max(1, int(round(n * SPLIT_RATIOS[2])))
    return n - n_val - n_test, n_val, n_test


def generate_splits(seed: int, preset: str, n_sessions: int, length: int = 400,
                    **kw) -> dict[str, list[GeneratedSession]]:
    """In-memory train/val/test sessions, split at session level after a seeded shuffle."""
    sizes = split_sizes(n_sessions)
    order = np.random.default_rng(seed).permutation(n_sessions)
    sessions = [generate_session(seed * 100_003 + int(i), preset, length, f"S{seed:04d}_{int(i):04d}", **kw)
                for i in range(n_sessions)]
    out, k = {}, 0
    for name, n in zip(("train", "val", "test"), sizes):
        out[name] = [sessions[int(i)] for i in order[k:k + n]]
        k += n
    return out


def make_dataset(out_dir: str | Path, seed: int, preset: str, n_sessions: int, length: int = 400,
                 **kw) -> Path:
    """Write train/val/test directories (JSONL + per-session metadata) and a hashed manifest."""
    out = Path(out_dir)
    splits = generate_splits(seed, preset, n_sessions, length, **kw)
    files = {}
    for name, sessions in splits.items():
        d = out / name
        (d / "metadata").mkdir(parents=True, exist_ok=True)
        write_jsonl(d / "sessions.jsonl", [s for g in sessions for s in g.sequences()])
        files[f"{name}/sessions.jsonl"] = d / "sessions.jsonl"
        if preset == "noisy":
            write_jsonl(d / "raw.jsonl", [s for g in sessions for s in g.sequences(raw=True)])
            files[f"{name}/raw.jsonl"] = d / "raw.jsonl"
        for g in sessions:
            doc = {"session_id": g.session_id,
                   "participants": {p: r.to_dict() for p, r in g.metadata.items()}}
            mp = d / "metadata" / f"{g.session_id}.json"
            mp.write_text(json.dumps(doc, sort_keys=True) + "\n")
            files[f"{name}/metadata/{g.session_id}.json"] = mp
    manifest = {
        "preset": preset, "seed": seed, "n_sessions": n_sessions, "length": length,
        "splits": {k: [g.session_id for g in v] for k, v in splits.items()},
        "sha256": {k: file_sha256(p) for k, p in sorted(files.items())},
        "options": kw,
    }
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path
