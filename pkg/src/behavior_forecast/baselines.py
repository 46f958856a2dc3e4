"""Analytic forecasting baselines: zero-velocity, linear propagation and regression to the observed mean."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .skeleton import PART_SLICES, PARTS, SequenceArrays, landmark_part_index

DEFAULT_HORIZON = 50


@dataclass
class Prediction2D:
    poses: np.ndarray  # (H, 78, 2)
    valid: np.ndarray  # (78,) landmarks covered by the prediction

    @property
    def horizon(self) -> int:
        return self.poses.shape[0]


def _last_valid(obs: SequenceArrays) -> np.ndarray:
    return obs.present[-1][landmark_part_index()]


def _check(obs: SequenceArrays, min_frames: int) -> None:
    if len(obs) < min_frames:
        raise ValueError(f"baseline needs at least {min_frames} observed frame(s), got {len(obs)}")


def _propagate(last: np.ndarray, velocity: np.ndarray, H: int, valid: np.ndarray) -> Prediction2D:
    k = np.arange(1, H + 1, dtype=np.float64)[:, None, None]
    poses = last[None] + k * velocity[None]
    return Prediction2D(poses, valid)


def zero_velocity(obs: SequenceArrays, H: int = DEFAULT_HORIZON) -> Prediction2D:
    _check(obs, 1)
    last = obs.pose_2d[-1]
    return Prediction2D(np.repeat(last[None], H, axis=0), _last_valid(obs))


def linear_prop(obs: SequenceArrays, H: int = DEFAULT_HORIZON) -> Prediction2D:
    """Each part keeps moving with the mean last-step velocity of its landmarks."""
    _check(obs, 2)
    pose = obs.pose_2d
    vel = np.zeros_like(pose[-1])
    for i, p in enumerate(PARTS):
        if obs.present[-1, i] and obs.present[-2, i]:
            sl = PART_SLICES[p]
            vel[sl] = (pose[-1, sl] - pose[-2, sl]).mean(axis=0)
    return _propagate(pose[-1], vel, H, _last_valid(obs))


def rto_mean(obs: SequenceArrays, H: int = DEFAULT_HORIZON, per_landmark: bool = False,
             target_frames: int = DEFAULT_HORIZON) -> Prediction2D:
    """Move linearly from the last pose towards the observed mean pose, reaching it at ``target_frames``.

    The mean for each part is taken over the observed frames where that part
    is present.  With ``per_landmark=False`` each part is rigidly translated.
    """
    _check(obs, 1)
    pose = obs.pose_2d
    last = pose[-1]
    vel = np.zeros_like(last)
    for i, p in enumerate(PARTS):
        if not obs.present[-1, i]:
            continue
        sl = PART_SLICES[p]
        seen = obs.present[:, i]
        mean = pose[seen, sl].mean(axis=0)
        delta = mean - last[sl]
        vel[sl] = delta / target_frames if per_landmark else delta.mean(axis=0) / target_frames
    return _propagate(last, vel, H, _last_valid(obs))


BASELINES = {
    "zero-velocity": zero_velocity,
    "linear-prop": linear_prop,
    "rto-mean": lambda obs, H=DEFAULT_HORIZON: rto_mean(obs, H, per_landmark=False),
    "rto-mean-l": lambda obs, H=DEFAULT_HORIZON: rto_mean(obs, H, per_landmark=True),
}
