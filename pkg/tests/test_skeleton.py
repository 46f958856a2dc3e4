import json

import numpy as np
import pytest

from behavior_forecast.skeleton import (DEFAULT_CONFIG, N_LANDMARKS, PART_SIZES, PARTS, Frame, LandmarkSet,
                                        SequenceArrays, SkeletonConfig, SkeletonSequence, apply_offsets,
                                        compute_roots, input_slot_mask, mask_part, read_jsonl, sequence_features,
                                        to_features, write_jsonl)
from conftest import random_arrays


def make_frame(rng, idx=0, parts=PARTS, gaze=True):
    kw = {p: rng.normal(size=(PART_SIZES[p], 3)) * 30 + 300 for p in parts}
    return Frame(idx, LandmarkSet(gaze=rng.normal(size=(2, 3)) if gaze else None, **kw))


def test_feature_length_default():
    assert DEFAULT_CONFIG.feature_size == 496
    assert SkeletonConfig(n_gaze=1).feature_size == 490
    assert sum(PART_SIZES.values()) == N_LANDMARKS


def test_landmark_counts_validated():
    with pytest.raises(ValueError):
        LandmarkSet(face=np.zeros((27, 3)))
    with pytest.raises(ValueError):
        LandmarkSet(gaze=np.array([[np.nan, 0, 0]]))


def test_quality_only_for_present_parts():
    with pytest.raises(ValueError):
        Frame(0, LandmarkSet(), {"face": True})
    f = Frame(0, LandmarkSet(body=np.zeros((10, 3))))
    assert f.quality == {"face": False, "body": True, "left_hand": False, "right_hand": False}


def test_sequence_indices_must_be_contiguous(rng):
    with pytest.raises(ValueError):
        SkeletonSequence("s", "p", [make_frame(rng, 0), make_frame(rng, 2)])
    with pytest.raises(ValueError):
        SkeletonSequence("s", "p", [])


def test_roots_midpoint_and_absence():
    face = np.zeros((28, 3))
    face[0] = (10, 10, 0)
    face[1] = (20, 10, 0)
    r = compute_roots(Frame(0, LandmarkSet(face=face, body=np.ones((10, 3)))))
    np.testing.assert_array_equal(r.face_root, [15, 10, 0])
    assert r.left_hand_root is None and r.right_hand_root is None
    zero = Frame(0, LandmarkSet(**{p: np.zeros((PART_SIZES[p], 3)) for p in PARTS}))
    assert all(np.all(v == 0) for v in compute_roots(zero).as_list())


def test_static_frame_has_zero_offsets(rng):
    f = make_frame(rng)
    fv = to_features(f, f)
    assert np.all(fv[DEFAULT_CONFIG.off_start:DEFAULT_CONFIG.root_start] == 0)
    assert np.all(fv[DEFAULT_CONFIG.root_start + 2::4][:4] == 0)


def test_absent_face_block_is_zero(rng):
    f = make_frame(rng, parts=("body", "left_hand", "right_hand"))
    fv = to_features(f, make_frame(rng))
    slots = DEFAULT_CONFIG.part_slots("face")
    assert len(slots) == 28 * 6 + 4
    assert np.all(fv[slots] == 0)


def test_root_landmark_is_self_relative(rng):
    f = make_frame(rng)
    fv = to_features(f)
    body0 = 28  # first body landmark is the chest root
    np.testing.assert_array_equal(fv[3 * body0:3 * body0 + 3], 0.0)


def test_features_recover_global_positions(rng):
    f = make_frame(rng)
    fv = to_features(f)
    for i, p in enumerate(PARTS):
        sl = slice(*(np.cumsum([0] + [PART_SIZES[q] for q in PARTS])[[i, i + 1]]))
        rel = fv[:3 * N_LANDMARKS].reshape(N_LANDMARKS, 3)[sl, :2]
        root = fv[DEFAULT_CONFIG.root_start + 4 * i: DEFAULT_CONFIG.root_start + 4 * i + 2]
        np.testing.assert_allclose(rel + root, getattr(f.landmarks, p)[:, :2], rtol=0, atol=1e-9)


def test_vectorised_features_match_per_frame(rng):
    pres = rng.random((12, 4)) > 0.3
    arr = random_arrays(rng, 12, present=pres)
    frames = arr.to_frames()
    expected = np.stack([to_features(f, frames[t - 1] if t else None) for t, f in enumerate(frames)])
    np.testing.assert_allclose(sequence_features(arr), expected, rtol=0, atol=1e-12)


def test_apply_offsets_examples():
    last = np.arange(156, dtype=float).reshape(78, 2)
    np.testing.assert_array_equal(apply_offsets(last, np.zeros((4, 78, 2))), np.repeat(last[None], 4, 0))
    off = np.zeros((3, 78, 2))
    off[..., 0] = 1
    out = apply_offsets(last, off)
    np.testing.assert_array_equal(out[:, 0, 0] - last[0, 0], [1, 2, 3])
    off = np.array([[[1.0, -2.0]], [[-1.0, 2.0]]])
    np.testing.assert_array_equal(apply_offsets(np.zeros((1, 2)), off)[-1], [[0, 0]])
    with pytest.raises(ValueError):
        apply_offsets(last, np.zeros((0, 78, 2)))
    with pytest.raises(ValueError):
        apply_offsets(last, np.zeros((2, 77, 2)))


def test_offsets_roundtrip_ground_truth(rng):
    arr = random_arrays(rng, 20)
    pose = arr.pose_2d
    rec = apply_offsets(pose[0], np.diff(pose, axis=0))
    np.testing.assert_allclose(rec, pose[1:], rtol=0, atol=1e-9)


def test_mask_part_properties(rng):
    fv = sequence_features(random_arrays(rng, 3))
    once = mask_part(fv, "face")
    np.testing.assert_array_equal(mask_part(once, "face"), once)
    assert np.count_nonzero(fv[-1] != once[-1]) <= 28 * 6 + 4
    assert np.all(once[..., DEFAULT_CONFIG.part_slots("face")] == 0)
    np.testing.assert_array_equal(mask_part(mask_part(fv, "face"), "hands"), mask_part(mask_part(fv, "hands"), "face"))
    all_masked = mask_part(mask_part(once, "body"), "hands")
    nz = np.nonzero(all_masked.any(axis=0))[0]
    assert set(nz) <= set(DEFAULT_CONFIG.gaze_slots())
    np.testing.assert_array_equal(fv * input_slot_mask(["face"]), once)


def test_jsonl_roundtrip(tmp_path, rng):
    frames = [make_frame(rng, i, parts=PARTS if i % 2 else ("face", "body"), gaze=i != 1) for i in range(5)]
    seq = SkeletonSequence("sess", "p1", frames)
    path = tmp_path / "d.jsonl"
    write_jsonl(path, [seq])
    rec = json.loads(path.read_text().splitlines()[0])
    assert set(rec) == {"session_id", "participant_id", "frame_idx", "face", "body", "left_hand",
                        "right_hand", "gaze", "quality"}
    back = read_jsonl(path)["p1"]
    a, b = seq.to_arrays(), back.to_arrays()
    for f in ("coords", "present", "quality", "gaze", "gaze_present"):
        np.testing.assert_array_equal(getattr(a, f), getattr(b, f))


def test_arrays_frames_roundtrip(rng):
    arr = random_arrays(rng, 6, present=rng.random((6, 4)) > 0.4)
    back = SequenceArrays.from_frames(arr.to_frames())
    np.testing.assert_array_equal(back.coords, arr.coords)
    np.testing.assert_array_equal(back.present, arr.present)
