import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from behavior_forecast.metrics import (MetricsReport, NoDataError, aggregate, csv_header, divergence, fde, mpjpe,
                                       report, write_csv)
from behavior_forecast.skeleton import N_LANDMARKS, group_landmarks
from oracles import divergence_loop, mpjpe_loop


def drift_case(H=50):
    gt = np.zeros((H, N_LANDMARKS, 2))
    gt[..., 0] = np.arange(1, H + 1)[:, None]
    return np.zeros((H, N_LANDMARKS, 2)), gt


def test_drift_arithmetic():
    pred, gt = drift_case()
    assert mpjpe(pred, gt) == 25.5
    assert mpjpe(pred, gt, frames=(1, 10)) == 5.5
    assert mpjpe(pred, gt, frames=(11, 25)) == 18.0
    assert mpjpe(pred, gt, frames=(26, 50)) == 38.0
    assert fde(pred, gt) == 50.0


def test_single_offset_example():
    pred = np.zeros((1, 2, 2))
    gt = pred.copy()
    gt[0, 0] = (3, 4)
    assert mpjpe(pred, gt) == 2.5


def test_identity_and_no_data():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(5, 3, 2))
    assert mpjpe(x, x) == 0 and fde(x, x) == 0
    with pytest.raises(NoDataError):
        mpjpe(x, x, gt_valid=np.zeros((5, 3), bool))
    with pytest.raises(ValueError):
        mpjpe(x, x[:4])


def test_divergence_examples():
    last = np.zeros((1, 2))
    steps = np.cumsum(np.tile([[[0.6, 0.8]]], (5, 1, 1)), axis=0)
    assert divergence(steps, last) == pytest.approx(1.0, abs=1e-12)
    alt = np.array([[[1.0, 0]], [[0.0, 0]], [[1.0, 0]], [[0.0, 0]]])
    assert divergence(alt, last) == 1.0
    frozen = np.repeat(np.ones((1, 1, 2)), 7, axis=0)
    assert divergence(frozen, np.ones((1, 2))) == 0.0


def test_fde_is_last_frame_mpjpe():
    rng = np.random.default_rng(1)
    p, g = rng.normal(size=(2, 8, 4, 2))
    assert fde(p, g) == mpjpe(p, g, frames=(8, 8))


def test_report_matches_individual_calls_and_isolates_parts():
    rng = np.random.default_rng(2)
    gt = rng.normal(size=(50, N_LANDMARKS, 2)) * 10
    pred = gt.copy()
    face = group_landmarks("face")
    pred[:, face] += 2.0
    last = gt[0]
    rep = report(pred, gt, last)
    assert rep.mpjpe == pytest.approx(mpjpe(pred, gt))
    assert rep.st == pytest.approx(mpjpe(pred, gt, frames=(1, 10)))
    assert rep.div_lt == pytest.approx(divergence(pred, last, frames=(26, 50)))
    assert rep.mpjpe_face == pytest.approx(2 * math.sqrt(2))
    assert rep.mpjpe_hands == 0.0 and rep.mpjpe_body == 0.0


def test_sum_decomposition_identity():
    rng = np.random.default_rng(3)
    p, g = rng.normal(size=(2, 50, 6, 2))
    full = mpjpe(p, g)
    parts = 10 * mpjpe(p, g, frames=(1, 10)) + 15 * mpjpe(p, g, frames=(11, 25)) + 25 * mpjpe(p, g, frames=(26, 50))
    assert 50 * full == pytest.approx(parts, rel=1e-12)


def test_translation_invariance():
    rng = np.random.default_rng(4)
    p, g = rng.normal(size=(2, 12, 5, 2))
    shift = np.array([13.0, -7.5])
    assert mpjpe(p + shift, g + shift) == pytest.approx(mpjpe(p, g), rel=1e-12)
    assert divergence(p + shift, g[0] + shift) == pytest.approx(divergence(p, g[0]), rel=1e-12)


def test_aggregate_is_count_weighted():
    rng = np.random.default_rng(5)
    reps, tot, cnt = [], 0.0, 0
    for i in range(4):
        p, g = rng.normal(size=(2, 50, N_LANDMARKS, 2))
        valid = rng.random((50, N_LANDMARKS)) > 0.3
        reps.append(report(p, g, g[0], valid))
        tot += np.linalg.norm(p - g, axis=-1)[valid].sum()
        cnt += valid.sum()
    assert aggregate(reps).mpjpe == pytest.approx(tot / cnt, rel=1e-12)


def test_csv_layout(tmp_path):
    assert csv_header()[:10] == ["model", "mpjpe", "st", "mt", "lt", "fde", "div", "div_st", "div_mt", "div_lt"]
    assert "st_face" in csv_header() and "div_lt_hands" in csv_header()
    pred, gt = drift_case()
    path = tmp_path / "m.csv"
    write_csv(path, [("zv", report(pred, gt, gt[0] * 0))])
    head, row = path.read_text().splitlines()
    assert row.split(",")[:3] == ["zv", "25.5", "5.5"]
    assert len(row.split(",")) == len(head.split(","))


def test_empty_report_row_is_nan():
    assert all(math.isnan(v) for v in MetricsReport().as_row().values())


@settings(max_examples=100, deadline=None, derandomize=True)
@given(st.integers(1, 10), st.integers(1, 5), st.integers(0, 2**31 - 1))
def test_metrics_match_brute_force(H, L, seed):
    rng = np.random.default_rng(seed)
    pred, gt = rng.normal(size=(2, H, L, 2)) * 5
    last = rng.normal(size=(L, 2))
    valid = rng.random((H, L)) > 0.25
    a = int(rng.integers(1, H + 1))
    b = int(rng.integers(a, H + 1))
    for fn, oracle, args in (
        (lambda: mpjpe(pred, gt, valid, (a, b)), mpjpe_loop, (pred, gt, valid, a, b)),
        (lambda: fde(pred, gt, valid), mpjpe_loop, (pred, gt, valid, H, H)),
        (lambda: divergence(pred, last, valid, (a, b)), divergence_loop, (pred, last, valid, a, b)),
    ):
        ref = oracle(*(x.tolist() if isinstance(x, np.ndarray) else x for x in args))
        if ref is None:
            with pytest.raises(NoDataError):
                fn()
        else:
            assert abs(fn() - ref) <= 1e-9
