import dataclasses

import numpy as np
import pytest

from behavior_forecast.diffcore import grad_check
from behavior_forecast.diffcore.tensor import Tensor
from behavior_forecast.models import (ARCHS, ModelConfig, Window, attention_profile, build_model, learned_adjacency,
                                      make_batch, mixprop)
from behavior_forecast.models.transformer import TemporalEncoder
from conftest import TINY, random_arrays
from gradcases import MODEL_EPS, model_case, zero_head_mismatch

DYADIC = [a for a in ARCHS if a != "stgnn"]


def _batch(rng, n=2, obs_len=100, partner=False):
    wins = [Window(random_arrays(rng, obs_len), random_arrays(rng, obs_len) if partner else None) for _ in range(n)]
    return make_batch(wins, obs_len)


def _model(arch, **kw):
    return build_model(ModelConfig(arch=arch, **dict(TINY, **kw)))


@pytest.mark.parametrize("arch", ARCHS)
def test_output_shape(arch, rng):
    m = _model(arch)
    out = m.predict(_batch(rng), 4)
    assert out.shape == (2, 4, 78, 2)
    assert np.all(np.isfinite(out))


@pytest.mark.parametrize("arch", DYADIC)
@pytest.mark.parametrize("fusion", ["early", "late", "interactive"])
def test_dyadic_output_shape(arch, fusion, rng):
    m = _model(arch, fusion=fusion)
    own, partner = m.predict(_batch(rng, partner=True), 3)
    assert own.shape == partner.shape == (2, 3, 78, 2)


@pytest.mark.parametrize("arch", DYADIC)
@pytest.mark.parametrize("fusion", ["early", "late", "interactive"])
def test_dyadic_swap_symmetry(arch, fusion, rng):
    """Swapping the two participants swaps the two predictions."""
    m = _model(arch, fusion=fusion)
    a, b = random_arrays(rng, 100), random_arrays(rng, 100)
    own, partner = m.predict(make_batch([Window(a, b)], 100), 2)
    own2, partner2 = m.predict(make_batch([Window(b, a)], 100), 2)
    np.testing.assert_allclose(own, partner2, atol=1e-12)
    np.testing.assert_allclose(partner, own2, atol=1e-12)


def test_dyadic_model_needs_partner(rng):
    with pytest.raises(ValueError):
        _model("seq2seq-gru", fusion="late").predict(_batch(rng), 2)


@pytest.mark.parametrize("arch", ARCHS)
def test_zero_head_rollout_is_zero_velocity(arch):
    assert zero_head_mismatch(arch) == 0.0


@pytest.mark.parametrize("arch", ["seq2seq-gru", "tcn-lstm", "transformer-t"])
def test_zero_head_dyadic(arch):
    assert zero_head_mismatch(arch, fusion="late") == 0.0


@pytest.mark.parametrize("arch", ARCHS)
def test_model_gradients(arch):
    tol = 1e-3 if arch.startswith("transformer") else 1e-4
    m, loss = model_case(arch)
    assert grad_check(loss, list(m.parameters().values()), eps=MODEL_EPS, max_coords=3) < tol


@pytest.mark.parametrize("fusion", ["early", "late", "interactive"])
def test_fused_model_gradients(fusion):
    m, loss = model_case("seq2seq-gru", fusion)
    assert grad_check(loss, list(m.parameters().values()), eps=MODEL_EPS, max_coords=3) < 1e-4


def test_every_parameter_gets_gradient():
    for arch in ARCHS:
        m, loss = model_case(arch)
        m.zero_grad()
        loss().backward()
        missing = [k for k, p in m.parameters().items() if p.grad is None or not np.any(p.grad)]
        assert not missing, (arch, missing)


# -- TCN -------------------------------------------------------------------------

def test_tcn_receptive_field_and_length(rng):
    m = _model("tcn-gru")
    assert m.config.receptive_field == 100
    ctx = m.context(m.encoder_sequence(_batch(rng), []))
    assert ctx.shape == (2, 1, TINY["tcn_channels"])


def test_tcn_rejects_short_window(rng):
    m = _model("tcn-gru", obs_len=50)
    with pytest.raises(ValueError):
        m.predict(_batch(rng, obs_len=50), 1)


def test_tcn_first_and_last_frames_matter(rng):
    m = _model("tcn-gru")
    m.eval()
    b = _batch(rng, n=1)
    base = m.context(m.encoder_sequence(b, [])).data
    for t in (0, 99):
        feats = b.feats.copy()
        feats[0, t] += 1.0
        b2 = dataclasses.replace(b, feats=feats)
        assert np.any(m.context(m.encoder_sequence(b2, [])).data != base)


# -- transformers ----------------------------------------------------------------

@pytest.mark.parametrize("arch", ["transformer-t", "transformer-st"])
def test_attention_rows_are_distributions(arch, rng):
    m = _model(arch)
    m.predict(_batch(rng), 1)
    for w in m.attention_maps:
        assert w.shape == (2, TINY["heads"], 100, 100)
        assert np.max(np.abs(w.sum(axis=-1) - 1)) < 1e-12
    prof = attention_profile(m, _batch(rng))
    assert prof.shape == (2, 100)
    np.testing.assert_allclose(prof.sum(axis=1), 1.0)


def test_uniform_attention_gives_flat_profile(rng):
    m = _model("transformer-t")
    for blk in m.temporal.blocks:
        blk.attn.k.W.data[:] = 0
        blk.attn.k.b.data[:] = 0
    prof = attention_profile(m, _batch(rng))
    np.testing.assert_allclose(prof, 1 / 100)


def test_single_frame_profile(rng):
    m = _model("transformer-t", obs_len=1)
    np.testing.assert_allclose(attention_profile(m, _batch(rng, obs_len=1)), [[1.0], [1.0]])


def test_attention_profile_needs_transformer(rng):
    with pytest.raises(TypeError):
        attention_profile(_model("seq2seq-gru"), _batch(rng))


def test_temporal_encoder_checks_length():
    enc = TemporalEncoder(4, 5, 1, 2, 2, np.random.default_rng(0))
    with pytest.raises(ValueError):
        enc(Tensor(np.zeros((1, 6, 4))), 0.0, None)


# -- STGNN -----------------------------------------------------------------------

def test_adjacency_row_normalized():
    E = np.random.default_rng(0).normal(size=(78, 5))
    A = learned_adjacency(Tensor(E)).data
    assert A.shape == (78, 78)
    assert np.all(A >= 0)
    np.testing.assert_allclose(A.sum(axis=1), 1.0)


def test_mixprop_depths():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(2, 5, 3, 4))
    A = rng.random((5, 5))
    A /= A.sum(axis=1, keepdims=True)
    out = mixprop(Tensor(x), Tensor(A), 3, 0.05).data
    assert out.shape == (2, 5, 3, 16)
    h = x
    np.testing.assert_allclose(out[..., :4], x)
    for k in range(1, 4):
        h = 0.05 * x + 0.95 * np.einsum("nm,bmtc->bntc", A, h)
        np.testing.assert_allclose(out[..., 4 * k:4 * k + 4], h, atol=1e-12)


def test_stgnn_horizon_limit(rng):
    m = _model("stgnn", train_horizon=10)
    assert m.predict(_batch(rng), 10).shape == (2, 10, 78, 2)
    with pytest.raises(ValueError):
        m.predict(_batch(rng), 11)


def test_stgnn_short_window_is_padded(rng):
    m = _model("stgnn", obs_len=5)
    assert m.n_frames == m.stgnn_receptive_field == 31
    assert m.predict(_batch(rng, obs_len=5), 3).shape == (2, 3, 78, 2)


def test_stgnn_rejects_fusion():
    with pytest.raises(ValueError):
        _model("stgnn", fusion="late")


# -- config and persistence ------------------------------------------------------

def test_family_defaults():
    c = ModelConfig(arch="transformer-st")
    assert (c.batch_size, c.dropout) == (32, 0.25)
    assert ModelConfig(arch="seq2seq-lstm").head_widths == (1024,)
    assert ModelConfig.from_dict(c.to_dict()) == c
    with pytest.raises(ValueError):
        ModelConfig(arch="rnn")
    with pytest.raises(ValueError):
        ModelConfig.from_dict({"arch": "stgnn", "colour": 1})


def test_state_dict_roundtrip(rng):
    a, b = _model("tcn-gru", seed=1), _model("tcn-gru", seed=2)
    batch = _batch(rng)
    assert not np.allclose(a.predict(batch, 2), b.predict(batch, 2))
    b.load_state_dict(a.state_dict())
    np.testing.assert_array_equal(a.predict(batch, 2), b.predict(batch, 2))


def test_masked_part_is_ignored(rng):
    m = _model("seq2seq-gru", masked_parts=("hands",))
    b = _batch(rng, n=1)
    before = m.predict(b, 2)
    feats = b.feats.copy()
    hand_slots = np.nonzero(m.input_mask == 0)[0]
    assert hand_slots.size
    feats[..., hand_slots] += 5.0
    b.feats = feats
    np.testing.assert_array_equal(m.predict(b, 2), before)
