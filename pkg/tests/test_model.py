import numpy as np
import pytest

from autovocoder import dsp
from autovocoder.autograd import Tensor, ops
from autovocoder.losses import LossWeights, generator_loss
from autovocoder.model import (DECODER_PLAN, ENCODER_PLAN, Autovocoder, BasicBlock, ModelConfig,
                               head_ratio_from_raw, head_ratio_stats)

SMALL = ModelConfig(stft=dsp.StftConfig(64, 16), representation_size=8)


@pytest.fixture(scope="module")
def full_model():
    return Autovocoder(ModelConfig()).eval()


def _zero_block(block):
    for conv in (block.conv1, block.conv2):
        conv.weight.data[:] = 0


def test_channel_plans():
    assert len(ENCODER_PLAN) == len(DECODER_PLAN) == 11
    assert ENCODER_PLAN[5] == (4, 1) and DECODER_PLAN[5] == (1, 4)
    assert DECODER_PLAN == tuple((b, a) for a, b in reversed(ENCODER_PLAN))


@pytest.mark.parametrize("kw", [dict(representation_size=0), dict(head="complex"),
                                dict(embedding_dropout=1.5), dict(encoder_plan=ENCODER_PLAN[:10]),
                                dict(decoder_plan=((1, 1),) * 4 + ((1, 2),) + ((4, 4),) * 6)])
def test_model_config_validation(kw):
    with pytest.raises(ValueError):
        ModelConfig(**kw)


@pytest.mark.parametrize("train", [True, False])
def test_residual_block_identity_when_conv_path_zeroed(train):
    b = BasicBlock(4, 4, np.random.default_rng(0)).train(train)
    _zero_block(b)
    x = Tensor(np.random.default_rng(1).standard_normal((2, 4, 9, 5)).astype(np.float32))
    np.testing.assert_array_equal(b(x).data, x.data)


def test_channel_changing_block_has_no_residual():
    b = BasicBlock(4, 1, np.random.default_rng(0))
    assert not b.residual
    _zero_block(b)
    x = Tensor(np.random.default_rng(1).standard_normal((2, 4, 9, 5)).astype(np.float32))
    out = b(x).data
    assert out.shape == (2, 1, 9, 5) and not out.any()


def test_block_shape_and_channel_errors():
    b = BasicBlock(4, 4, np.random.default_rng(0))
    assert b(Tensor(np.zeros((4, 4, 513, 20), np.float32))).shape == (4, 4, 513, 20)
    with pytest.raises(ValueError):
        b(Tensor(np.zeros((1, 3, 5, 5), np.float32)))


def test_encode_decode_shapes(full_model):
    x = np.random.default_rng(2).uniform(-0.5, 0.5, 22050).astype(np.float32)
    z = full_model.encode(x)
    assert z.shape == (87, 128) and np.isfinite(z).all()
    y = full_model.decode(z)
    assert y.shape == (22016,)
    assert full_model.decode(z, 22050).shape == (22050,)
    assert full_model.copy_synthesis(x).shape == x.shape


def test_zero_latent_gives_finite_waveform(full_model):
    y = full_model.decode(np.zeros((5, 128), np.float32))
    assert np.isfinite(y).all()


def test_latent_dim_mismatch(full_model):
    with pytest.raises(ValueError):
        full_model.decode(np.zeros((5, 64), np.float32))


def test_eval_is_deterministic():
    m = Autovocoder(SMALL).eval()
    x = np.random.default_rng(3).standard_normal((2, 320)).astype(np.float32)
    np.testing.assert_array_equal(m.encode(x), m.encode(x))
    z = m.encode(x)
    np.testing.assert_array_equal(m.decode(z, 320), m.decode(z, 320))


def test_same_seed_same_parameters():
    a, b = Autovocoder(SMALL), Autovocoder(SMALL)
    for (na, pa), (nb, pb) in zip(a.named_parameters(), b.named_parameters()):
        assert na == nb
        np.testing.assert_array_equal(pa.data, pb.data)


def test_latent_dim_fixed_and_frames_linear():
    m = Autovocoder(SMALL).eval()
    for n_hops in (4, 10, 25):
        z = m.encode(np.zeros(n_hops * 16, np.float32))
        assert z.shape == (n_hops + 1, 8)


def test_shape_round_trip():
    m = Autovocoder(SMALL).eval()
    for n in (160, 480, 800):
        x = np.random.default_rng(n).standard_normal(n).astype(np.float32)
        assert m.copy_synthesis(x).shape == (n,)


def test_train_mode_dropout_one_zeroes_latent():
    m = Autovocoder(ModelConfig(stft=SMALL.stft, representation_size=8, embedding_dropout=1.0)).train()
    z = m.encoder(Tensor(np.random.default_rng(4).standard_normal((1, 320)).astype(np.float32)))
    assert not z.data.any()


def test_train_mode_dropout_changes_latent_eval_does_not():
    m = Autovocoder(ModelConfig(stft=SMALL.stft, representation_size=8, embedding_dropout=0.5))
    x = Tensor(np.random.default_rng(5).standard_normal((1, 320)).astype(np.float32))
    m.train()
    a, b = m.encoder(x).data, m.encoder(x).data
    assert not np.array_equal(a, b)
    m.eval()
    np.testing.assert_array_equal(m.encoder(x).data, m.encoder(x).data)


@pytest.mark.parametrize("head", ["cartesian", "polar", "mean4"])
def test_every_parameter_receives_gradient(head):
    cfg = ModelConfig(stft=dsp.StftConfig(64, 16), representation_size=8, head=head)
    m = Autovocoder(cfg).train()
    x = Tensor(0.3 * np.random.default_rng(6).standard_normal((2, 640)).astype(np.float32))
    fb = dsp.mel_filterbank(8000, 64, 8)
    total, _ = generator_loss(x, m(x, 640), LossWeights(adv=0, fm=0), fb, cfg.stft)
    total.backward()
    dead = [n for n, p in m.named_parameters() if p.grad is None or not np.any(p.grad)]
    assert dead == []


def test_head_ratio_consistent_and_doubled():
    rng = np.random.default_rng(7)
    re, im = rng.standard_normal((2, 5, 6))
    mag, ph = np.hypot(re, im), np.arctan2(im, re)
    raw = np.stack([re, im, mag, ph])
    r = head_ratio_from_raw(raw)
    assert r["mean"] == pytest.approx(1.0) and r["std"] == pytest.approx(0.0, abs=1e-12)
    raw[2] *= 2
    assert head_ratio_from_raw(raw)["mean"] == pytest.approx(2.0)


def test_head_ratio_guards():
    r = head_ratio_from_raw(np.zeros((4, 3, 3)))
    assert r["count"] == 0
    m = Autovocoder(ModelConfig(stft=SMALL.stft, representation_size=8, head="mean4"))
    stats = head_ratio_stats(m, [np.random.default_rng(8).standard_normal(800).astype(np.float32)])
    assert np.isfinite(stats["mean"]) and np.isfinite(stats["std"])
    with pytest.raises(ValueError):
        head_ratio_stats(Autovocoder(SMALL), [np.zeros(320, np.float32)])


def test_tensor_input_stays_differentiable():
    m = Autovocoder(SMALL).train()
    x = Tensor(np.random.default_rng(9).standard_normal((1, 320)).astype(np.float32), requires_grad=True)
    ops.sum(ops.square(m(x, 320))).backward()
    assert x.grad is not None and np.isfinite(x.grad).all()
