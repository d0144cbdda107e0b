import struct
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gdnet import checkpoint
from gdnet.model import DCPM, FGDE, GGE, GDNet, ImageEncoder, ModelConfig, MultiHeadAttention, bin_centers
from gdnet.nn import Conv2d, upsample_bilinear
from gdnet.tensor import ShapeError, Tensor, no_grad

CFG = ModelConfig()


def inputs(rng, b=1, h=64):
    rgb = rng.uniform(0, 1, (b, h, h, 3))
    lq = rng.uniform(CFG.d_min, CFG.d_max, (b, h // 4, h // 4))
    return rgb, lq


def set_identity(attn: MultiHeadAttention):
    for lin in (attn.q, attn.k, attn.v, attn.o):
        lin.weight.data = np.eye(*lin.weight.shape)
        lin.bias.data[:] = 0.0


# -- attention ---------------------------------------------------------------

def test_single_token_self_attention_is_value_path():
    rng = np.random.default_rng(0)
    attn = MultiHeadAttention(rng, 8, 8, 4)
    x = Tensor(rng.standard_normal((2, 1, 8)))
    want = attn.o(attn.v(x)).data
    np.testing.assert_allclose(attn(x, x).data, want, atol=1e-12)


def test_identity_attention_single_token():
    rng = np.random.default_rng(1)
    attn = MultiHeadAttention(rng, 6, 6, 1)
    set_identity(attn)
    x = Tensor(rng.standard_normal((1, 1, 6)))
    np.testing.assert_allclose(attn(x, x).data, x.data, atol=1e-12)


def test_attention_rows_sum_to_one():
    rng = np.random.default_rng(2)
    attn = MultiHeadAttention(rng, 8, 12, 4)
    attn(Tensor(rng.standard_normal((2, 9, 8))), Tensor(rng.standard_normal((2, 5, 12))), keep_weights=True)
    assert attn.last_weights.shape == (2, 4, 9, 5)
    np.testing.assert_allclose(attn.last_weights.sum(-1), 1.0, atol=1e-12)


def test_cross_attention_single_key_reaches_every_query():
    rng = np.random.default_rng(3)
    attn = MultiHeadAttention(rng, 8, 4, 2)
    kv = Tensor(rng.standard_normal((1, 1, 4)))
    out = attn(Tensor(rng.standard_normal((1, 7, 8))), kv).data
    want = attn.o(attn.v(kv)).data
    np.testing.assert_allclose(out, np.broadcast_to(want, out.shape), atol=1e-12)


def test_cross_attention_zero_context_gives_zero():
    rng = np.random.default_rng(4)
    attn = MultiHeadAttention(rng, 8, 8, 4)
    out = attn(Tensor(rng.standard_normal((1, 5, 8))), Tensor(np.zeros((1, 3, 8))))
    assert np.all(out.data == 0)


def test_cross_attention_key_permutation_invariance():
    rng = np.random.default_rng(5)
    attn = MultiHeadAttention(rng, 8, 8, 4)
    q, kv = rng.standard_normal((1, 6, 8)), rng.standard_normal((1, 10, 8))
    perm = rng.permutation(10)
    a = attn(Tensor(q), Tensor(kv)).data
    b = attn(Tensor(q), Tensor(kv[:, perm])).data
    np.testing.assert_allclose(a, b, atol=1e-12)


def test_attention_errors():
    rng = np.random.default_rng(6)
    with pytest.raises(ValueError):
        MultiHeadAttention(rng, 6, 6, 4)
    attn = MultiHeadAttention(rng, 8, 8, 4)
    with pytest.raises(ShapeError):
        attn(Tensor(np.ones((1, 3, 8))), Tensor(np.ones((1, 3, 5))))
    with pytest.raises(ShapeError):
        attn(Tensor(np.ones((3, 8))), Tensor(np.ones((3, 8))))


# -- encoders ----------------------------------------------------------------

def test_image_encoder_shapes_and_divisibility():
    rng = np.random.default_rng(7)
    enc = ImageEncoder(rng, CFG.image_channels)
    pyr = enc(Tensor(rng.uniform(0, 1, (1, 64, 64, 3))))
    assert [p.shape for p in pyr] == [(1, 64, 64, 16), (1, 32, 32, 32), (1, 16, 16, 64)]
    with pytest.raises(ShapeError):
        enc(Tensor(np.ones((1, 6, 6, 3))))


def test_image_encoder_zero_input_zero_features():
    rng = np.random.default_rng(8)
    enc = ImageEncoder(rng, (4, 8))
    # 0.5 is mid-gray, which the encoder centers to exactly zero; biases start at zero
    pyr = enc(Tensor(np.full((1, 8, 8, 3), 0.5)))
    assert all(np.all(p.data == 0) for p in pyr)


def test_conv_matches_direct_loop():
    rng = np.random.default_rng(9)
    conv = Conv2d(rng, 2, 3, 3, stride=2)
    conv.bias.data = rng.standard_normal(3)
    x = rng.standard_normal((1, 6, 6, 2))
    w = conv.weight.data.reshape(3, 3, 2, 3)
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    want = np.zeros((1, 3, 3, 3))
    for i in range(3):
        for j in range(3):
            patch = xp[0, 2 * i : 2 * i + 3, 2 * j : 2 * j + 3]
            want[0, i, j] = np.einsum("abc,abco->o", patch, w) + conv.bias.data
    np.testing.assert_allclose(conv(Tensor(x)).data, want, atol=1e-12)


def test_upsample_bilinear_constant_and_identity():
    x = np.random.default_rng(10).standard_normal((1, 4, 4, 2))
    np.testing.assert_allclose(upsample_bilinear(Tensor(x), 4, 4).data, x, atol=1e-14)
    c = np.full((1, 3, 5, 1), 2.5)
    np.testing.assert_allclose(upsample_bilinear(Tensor(c), 12, 20).data, 2.5, atol=1e-14)


def test_dcpm_preserves_fine_shape():
    rng = np.random.default_rng(11)
    for n_sa, n_ca in ((1, 1), (2, 3)):
        block = DCPM(rng, 8, 16, n_sa, n_ca, 4)
        out = block(Tensor(rng.standard_normal((2, 8, 8, 8))), Tensor(rng.standard_normal((2, 4, 4, 16))))
        assert out.shape == (2, 8, 8, 8)
        assert len(block.sa) == n_sa and len(block.ca) == n_ca


def test_fgde_shape_and_dcpm_bypass():
    rng = np.random.default_rng(12)
    rgb = Tensor(rng.uniform(0, 1, (1, 64, 64, 3)))
    fgde = FGDE(np.random.default_rng(0), CFG)
    assert fgde(rgb).shape == (1, 64, 64, 16)
    bypass = FGDE(np.random.default_rng(0), replace(CFG, use_dcpm=False))
    np.testing.assert_array_equal(bypass(rgb).data, bypass.encoder(rgb)[0].data)
    const = FGDE(np.random.default_rng(0), replace(CFG, use_fgde=False))
    const.constant.data = rng.standard_normal(const.constant.shape)
    out = const(rgb).data
    assert out.shape == (1, 64, 64, 16) and np.all(out == const.constant.data)


def test_gge_rank_logged_and_bounded():
    rng = np.random.default_rng(13)
    gge = GGE(rng, CFG)
    out = gge(Tensor(rng.uniform(0.5, 10, (3, 16, 16))))
    assert out.shape == (3, 16, 16, CFG.gge_channels)
    assert len(gge.last_ranks) == 3 and all(1 <= r <= CFG.lowrank_dim for r in gge.last_ranks)


def test_gge_lowrank_dim_must_be_below_tokens():
    gge = GGE(np.random.default_rng(14), replace(CFG, lowrank_dim=16))
    with pytest.raises(ValueError):
        gge(Tensor(np.ones((1, 4, 4))))
    gge = GGE(np.random.default_rng(14), replace(CFG, lowrank_dim=16, use_lfr=False))
    assert gge(Tensor(np.ones((1, 4, 4)))).shape == (1, 4, 4, CFG.gge_channels)


# -- decoder and full model --------------------------------------------------

def test_bin_centers():
    w = np.array([[0.25, 0.25, 0.5]])
    np.testing.assert_allclose(bin_centers(Tensor(w), 0.0, 4.0).data, [[0.5, 1.5, 3.0]])


def test_default_model_shape_params_and_probabilities():
    rng = np.random.default_rng(15)
    model = GDNet(CFG, seed=0)
    assert model.num_parameters() < 2_000_000
    rgb, lq = inputs(rng)
    with no_grad():
        out = model(rgb, lq, keep=True)
    assert out.shape == (1, 64, 64)
    np.testing.assert_allclose(model.decoder.last_probs.sum(-1), 1.0, atol=1e-6)
    assert out.data.min() >= CFG.d_min and out.data.max() <= CFG.d_max


def test_uniform_logits_give_mean_center():
    rng = np.random.default_rng(16)
    model = GDNet(CFG, seed=1, dtype=np.float64)
    model.decoder.logits.weight.data[:] = 0.0
    rgb, lq = inputs(rng, b=2)
    with no_grad():
        out = model(rgb, lq, keep=True).data
    means = model.decoder.last_centers.mean(-1)
    np.testing.assert_allclose(out, np.broadcast_to(means[:, None, None], out.shape), atol=1e-12)


def test_all_zero_weights_give_mid_range():
    model = GDNet(CFG, seed=2, dtype=np.float64)
    for p in model.parameters():
        p.data[...] = 0.0
    rgb, lq = inputs(np.random.default_rng(17))
    with no_grad():
        out = model(rgb, lq).data
    np.testing.assert_allclose(out, (CFG.d_min + CFG.d_max) / 2, atol=1e-12)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**31), st.floats(0.1, 50.0))
def test_output_range_for_arbitrary_weights(seed, gain):
    cfg = ModelConfig(image_channels=(4, 8), depth_channels=8, gge_channels=8, bridge_channels=4,
                      fusion_channels=8, lowrank_dim=4, bins=8)
    rng = np.random.default_rng(seed)
    model = GDNet(cfg, seed=seed, dtype=np.float64)
    for p in model.parameters():
        p.data = gain * rng.standard_normal(p.shape)
    rgb = rng.uniform(0, 1, (1, 16, 16, 3))
    lq = rng.uniform(0.5, 10, (1, 4, 4))
    with no_grad():
        out = model(rgb, lq).data
    assert out.min() >= cfg.d_min - 1e-9 and out.max() <= cfg.d_max + 1e-9


@pytest.mark.parametrize("switch", ["use_fgde", "use_dcpm", "use_gge", "use_lfr"])
def test_ablation_switches_keep_shape(switch):
    model = GDNet(replace(CFG, **{switch: False}), seed=3)
    with no_grad():
        out = model(*inputs(np.random.default_rng(18)))
    assert out.shape == (1, 64, 64)


def test_model_determinism_and_input_checks():
    rgb, lq = inputs(np.random.default_rng(19))
    with no_grad():
        a = GDNet(CFG, seed=4)(rgb, lq).data
        b = GDNet(CFG, seed=4)(rgb, lq).data
    assert np.array_equal(a, b)
    with pytest.raises(ShapeError):
        GDNet(CFG)(rgb, lq[:, :8, :8])


def test_config_validation():
    for bad in ({"n_sa": 0}, {"n_ca": 0}, {"bins": 1}, {"d_min": 0.0}, {"inverse_mode": "lu"}, {"heads": 3}):
        with pytest.raises(ValueError):
            replace(CFG, **bad)
    with pytest.raises(ValueError):
        ModelConfig.from_dict({"bogus": 1})
    import json
    assert ModelConfig.from_dict(json.loads(CFG.to_json())) == CFG


# -- checkpoint --------------------------------------------------------------

def test_checkpoint_round_trip(tmp_path):
    model = GDNet(CFG, seed=5)
    path = tmp_path / "m.ckpt"
    checkpoint.save_checkpoint(path, {"model": CFG.to_json()}, checkpoint.state_dict(model))
    config, tensors = checkpoint.load_checkpoint(path)
    assert config == {"model": CFG.to_json()}
    other = GDNet(CFG, seed=6)
    checkpoint.load_state_dict(other, tensors)
    for (na, pa), (nb, pb) in zip(model.named_parameters(), other.named_parameters()):
        assert na == nb and np.array_equal(pa.data, pb.data)


def test_checkpoint_byte_layout(tmp_path):
    path = tmp_path / "t.ckpt"
    checkpoint.save_checkpoint(path, {"a": 1}, {"w": np.arange(6, dtype=np.float32).reshape(2, 3)})
    raw = path.read_bytes()
    assert raw[:8] == b"GDNETCK\0"
    version, clen = struct.unpack_from("<II", raw, 8)
    assert version == 1 and raw[16 : 16 + clen] == b'{"a": 1}'
    off = 16 + clen
    (count,) = struct.unpack_from("<I", raw, off)
    (nlen,) = struct.unpack_from("<H", raw, off + 4)
    assert count == 1 and raw[off + 6 : off + 6 + nlen] == b"w"
    off += 6 + nlen
    assert raw[off] == 2 and struct.unpack_from("<II", raw, off + 1) == (2, 3)
    assert np.frombuffer(raw[off + 9 :], "<f4").tolist() == [0, 1, 2, 3, 4, 5]


def test_checkpoint_errors(tmp_path):
    path = tmp_path / "t.ckpt"
    checkpoint.save_checkpoint(path, {}, {"w": np.ones(3, np.float32)})
    raw = path.read_bytes()
    for broken in (raw[:-2], raw + b"\0", b"NOTACKPT" + raw[8:]):
        path.write_bytes(broken)
        with pytest.raises(checkpoint.CheckpointError):
            checkpoint.load_checkpoint(path)
    model = GDNet(CFG)
    tensors = checkpoint.state_dict(model)
    with pytest.raises(checkpoint.CheckpointError):
        checkpoint.load_state_dict(model, {k: v for k, v in list(tensors.items())[1:]})
    name = next(iter(tensors))
    with pytest.raises(checkpoint.CheckpointError):
        checkpoint.load_state_dict(model, {**tensors, name: np.ones((1, 1), np.float32)})
