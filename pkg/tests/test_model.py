import dataclasses

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from avdit import tensor as tn
from avdit.diffusion import ConfigError
from avdit.model import (AVDiT, Attention, IntegrityError, ModelConfig, ParamEntry, ParamRegistry,
                         TemporalAdapter, attention, build_model, modulate, patchify_array,
                         sinusoidal_time, unpatchify)
from avdit.nn import NEW, Init, LoRA, Parameter
from avdit.tensor import Tensor

TINY = ModelConfig(hidden=8, heads=2, depth=1, patch=2, frames=2, video_height=4, video_width=4,
                   video_channels=2, audio_time=4, audio_freq=2, audio_channels=2, ratio_temporal=2,
                   ratio_audio=2, ratio_fusion=2, mlp_ratio=4, freq_dim=16, backbone="random")


def _inputs(cfg, B, rng):
    z_v = rng.standard_normal((B,) + cfg.video_latent_shape).astype(np.float32)
    z_a = rng.standard_normal((B,) + cfg.audio_latent_shape).astype(np.float32)
    return z_v, z_a


def _tokens(cfg, B, rng):
    M, L, La, D = cfg.frames, cfg.video_tokens, cfg.audio_tokens, cfg.hidden
    x_v = Tensor(rng.standard_normal((B * M, L, D)).astype(np.float32))
    x_a = Tensor(rng.standard_normal((B, La, D)).astype(np.float32))
    c = Tensor(rng.standard_normal((B, D)).astype(np.float32))
    return x_v, x_a, c


# ---------------------------------------------------------------------------
# parameter accounting


def test_tiny_counts_match_hand_enumeration():
    reg = AVDiT(TINY, seed=0).registry()
    assert reg.counts() == {"trainable": 1199, "frozen": 1664, "total": 2863}
    b = reg.breakdown()
    assert b["backbone.weight"] == {"trainable": 0, "frozen": 1664}
    assert b["backbone.bias"] == {"trainable": 176, "frozen": 0}
    assert b["audio_embed"]["trainable"] == 72
    assert b["audio_head"]["trainable"] == 144
    assert b["temporal"]["trainable"] == 217
    assert b["audio_lora"]["trainable"] == 256
    assert b["audio_adapter"]["trainable"] == 76
    assert b["fusion"]["trainable"] == 258


def test_temporal_attention_width():
    cfg = dataclasses.replace(TINY, hidden=4, ratio_temporal=2, heads=2, ratio_audio=1, ratio_fusion=1)
    ad = TemporalAdapter(Init(0), cfg, "t")
    sizes = {n: int(np.prod(p.shape)) for n, p in ad.named_parameters()}
    assert sum(v for n, v in sizes.items() if n.startswith("attn.")) == 60
    assert sizes["gate"] == 1


def test_meta_build_counts_equal_real_build():
    assert AVDiT(TINY, meta=True).registry().counts() == AVDiT(TINY).registry().counts()


def test_cross_fusion_has_more_trainable_params():
    cross = AVDiT(dataclasses.replace(TINY, fusion_mode="cross"), meta=True).registry().counts()
    self_ = AVDiT(TINY, meta=True).registry().counts()
    assert cross["trainable"] > self_["trainable"]
    assert cross["frozen"] == self_["frozen"]


def test_ablation_flags_remove_their_parameters():
    base = AVDiT(TINY, meta=True).registry().breakdown()
    no_t = AVDiT(dataclasses.replace(TINY, temporal_adapter=False), meta=True).registry().breakdown()
    assert "temporal" in base and "temporal" not in no_t
    no_fl = AVDiT(dataclasses.replace(TINY, fusion_lora=False), meta=True).registry().breakdown()
    assert no_fl["fusion"]["trainable"] == 2


def test_partition_rule():
    for e in AVDiT(TINY).registry():
        p = e.param
        assert (e.tag == "trainable") == (p.origin == NEW or p.is_bias), e.name


def test_registry_rejects_untagged_and_mistagged():
    plain = Tensor(np.zeros(3), requires_grad=True)
    with pytest.raises(IntegrityError):
        ParamRegistry([ParamEntry("stray", plain)])
    p = Parameter(np.zeros((2, 2)), "backbone")
    p.requires_grad = True
    with pytest.raises(IntegrityError, match="partition rule"):
        ParamRegistry([ParamEntry("w", p)])


def test_gradients_reach_only_trainable(rng):
    model = AVDiT(TINY, seed=1)
    for p in model.parameters():
        if p.origin == NEW and not p.is_bias and not np.any(p.data):
            p.data = rng.standard_normal(p.shape).astype(np.float32) * 0.1
    z_v, z_a = _inputs(TINY, 2, rng)
    o_v, o_a = model(z_v, z_a, np.array([10, 500]))
    tn.backward(tn.add(tn.mean(tn.mul(o_v, o_v)), tn.mean(tn.mul(o_a, o_a))))
    for e in model.registry():
        if e.tag == "frozen":
            assert e.param.grad is None, e.name
        else:
            assert e.param.grad is not None and np.all(np.isfinite(e.param.grad)), e.name


# ---------------------------------------------------------------------------
# small layers


def test_lora_delta_example():
    lora = LoRA(Init(0), 2, 2, 1, "x")
    lora.A.data = np.array([[1.0], [2.0]], dtype=np.float32)
    lora.B.data = np.array([[0.5, -1.0]], dtype=np.float32)
    out = lora(Tensor(np.array([[1.0, 1.0]], dtype=np.float32)))
    np.testing.assert_allclose(out.data, [[1.5, -3.0]])


def test_lora_starts_at_zero():
    lora = LoRA(Init(3), 8, 8, 4, "x")
    assert not np.any(lora.B.data) and np.any(lora.A.data)


def test_modulate_example():
    x = Tensor(np.array([[-1.0, 1.0]]))
    out = modulate(x, np.array([0.5]), np.array([0.0]), eps=0.0)
    np.testing.assert_allclose(out.data, [[-0.5, 1.5]])
    out = modulate(x, np.array([0.5]), np.array([1.0]), eps=0.0)
    np.testing.assert_allclose(out.data, [[-1.5, 2.5]])


def test_single_key_attention_returns_value(rng):
    q = Tensor(rng.standard_normal((3, 5, 4)))
    k = Tensor(rng.standard_normal((3, 1, 4)))
    v = Tensor(rng.standard_normal((3, 1, 6)))
    out = attention(q, k, v, heads=2)
    np.testing.assert_allclose(out.data, np.broadcast_to(v.data, (3, 5, 6)), atol=1e-12)


def test_attention_rejects_bad_head_split(rng):
    x = Tensor(rng.standard_normal((1, 2, 6)))
    with pytest.raises(ConfigError):
        attention(x, x, x, heads=4)


def test_patch_token_counts():
    assert ModelConfig(video_height=32, video_width=32, patch=2).video_tokens == 256
    assert ModelConfig(audio_time=40, audio_freq=16, patch=2).audio_tokens == 160


@given(st.integers(1, 3), st.sampled_from([1, 2, 4]), st.integers(1, 3), st.integers(1, 3), st.integers(1, 3))
def test_patchify_round_trip(n, p, gh, gw, c):
    z = np.random.default_rng(0).standard_normal((n, gh * p, gw * p, c))
    x = patchify_array(z, p)
    assert x.shape == (n, gh * gw, p * p * c)
    back = unpatchify(Tensor(x), p, gh * p, gw * p)
    np.testing.assert_array_equal(back.data, z)


def test_patchify_keeps_patches_contiguous():
    z = np.arange(16.0).reshape(1, 4, 4, 1)
    x = patchify_array(z, 2)
    np.testing.assert_array_equal(x[0, 0], [0, 1, 4, 5])
    np.testing.assert_array_equal(x[0, 3], [10, 11, 14, 15])


def test_timestep_encoding_at_zero():
    e = sinusoidal_time(np.array([0]), 8)[0]
    np.testing.assert_array_equal(e, [0, 1, 0, 1, 0, 1, 0, 1])


def test_timestep_encodings_distinct():
    e = sinusoidal_time(np.arange(1000), 256)
    assert len(np.unique(np.round(e, 9), axis=0)) == 1000


def test_config_validation():
    with pytest.raises(ConfigError):
        ModelConfig(hidden=10, heads=4)
    with pytest.raises(ConfigError):
        ModelConfig(video_height=7)
    with pytest.raises(ConfigError):
        ModelConfig(hidden=64, heads=4, ratio_temporal=32)
    with pytest.raises(ConfigError):
        ModelConfig(variance="learnt")
    with pytest.raises(ConfigError):
        ModelConfig(backbone="imagenet")
    with pytest.raises(ConfigError):
        build_model(dataclasses.replace(TINY, backbone="frames"))


# ---------------------------------------------------------------------------
# block behaviour


@pytest.mark.parametrize("seed", range(5))
def test_identity_at_init(seed):
    rng = np.random.default_rng(seed)
    cfg = dataclasses.replace(TINY, frames=int(rng.integers(1, 4)))
    model = AVDiT(cfg, seed=seed)
    B = int(rng.integers(1, 4))
    x_v, x_a, c = _tokens(cfg, B, rng)
    blk = model.blocks[0]
    got_v, got_a = blk(x_v, x_a, c, B)
    c_frames = Tensor(np.repeat(c.data, cfg.frames, axis=0))
    want_v = blk.dit(x_v, c_frames)
    want_a = blk.dit(x_a, c)
    assert np.max(np.abs(got_v.data - want_v.data)) <= 1e-6
    assert np.max(np.abs(got_a.data - want_a.data)) <= 1e-6


def test_audio_head_is_zero_at_init(rng):
    model = AVDiT(TINY, seed=0)
    z_v, z_a = _inputs(TINY, 2, rng)
    o_v, o_a = model(z_v, z_a, np.array([3, 4]))
    assert o_v.shape == (2,) + TINY.video_latent_shape[:3] + (2 * TINY.video_channels,)
    assert o_a.shape == (2,) + TINY.audio_latent_shape[:2] + (2 * TINY.audio_channels,)
    assert not np.any(o_a.data)


def test_video_output_matches_per_frame_backbone_at_init(rng):
    model = AVDiT(TINY, seed=2)
    z_v, z_a = _inputs(TINY, 2, rng)
    t = np.array([7, 900])
    o_v, _ = model(z_v, z_a, t)
    frames = z_v.reshape((-1,) + z_v.shape[2:])
    ref = model.backbone.forward_image(frames, np.repeat(t, TINY.frames))
    np.testing.assert_allclose(o_v.data.reshape(ref.shape), ref.data, atol=1e-5)


def test_temporal_adapter_mixes_only_across_frames(rng):
    cfg = dataclasses.replace(TINY, frames=3)
    ad = TemporalAdapter(Init(4), cfg, "t")
    ad.gate.data = np.ones(1, dtype=np.float32)
    B, M, L, D = 2, 3, cfg.video_tokens, cfg.hidden
    x = rng.standard_normal((B * M, L, D)).astype(np.float32)
    shift = Tensor(np.zeros((B, 1, D), dtype=np.float32))
    scale_ = Tensor(np.zeros((B, 1, D), dtype=np.float32))
    base = ad(Tensor(x), shift, scale_, B).data
    bumped = x.copy()
    bumped[1, 2] += rng.standard_normal(D).astype(np.float32)  # batch 0, frame 1, token 2
    diff = np.abs(ad(Tensor(bumped), shift, scale_, B).data - base).reshape(B, M, L, D).max(axis=-1)
    assert np.all(diff[0, :, 2] > 0)
    mask = np.ones_like(diff, dtype=bool)
    mask[0, :, 2] = False
    assert np.all(diff[mask] == 0)


def test_temporal_adapter_gate_zero_is_identity(rng):
    ad = TemporalAdapter(Init(4), TINY, "t")
    x = Tensor(rng.standard_normal((4, TINY.video_tokens, TINY.hidden)).astype(np.float32))
    z = Tensor(np.zeros((2, 1, TINY.hidden), dtype=np.float32))
    np.testing.assert_array_equal(ad(x, z, z, 2).data, x.data)


def _open_fusion(model):
    fu = model.blocks[0].fusion
    fu.gate_v.data = np.ones(1, dtype=np.float32)
    fu.gate_a.data = np.ones(1, dtype=np.float32)
    return fu


def test_fusion_refinement_is_shared_across_frames(rng):
    model = AVDiT(TINY, seed=5)
    fu = _open_fusion(model)
    B = 2
    x_v, x_a, _ = _tokens(TINY, B, rng)
    out_v, _ = fu(x_v, x_a, model.blocks[0].dit.attn, B)
    delta = (out_v.data - x_v.data).reshape(B, TINY.frames, TINY.video_tokens, TINY.hidden)
    np.testing.assert_allclose(delta[:, 0], delta[:, 1], atol=1e-6)


@pytest.mark.parametrize("mode", ["self", "cross"])
def test_fusion_carries_information_between_modalities(mode, rng):
    model = AVDiT(dataclasses.replace(TINY, fusion_mode=mode), seed=5)
    fu = _open_fusion(model)
    attn = model.blocks[0].dit.attn
    x_v, x_a, _ = _tokens(TINY, 1, rng)
    v0, a0 = fu(x_v, x_a, attn, 1)
    v1, _ = fu(x_v, Tensor(x_a.data + 1.0 * rng.standard_normal(x_a.shape).astype(np.float32)), attn, 1)
    _, a1 = fu(Tensor(x_v.data + rng.standard_normal(x_v.shape).astype(np.float32)), x_a, attn, 1)
    assert np.abs(v1.data - v0.data).max() > 1e-4
    assert np.abs(a1.data - a0.data).max() > 1e-4


def test_fusion_rejects_batch_mismatch(rng):
    model = AVDiT(TINY, seed=0)
    x_v, x_a, _ = _tokens(TINY, 2, rng)
    with pytest.raises(tn.ShapeError):
        model.blocks[0].fusion(x_v, Tensor(x_a.data[:1]), model.blocks[0].dit.attn, 2)


def test_same_seed_same_model(rng):
    a, b = AVDiT(TINY, seed=9), AVDiT(TINY, seed=9)
    for (na, pa), (nb, pb) in zip(a.named_parameters(), b.named_parameters()):
        assert na == nb
        np.testing.assert_array_equal(pa.data, pb.data)
    c = AVDiT(TINY, seed=10)
    assert any(not np.array_equal(p.data, q.data) for p, q in zip(a.parameters(), c.parameters()))


def test_astype_keeps_blocks_tied_to_backbone():
    m = AVDiT(TINY, seed=0).astype(np.float64)
    assert m.blocks[0].dit is m.backbone.blocks[0]
    assert all(p.dtype == np.float64 for p in m.parameters())


def test_blob_pretraining_reduces_denoising_loss():
    from avdit.pretrain import pretrain_backbone

    cfg = dataclasses.replace(TINY, backbone="blobs", pretrain_steps=300)
    res = pretrain_backbone(cfg, seed=0, batch=16)
    assert res.final_loss <= 0.5 * res.initial_loss


def test_attention_context_changes_keys_only(rng):
    att = Attention(Init(0), 8, 2, NEW, "a")
    x = Tensor(rng.standard_normal((1, 3, 8)))
    ctx = Tensor(rng.standard_normal((1, 5, 8)))
    assert att(x, context=ctx).shape == (1, 3, 8)


def test_temporal_permutation_round_trip():
    # with the attention replaced by the identity, each token must land back where it started
    from avdit.model import sincos_frames

    cfg = dataclasses.replace(TINY, frames=3)
    ad = TemporalAdapter(Init(0), cfg, "t")
    ad.gate.data = np.ones(1, dtype=np.float32)
    ad.attn = lambda h: h
    B, M, L, D = 2, 3, cfg.video_tokens, cfg.hidden
    tags = np.arange(B * M * L * D, dtype=np.float32).reshape(B * M, L, D)
    zero = Tensor(np.zeros((B, 1, D), dtype=np.float32))
    out = ad(Tensor(tags), zero, zero, B).data
    ln = tn.layer_norm(Tensor(tags), 1e-6).data
    pe = sincos_frames(D, M).astype(np.float32)
    want = tags + ln + np.tile(pe[:, None, :], (B, 1, 1))[:, :, :].reshape(B * M, 1, D)
    np.testing.assert_allclose(out, want, rtol=1e-6, atol=1e-4)
