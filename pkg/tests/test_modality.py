import numpy as np
import pytest

from cmtc.modality import (
    CmsBlock,
    Encoder,
    ModalityCollaboration,
    cmf_fuse,
    cmf_weight,
    cms,
    diff_modality,
    encode,
)
from cmtc.tensor import Conv2d, ShapeError, Tensor, ops
from cmtc.tensor.gradcheck import check_gradients


def T(rng, *shape, grad=False):
    return Tensor(rng.standard_normal(shape), requires_grad=grad)


def swapped_state(state, pairs):
    """Rename parameters so every event-side entry takes its auxiliary twin's value."""
    out = {}
    for name, value in state.items():
        new = name
        for a, b in pairs:
            if f".{a}." in f".{name}":
                new = f".{name}".replace(f".{a}.", f".{b}.")[1:]
            elif f".{b}." in f".{name}":
                new = f".{name}".replace(f".{b}.", f".{a}.")[1:]
        out[new] = value
    return out


MC_PAIRS = [("k_e", "k_a"), ("v_e", "v_a"), ("weight_e", "weight_a"), ("channel_e", "channel_a"),
            ("spatial_e", "spatial_a")]


# -- encoder ------------------------------------------------------------------

def test_encode_default_shapes(rng):
    enc = Encoder(rng=0)
    e, a = encode(Tensor(rng.random((8, 2, 64, 32))), Tensor(rng.random((8, 1, 64, 32))), enc)
    assert e.shape == a.shape == (8, 64, 8, 4)


def test_encode_zero_input_is_bias_response():
    enc = Encoder(channels=(4, 6, 8), rng=1)
    for conv in enc.event.convs + enc.aux.convs:
        conv.bias.data[:] = np.linspace(-1, 1, conv.bias.size)
    e, a = enc(Tensor(np.zeros((2, 2, 32, 16))), Tensor(np.zeros((2, 1, 32, 16))))
    for f in (e.data, a.data):
        assert np.ptp(f, axis=(2, 3)).max() < 1e-12
        assert np.ptp(f[:, :, 0, 0], axis=0).max() == 0
        assert np.abs(f).max() > 0


def test_encode_gradients_reach_both_branches(rng):
    enc = Encoder(channels=(4, 6, 8), rng=2)
    e, a = enc(Tensor(rng.random((2, 2, 16, 8))), Tensor(rng.random((2, 1, 16, 8))))
    ops.sum(e * e + a).backward(enc.parameters())
    for branch in (enc.event, enc.aux):
        assert sum(np.linalg.norm(p.grad) for p in branch.parameters()) > 0


def test_encode_rejects_mismatched_aux(rng):
    enc = Encoder(channels=(4, 6, 8), rng=0)
    with pytest.raises(ShapeError):
        enc(Tensor(rng.random((2, 2, 16, 8))), Tensor(rng.random((2, 1, 8, 8))))


# -- differential modality -------------------------------------------------------

def test_diff_modality_identities(rng):
    e, a = T(rng, 2, 3, 4, 2), T(rng, 2, 3, 4, 2)
    assert not diff_modality(e, e).data.any()
    np.testing.assert_array_equal(diff_modality(e, Tensor(np.zeros(e.shape))).data, e.data)
    np.testing.assert_allclose(diff_modality(e, a).data + a.data, e.data, atol=1e-12, rtol=0)
    np.testing.assert_array_equal(diff_modality(e, a).data, -diff_modality(a, e).data)
    with pytest.raises(ShapeError):
        diff_modality(e, T(rng, 2, 3, 4, 3))


# -- CMS ------------------------------------------------------------------------

def test_cms_zero_query_averages_values(rng):
    block = CmsBlock(5, rng=0)
    block.q.weight.data[:] = 0
    e, a = T(rng, 2, 5, 3, 2), T(rng, 2, 5, 3, 2)
    e_hat, a_hat, attn_e, attn_a = cms(e, a, diff_modality(e, a), block, return_attention=True)
    np.testing.assert_allclose(attn_e.data, 1 / 6, atol=1e-15)
    mean_v = block.v_e(e).data.mean(axis=(2, 3), keepdims=True)
    np.testing.assert_allclose(e_hat.data, np.broadcast_to(mean_v, e_hat.shape), atol=1e-12)


def test_cms_single_token_returns_value(rng):
    block = CmsBlock(3, rng=1)
    e, a = T(rng, 2, 3, 1, 1), T(rng, 2, 3, 1, 1)
    e_hat, a_hat = cms(e, a, diff_modality(e, a), block)
    np.testing.assert_allclose(e_hat.data, block.v_e(e).data, atol=1e-12)
    np.testing.assert_allclose(a_hat.data, block.v_a(a).data, atol=1e-12)


def test_cms_rows_stochastic(rng):
    block = CmsBlock(8, rng=2)
    for _ in range(20):
        e, a = T(rng, 2, 8, 4, 2), T(rng, 2, 8, 4, 2)
        _, _, attn_e, attn_a = cms(e, a, diff_modality(e, a), block, return_attention=True)
        for m in (attn_e.data, attn_a.data):
            assert np.abs(m.sum(-1) - 1).max() < 1e-6 and m.min() > 0


def test_cms_scaled_flag_changes_logits(rng):
    e, a = T(rng, 1, 4, 2, 2), T(rng, 1, 4, 2, 2)
    plain, scaled = CmsBlock(4, rng=3), CmsBlock(4, rng=3, scaled=True)
    d = diff_modality(e, a)
    assert not np.allclose(cms(e, a, d, plain)[0].data, cms(e, a, d, scaled)[0].data)


# -- CMF ------------------------------------------------------------------------

def test_cmf_weight_range_and_zero_conv(rng):
    head = Conv2d(8, 1, 3, padding=1, padding_mode="replicate", rng=0)
    for _ in range(100):
        w = cmf_weight(T(rng, 2, 4, 3, 2) * 3.0, T(rng, 2, 4, 3, 2) * 3.0, head)
        assert w.shape == (2, 1, 1, 1) and (w.data > 0).all() and (w.data < 1).all()
    head.weight.data[:] = 0
    assert np.all(cmf_weight(T(rng, 1, 4, 3, 2), T(rng, 1, 4, 3, 2), head).data == 0.5)


def test_cmf_weight_averages_after_sigmoid():
    # a 1x1 head that copies channel 0, fed a bimodal map of +4 / -2
    head = Conv2d(2, 1, 1, rng=0)
    head.weight.data[:] = [[[[1.0]], [[0.0]]]]
    z = np.array([4.0, -2.0, 4.0, -2.0]).reshape(1, 1, 2, 2)
    w = cmf_weight(Tensor(z), Tensor(np.zeros_like(z)), head).item()
    sig = lambda v: 1 / (1 + np.exp(-v))
    avg_of_sig = sig(z).mean()
    sig_of_avg = sig(z.mean())
    assert abs(avg_of_sig - sig_of_avg) > 0.1
    assert w == pytest.approx(avg_of_sig, abs=1e-15)


def test_cmf_weight_per_channel_shape(rng):
    mc = ModalityCollaboration(4, rng=0, per_channel=True)
    pair = mc(T(rng, 2, 4, 3, 2), T(rng, 2, 4, 3, 2), return_pair=True)
    assert pair.w_e.shape == (2, 4, 1, 1)


def test_fuse_channel_count_and_identity_limit(rng):
    c = 4
    mc = ModalityCollaboration(c, rng=1)
    cmf = mc.cmf
    # saturate every attention gate at exactly 1.0 in double precision
    for head in (cmf.channel_e, cmf.channel_a):
        head.fc2.weight.data[:] = 0
        head.fc2.bias.data[:] = 50.0
    for head in (cmf.spatial_e, cmf.spatial_a):
        head.conv.weight.data[:] = 0
        head.conv.bias.data[:] = 50.0
    e_hat, a_hat = T(rng, 2, c, 3, 2), T(rng, 2, c, 3, 2)
    ones = Tensor(np.ones((2, 1, 1, 1)))
    psi, (_, _, _, _, f_alpha, f_beta) = cmf_fuse(e_hat, a_hat, ones, ones, cmf)
    assert psi.shape == (2, 2 * c, 3, 2)
    np.testing.assert_array_equal(f_alpha.data, a_hat.data + e_hat.data)
    np.testing.assert_array_equal(psi.data[:, :c], f_alpha.data)
    np.testing.assert_array_equal(psi.data[:, c:], f_beta.data)


def test_mc_block_gradients_all_parameters(rng):
    mc = ModalityCollaboration(4, rng=2)
    e, a = T(rng, 2, 4, 3, 2, grad=True), T(rng, 2, 4, 3, 2, grad=True)
    r = T(rng, 2, 8, 3, 2)
    err = check_gradients(lambda: ops.sum(mc(e, a) * r), mc.parameters() + [e, a])
    assert err < 1e-3


def test_mc_swap_symmetry_is_exact(rng):
    c = 4
    mc = ModalityCollaboration(c, rng=3)
    twin = ModalityCollaboration(c, rng=99)
    twin.load_state_dict(swapped_state(mc.state_dict(), MC_PAIRS))
    e, a = T(rng, 2, c, 4, 2), T(rng, 2, c, 4, 2)
    p = mc(e, a, return_pair=True)
    q = twin(a, e, return_pair=True)
    np.testing.assert_array_equal(q.f_alpha.data, p.f_beta.data)
    np.testing.assert_array_equal(q.f_beta.data, p.f_alpha.data)
    np.testing.assert_array_equal(q.fused.data, np.concatenate([p.fused.data[:, c:], p.fused.data[:, :c]], 1))


def test_attention_scalars_in_unit_interval(rng):
    mc = ModalityCollaboration(4, rng=4)
    for _ in range(10):
        p = mc(T(rng, 2, 4, 3, 2) * 4, T(rng, 2, 4, 3, 2) * 4, return_pair=True)
        for w in (p.w_e.data, p.w_a.data):
            assert (w > 0).all() and (w < 1).all()
