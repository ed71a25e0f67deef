import numpy as np
import pytest
from scipy import ndimage

from cmtc.data import prepare_clips
from cmtc.eventnet import (
    EventNetModel,
    PerceptualExtractor,
    TrainingDiverged,
    contour_target,
    eventnet_forward,
    eventnet_loss,
    pretrain_eventnet,
)
from cmtc.events import SynthConfig, synth_dataset
from cmtc.tensor import Adam, Tensor, load_checkpoint, ops
from cmtc.tensor.gradcheck import check_gradients


@pytest.fixture(scope="module")
def small_arrays():
    clips = synth_dataset(SynthConfig(num_ids=2, num_cams=2, clips_per_id_cam=1, seed=0))
    return prepare_clips(clips, dtype=np.float64)


def scipy_contour(mask):
    m = np.pad(mask.astype(bool), 1)
    cross = ndimage.generate_binary_structure(2, 1)
    # a pixel is on the boundary when its 4-neighbourhood is not uniform
    edge = ndimage.binary_dilation(m, cross) & ~ndimage.binary_erosion(m, cross)
    edge = edge[1:-1, 1:-1]
    return ndimage.binary_dilation(edge, np.ones((3, 3), bool)).astype(np.float32)[None]


def test_forward_shape_and_range(rng):
    model = EventNetModel(rng=0)
    out = eventnet_forward(model, Tensor(rng.random((8, 2, 64, 32))))
    assert out.shape == (8, 1, 64, 32)
    assert out.data.min() > 0 and out.data.max() < 1


def test_zero_input_gives_constant_output():
    out = EventNetModel(rng=3)(Tensor(np.zeros((2, 2, 64, 32)))).data
    assert np.ptp(out) < 1e-12


def test_indivisible_input_rejected(rng):
    with pytest.raises(ValueError, match="multiple of 8"):
        EventNetModel(rng=0)(Tensor(rng.random((1, 2, 60, 32))))


def test_probe_weight_gradient(rng):
    model = EventNetModel(channels=(4, 6, 8), rng=1)
    x = Tensor(rng.random((2, 2, 16, 8)))
    target = Tensor((rng.random((2, 1, 16, 8)) > 0.7).astype(float))
    probes = [model.down[0].weight, model.up[1].weight, model.head.bias]
    err = check_gradients(lambda: ops.mse(model(x), target), probes, max_probes=12, rng=rng)
    assert err < 1e-3


def test_contour_target_cases():
    assert not contour_target(np.zeros((6, 5))).any()
    sq = np.zeros((8, 8), int)
    sq[2:6, 2:6] = 1
    got = contour_target(sq)
    np.testing.assert_array_equal(got, scipy_contour(sq))
    # inner and outer rings, grown by one pixel, reach everything but the far corners
    assert got.shape == (1, 8, 8) and got.sum() == 60
    assert not got[0, [0, 0, 7, 7], [0, 7, 0, 7]].any()
    full = np.ones((10, 7), int)
    got_full = contour_target(full)
    np.testing.assert_array_equal(got_full, scipy_contour(full))
    assert got_full[0, 0].all() and got_full[0, :, 0].all() and not got_full[0, 3:7, 3].any()


def test_contour_target_matches_morphology_on_random_masks(rng):
    for _ in range(20):
        m = ndimage.binary_opening(rng.random((24, 16)) > 0.45).astype(int)
        np.testing.assert_array_equal(contour_target(m), scipy_contour(m))


def test_contour_target_rejects_non_binary():
    with pytest.raises(ValueError):
        contour_target(np.full((4, 4), 0.5))


def test_loss_zero_at_equality_and_plain_mse(rng):
    ext = PerceptualExtractor()
    a = Tensor(rng.random((2, 1, 16, 8)))
    assert float(eventnet_loss(a, a, ext).data) == 0.0
    b = Tensor(rng.random((2, 1, 16, 8)))
    plain = float(eventnet_loss(a, b, ext, lambda_p=0.0).data)
    assert plain == pytest.approx(np.mean((a.data - b.data) ** 2), rel=1e-12)
    assert float(eventnet_loss(a, b, ext, lambda_p=0.1).data) > plain
    with pytest.raises(ValueError):
        eventnet_loss(a, Tensor(np.zeros((2, 1, 8, 8))), ext)


def _overfit(arrays, lr, steps=50, seed=0):
    model = EventNetModel(rng=seed)
    opt = Adam(model.parameters(), lr=lr)
    ext = PerceptualExtractor()
    x = Tensor(arrays.frames[0])
    y = Tensor(arrays.targets[0])
    losses = []
    for _ in range(steps):
        opt.zero_grad()
        loss = eventnet_loss(model(x), y, ext)
        loss.backward(model.parameters())
        opt.step()
        losses.append(float(loss.data))
    return losses


def test_overfit_single_batch_is_monotone(small_arrays):
    losses = _overfit(small_arrays, lr=3e-4)
    assert all(b < a for a, b in zip(losses, losses[1:]))


def test_pretrain_one_epoch_checkpoint_and_determinism(small_arrays, tmp_path):
    def run(out):
        model = EventNetModel(rng=5)
        hist = pretrain_eventnet(model, small_arrays.frames, small_arrays.targets, 1,
                                 Adam(model.parameters(), lr=1e-3), batch_size=2, seed=1, checkpoint_dir=out)
        return model, hist

    model, hist = run(tmp_path / "a")
    _, hist2 = run(tmp_path / "b")
    assert sorted(p.name for p in (tmp_path / "a").glob("*.ckpt")) == ["eventnet_epoch001.ckpt"]
    assert hist == hist2
    assert (tmp_path / "a" / "eventnet_history.csv").read_text() == (tmp_path / "b" / "eventnet_history.csv").read_text()
    state = load_checkpoint(tmp_path / "a" / "eventnet_epoch001.ckpt")
    assert all(np.array_equal(state[k], v) for k, v in model.state_dict().items())


def test_pretrain_reduces_loss_and_keeps_extractor_frozen(small_arrays):
    model = EventNetModel(rng=2)
    ext = PerceptualExtractor()
    before = ext.checksum()
    hist = pretrain_eventnet(model, small_arrays.frames, small_arrays.targets, 6,
                             Adam(model.parameters(), lr=1.5e-3), extractor=ext, batch_size=2, seed=0)
    assert hist[-1]["total"] < hist[0]["total"]
    assert ext.checksum() == before


def test_pretrain_aborts_on_nan(small_arrays):
    frames = small_arrays.frames.copy()
    frames[0, 0, 0, 0, 0] = np.nan
    model = EventNetModel(rng=0)
    with pytest.raises(TrainingDiverged) as exc:
        pretrain_eventnet(model, frames, small_arrays.targets, 1, Adam(model.parameters()), batch_size=4)
    assert exc.value.step == 1
