import numpy as np
import pytest

from cmtc.events import (
    EventFormatError,
    EventRecord,
    EventStream,
    FrameStack,
    SynthConfig,
    event_counts,
    load_dataset,
    parse_events,
    protocol_split,
    resize_frames,
    save_dataset,
    synth_dataset,
    voxelize,
    write_events,
)
from cmtc.events.synth import identity_params


def random_stream(rng, n=10_000, width=32, height=64):
    return EventStream.from_arrays(
        width, height,
        rng.integers(0, 2**40, n), rng.integers(0, width, n), rng.integers(0, height, n),
        rng.choice([-1, 1], n))


# -- I/O ----------------------------------------------------------------------

def test_csv_line_maps_fields(tmp_path):
    p = tmp_path / "one.csv"
    p.write_text("t,x,y,p\n1000,3,2,1\n")
    s = parse_events(p, "csv", width=8, height=8)
    assert s[0] == EventRecord(t=1000, x=3, y=2, p=1)


@pytest.mark.parametrize("fmt", ["csv", "binary"])
def test_empty_stream_round_trip(tmp_path, fmt):
    p = tmp_path / f"e.{fmt}"
    write_events(EventStream(16, 12, np.empty(0)), p, fmt)
    s = parse_events(p, fmt)
    assert len(s) == 0 and (s.width, s.height) == (16, 12)
    if fmt == "binary":
        assert p.stat().st_size == 16
    else:
        assert p.read_text().splitlines()[-1] == "t,x,y,p"


def test_csv_header_only_without_size_comment(tmp_path):
    p = tmp_path / "h.csv"
    p.write_text("t,x,y,p\n")
    assert len(parse_events(p, "csv")) == 0


@pytest.mark.parametrize("fmt", ["csv", "binary"])
def test_single_record_round_trip(tmp_path, fmt):
    s = EventStream.from_arrays(4, 4, [7], [1], [3], [-1])
    p = tmp_path / f"s.{fmt}"
    write_events(s, p, fmt)
    assert parse_events(p, fmt).equals(s)


@pytest.mark.parametrize("fmt", ["csv", "binary"])
def test_round_trip_10000_random_records(tmp_path, rng, fmt):
    s = random_stream(rng)
    p = tmp_path / f"r.{fmt}"
    write_events(s, p, fmt)
    back = parse_events(p, fmt)
    assert back.equals(s)
    write_events(back, tmp_path / f"again.{fmt}", fmt)
    assert (tmp_path / f"again.{fmt}").read_bytes() == p.read_bytes()


def test_parse_sorts_stably(tmp_path):
    p = tmp_path / "u.csv"
    p.write_text("# width=8 height=8\nt,x,y,p\n5,1,1,1\n3,2,2,1\n5,0,0,-1\n3,4,4,-1\n")
    s = parse_events(p)
    assert [(r.t, r.x) for r in (s[i] for i in range(4))] == [(3, 2), (3, 4), (5, 1), (5, 0)]


def test_malformed_csv_reports_line_and_offset(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("t,x,y,p\n1,2,3,1\n4,five,6,1\n")
    with pytest.raises(EventFormatError) as exc:
        parse_events(p, "csv", width=8, height=8)
    assert exc.value.line == 3 and exc.value.offset == len("t,x,y,p\n1,2,3,1\n")


def test_out_of_range_coordinate_names_record(tmp_path):
    p = tmp_path / "oor.csv"
    p.write_text("# width=4 height=4\nt,x,y,p\n1,2,3,1\n2,9,1,1\n")
    with pytest.raises(EventFormatError, match="record 1"):
        parse_events(p)


def test_binary_truncated_and_bad_polarity(tmp_path, rng):
    s = random_stream(rng, 3)
    p = tmp_path / "t.evs"
    write_events(s, p, "binary")
    raw = p.read_bytes()
    p.write_bytes(raw[:-5])
    with pytest.raises(EventFormatError) as exc:
        parse_events(p, "binary")
    assert exc.value.offset == 16 + 32
    bad = bytearray(raw)
    bad[16 + 16 + 12] = 0  # polarity of record 1
    p.write_bytes(bytes(bad))
    with pytest.raises(EventFormatError, match="record 1"):
        parse_events(p, "binary")


# -- voxelization ---------------------------------------------------------------

def test_single_event_frame():
    # second event only stretches the stream over two windows
    s = EventStream.from_arrays(8, 6, [10, 1500], [3, 0], [2, 0], [1, -1])
    fs = voxelize(s, clip_len=2, t_window=1000, c_max=5)
    assert fs.frames[0, 0, 2, 3] == pytest.approx(0.2)
    others = fs.frames.copy()
    others[0, 0, 2, 3] = 0
    others[1, 1, 0, 0] = 0
    assert not others.any()


def test_clamp_at_c_max():
    s = EventStream.from_arrays(4, 4, list(range(7)) + [150], [1] * 7 + [0], [1] * 7 + [0], [1] * 8)
    fs = voxelize(s, clip_len=2, t_window=100, c_max=5)
    assert fs.frames[0, 0, 1, 1] == 1.0


def test_counts_conserved_before_clamp(rng):
    s = random_stream(rng, 5000)
    s = EventStream.from_arrays(32, 64, rng.integers(0, 9_000, 5000), s.records["x"], s.records["y"], s.records["p"])
    counts = event_counts(s, 8, 1000)
    in_range = int((s.records["t"] < 8000).sum())
    assert counts.sum() == in_range
    fs = voxelize(s, 8, 1000, c_max=5)
    assert fs.frames.min() >= 0 and fs.frames.max() <= 1


def test_voxelize_rejects_short_stream():
    s = EventStream.from_arrays(4, 4, [0, 100], [0, 0], [0, 0], [1, 1])
    with pytest.raises(ValueError, match="t_window"):
        voxelize(s, clip_len=8, t_window=1000)
    with pytest.raises(ValueError):
        voxelize(s, clip_len=1, t_window=10)


def test_resize_identity_constant_and_mean(rng):
    fs = FrameStack(rng.random((3, 2, 8, 4)).astype(np.float32), 10)
    assert resize_frames(fs, 8, 4) is fs
    const = FrameStack(np.full((2, 2, 6, 6), 0.4), 10)
    np.testing.assert_allclose(resize_frames(const, 13, 9).frames, 0.4, atol=1e-12)
    yy, xx = np.mgrid[0:64, 0:32] / np.array([63.0, 31.0])[:, None, None]
    smooth = (0.2 + 0.3 * yy + 0.4 * xx)[None, None].repeat(2, 1)
    fs = FrameStack(smooth, 10)
    back = resize_frames(resize_frames(fs, 16, 8), 64, 32).frames
    assert abs(back.mean() / smooth.mean() - 1) < 0.02
    assert back.min() >= 0 and back.max() <= 1


# -- synthetic generator --------------------------------------------------------

SMALL = SynthConfig(num_ids=4, num_cams=2, clips_per_id_cam=1, seed=3)


def test_synth_deterministic():
    a, b = synth_dataset(SMALL), synth_dataset(SMALL)
    for x, y in zip(a, b):
        assert x.stream.equals(y.stream)
        assert x.masks.tobytes() == y.masks.tobytes()


def test_identity_params_injective():
    vecs = {tuple(identity_params(0, pid).vector()) for pid in range(50)}
    assert len(vecs) == 50


def test_synth_rejects_bad_config():
    with pytest.raises(ValueError):
        synth_dataset(SynthConfig(num_ids=1))
    with pytest.raises(ValueError):
        synth_dataset(SynthConfig(num_cams=1))


def test_synth_masks_and_streams_are_valid():
    clips = synth_dataset(SMALL)
    assert len(clips) == 4 * 2
    for c in clips:
        c.stream.validate()
        assert c.masks.shape == (SMALL.clip_len, SMALL.height, SMALL.width)
        assert set(np.unique(c.masks)) <= {0, 1} and c.masks.any()
        fs = voxelize(c.stream, SMALL.clip_len, SMALL.t_window)
        assert fs.frames.shape == (8, 2, 64, 32)


def test_event_rate_increases_with_gait_speed():
    totals = []
    for speed in (0.5, 0.75, 1.0, 1.5, 2.0):
        cfg = SynthConfig(num_ids=4, num_cams=2, clips_per_id_cam=1, seed=1, gait_speed=speed, noise_scale=0.0)
        totals.append(sum(len(c.stream) for c in synth_dataset(cfg)))
    assert all(a < b for a, b in zip(totals, totals[1:])), totals


def test_dataset_save_load(tmp_path):
    clips = synth_dataset(SMALL)
    save_dataset(clips, tmp_path, SMALL)
    back = load_dataset(tmp_path)
    assert len(back) == len(clips)
    for x, y in zip(clips, back):
        assert x.stream.equals(y.stream) and np.array_equal(x.masks, y.masks)
        assert (x.person_id, x.camera_id, x.clip_index) == (y.person_id, y.camera_id, y.clip_index)


# -- protocol split -------------------------------------------------------------

class _C:
    def __init__(self, pid, cam):
        self.person_id, self.camera_id = pid, cam


def _fake(ids=8, cams=2, clips=2):
    return [_C(p, c) for p in range(ids) for c in range(cams) for _ in range(clips)]


def test_split_arithmetic():
    s = protocol_split(_fake(), seed=0)
    assert len(s.train_ids) == 4 and len(s.test_ids) == 4
    assert {c.person_id for c in s.query} == {c.person_id for c in s.gallery} == s.test_ids


def test_split_disjoint_and_cross_camera_over_seeds():
    data = _fake(ids=9, cams=3, clips=1)
    for seed in range(100):
        s = protocol_split(data, seed)
        assert not s.train_ids & s.test_ids
        for q in s.query:
            assert any(g.person_id == q.person_id and g.camera_id != q.camera_id for g in s.gallery)


def test_split_rejects_small_sets():
    with pytest.raises(ValueError):
        protocol_split(_fake(ids=3), 0)
    with pytest.raises(ValueError):
        protocol_split(_fake(cams=1), 0)
