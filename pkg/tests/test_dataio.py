import json
import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from vibneedle import dataio, sim, spectral
from vibneedle.dataio import VideoEntry
from vibneedle.errors import DataError, TooFewVideos, VideoTooShort


def sim_video(vid="v0", n=32, angle=30.0, seed=0):
    prof = sim.InsertionProfile(entry_point=(4, 6), shaft_angle_deg=angle, initial_depth=20, velocity=0.2)
    frames, truths = sim.generate_sequence(prof, sim.VibrationSpec(), seed, n, shape=(48, 40))
    return dataio.video_from_sim(vid, frames, truths, 30.0, angle, {"seed": seed})


def entries(n, angle, prefix="v"):
    return [VideoEntry(f"{prefix}{i:03d}", angle, 100) for i in range(n)]


@pytest.mark.parametrize("n,expect", [(50, [40, 5, 5]), (56, [44, 6, 6]), (10, [8, 1, 1])])
def test_split_counts(n, expect):
    assert dataio.split_counts(n) == expect
    m = dataio.split(entries(n, 15.0), seed=3)
    c = m.counts(15.0)
    assert [c["train"], c["val"], c["test"]] == expect


def test_split_stratified_table_counts():
    m = dataio.split(entries(50, 15.0, "a") + entries(56, 30.0, "b"), seed=0)
    assert m.counts(15.0) == {"train": 40, "val": 5, "test": 5}
    assert m.counts(30.0) == {"train": 44, "val": 6, "test": 6}
    assert len(m.splits) == 106 and set(m.splits.values()) == {"train", "val", "test"}


def test_split_deterministic_and_order_stable():
    vids = entries(20, 15.0) + entries(12, 30.0, "w")
    a = dataio.split(vids, seed=4)
    b = dataio.split(list(reversed(vids)), seed=4)
    assert a.splits == b.splits
    assert dataio.split(vids, seed=5).splits != a.splits


def test_split_errors():
    with pytest.raises(TooFewVideos):
        dataio.split(entries(2, 15.0))
    with pytest.raises(ValueError):
        dataio.split_counts(10, (0.5, 0.5, 0.1))
    with pytest.raises(ValueError):
        dataio.split_counts(10, (1.0, 0.0, 0.0))


def test_count_sequences():
    assert dataio.count_sequences(30, 30) == 1
    assert dataio.count_sequences(100, 30) == 71
    assert dataio.count_sequences(100, 30, stride=5) == 15
    with pytest.raises(VideoTooShort):
        dataio.count_sequences(29, 30)


def test_pgm_round_trip(tmp_path):
    img = np.random.default_rng(0).integers(0, 256, (13, 17), dtype=np.uint8)
    path = tmp_path / "f.pgm"
    dataio.write_pgm(path, img)
    assert path.read_bytes().startswith(b"P5\n17 13\n255\n")
    np.testing.assert_array_equal(dataio.read_pgm(path), img)


def test_pgm_with_comment(tmp_path):
    path = tmp_path / "c.pgm"
    path.write_bytes(b"P5\n# made by hand\n3 2\n255\n" + bytes(range(6)))
    np.testing.assert_array_equal(dataio.read_pgm(path), [[0, 1, 2], [3, 4, 5]])
    bad = tmp_path / "b.pgm"
    bad.write_bytes(b"P2\n1 1\n255\n0")
    with pytest.raises(DataError):
        dataio.read_pgm(bad)


def test_mask_format(tmp_path):
    m = np.random.default_rng(1).random((7, 11)) < 0.4
    path = tmp_path / "m.msk"
    dataio.write_mask(path, m)
    blob = path.read_bytes()
    assert len(blob) == 12 + (77 + 7) // 8
    assert struct.unpack_from("<4sII", blob) == (b"VNMK", 7, 11)
    # least significant bit first, row-major
    assert blob[12] & 1 == int(m[0, 0]) and (blob[12] >> 1) & 1 == int(m[0, 1])
    np.testing.assert_array_equal(dataio.read_mask(path), m)
    path.write_bytes(b"XXXX" + blob[4:])
    with pytest.raises(DataError):
        dataio.read_mask(path)


def test_video_round_trip(tmp_path):
    v = sim_video()
    dataio.write_video(tmp_path / "v0", v)
    back = dataio.read_video(tmp_path / "v0")
    np.testing.assert_array_equal(back.frames, dataio.to_uint8(v.frames) / 255.0)
    assert np.abs(back.frames - v.frames).max() <= 0.5 / 255 + 1e-12
    np.testing.assert_array_equal(back.masks, v.masks)
    np.testing.assert_array_equal(back.tips, v.tips)
    np.testing.assert_array_equal(back.angles, v.angles)
    assert back.spacing == v.spacing and back.fs == v.fs and back.extra == {"seed": 0}
    meta = json.loads((tmp_path / "v0" / "meta.json").read_text())
    assert meta["format_version"] == 1 and meta["frame_count"] == 32
    assert len(list(dataio.iter_frames(tmp_path / "v0"))) == 32
    assert dataio.read_video(tmp_path / "v0", with_frames=False).frames.shape[0] == 0


def test_dataset_round_trip(tmp_path):
    vids = [sim_video(f"v{i}", angle=a, seed=i) for i, a in enumerate([15.0, 15.0, 15.0, 30.0, 30.0, 30.0])]
    dataio.write_dataset(tmp_path, vids)
    m, back = dataio.read_dataset(tmp_path)
    assert [v.video_id for v in back] == [v.video_id for v in vids]
    assert m.spacing == vids[0].spacing and m.splits == {}
    sm = dataio.split(m.videos, (0.34, 0.33, 0.33), seed=0)
    sm.save(tmp_path)
    m2, test_videos = dataio.read_dataset(tmp_path, "test")
    assert len(test_videos) == 2 and m2.counts(15.0)["test"] == 1
    assert dataio.DatasetManifest.from_json(m2.to_json()) == m2


def test_missing_manifest(tmp_path):
    with pytest.raises(DataError):
        dataio.read_dataset(tmp_path)
    (tmp_path / "manifest.json").write_text("{not json")
    with pytest.raises(DataError):
        dataio.DatasetManifest.load(tmp_path)
    with pytest.raises(DataError):
        dataio.read_meta(tmp_path)


def window_fixture():
    rng = np.random.default_rng(2)
    return rng.random((30, 9, 12)), rng.random((30, 9, 12)) < 0.2


def test_hflip_involution_and_angle():
    x, m = window_fixture()
    p = dataio.AugmentParams(hflip=True)
    x1, m1, a1 = dataio.apply_augment(x, m, 30.0, p)
    assert a1 == -30.0
    x2, m2, a2 = dataio.apply_augment(x1, m1, a1, p)
    np.testing.assert_array_equal(x2, x)
    np.testing.assert_array_equal(m2, m)
    assert a2 == 30.0


def test_identity_photometrics():
    x, m = window_fixture()
    x1, m1, a = dataio.apply_augment(x, m, 15.0, dataio.AugmentParams())
    np.testing.assert_array_equal(x1, x)
    np.testing.assert_array_equal(m1, m)
    assert a == 15.0


def test_flip_commutes_with_spectral_map():
    x, m = window_fixture()
    fx, _, _ = dataio.apply_augment(x, m, 30.0, dataio.AugmentParams(hflip=True))
    a = spectral.band_energy_map(x).magnitudes
    b = spectral.band_energy_map(fx).magnitudes
    np.testing.assert_allclose(b, a[:, ::-1], atol=1e-9, rtol=0)


def test_photometric_formula_and_clamp():
    x = np.array([[[0.0, 0.25, 0.5, 0.9]]])
    y, _, _ = dataio.apply_augment(x, None, None, dataio.AugmentParams(contrast=1.2, brightness=0.05))
    np.testing.assert_allclose(y, np.clip(0.5 + (x - 0.5) * 1.2 + 0.05, 0, 1))
    with pytest.raises(ValueError):
        dataio.apply_augment(x, None, None, dataio.AugmentParams(contrast=0.0))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 100_000))
def test_augment_preserves_mask_counts_and_ranges(seed):
    x, m = window_fixture()
    p = dataio.draw_augment(np.random.default_rng(seed))
    assert 0.8 <= p.contrast <= 1.2 and -0.1 <= p.brightness <= 0.1
    y, my, _ = dataio.augment(x, m, 30.0, seed=seed)
    assert my.sum() == m.sum()
    assert y.min() >= 0.0 and y.max() <= 1.0
    # one transform for the whole window: per-pixel order across frames is preserved
    if not p.hflip:
        np.testing.assert_array_equal(my, m)


def test_flip_point():
    np.testing.assert_array_equal(dataio.flip_point((3.0, 2.0), 10), [3.0, 7.0])
