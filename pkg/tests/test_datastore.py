import json

import numpy as np
import pytest

from bearingda import FaultClass, FormatError, ParameterError, Segment
from bearingda import datastore as ds


def labelled(counts: dict, length=16, seed=0) -> ds.Dataset:
    rng = np.random.default_rng(seed)
    segs, recs = [], []
    for c, n in counts.items():
        for i in range(n):
            segs.append(Segment(rng.standard_normal(length), 12000.0, 1797.0, c))
            recs.append(ds.Record(f"{c.name}-{i}", seed=i))
    return ds.Dataset(segs, recs, list(counts))


ALL = {c: 1200 for c in FaultClass}


# ---------------------------------------------------------------- segmentation

def test_segment_count_length_and_duration(rng):
    raw = rng.standard_normal(20_000)
    out = ds.segment_recording(raw, 4096, 1200, rng)
    assert len(out.segments) == 1200
    assert all(len(s) == 4096 for s in out.segments)
    assert len(out.segments[0]) / out.segments[0].sample_rate == pytest.approx(4096 / 12000)
    assert abs(4096 / 12000 - 0.341) < 1e-3
    for s, o in zip(out.segments[:20], out.offsets[:20]):
        np.testing.assert_array_equal(s.samples, raw[o:o + 4096])


def test_segment_offsets_reproducible(rng):
    raw = rng.standard_normal(10_000)
    a = ds.segment_recording(raw, 512, 50, np.random.default_rng(9)).offsets
    b = ds.segment_recording(raw, 512, 50, np.random.default_rng(9)).offsets
    np.testing.assert_array_equal(a, b)


def test_segment_errors():
    with pytest.raises(ParameterError):
        ds.segment_recording(np.zeros(100), 4096, 1)
    with pytest.raises(ParameterError):
        ds.segment_recording(np.zeros(5000), 4096, 0)


def test_segment_recordings_spreads_over_files(rng):
    recs = [ds.Recording(f"r{i}", rng.standard_normal(3000), 12000.0, 1797.0, FaultClass.InnerRace)
            for i in range(3)]
    out = ds.segment_recordings(recs, 10, rng, seg_len=256)
    origins = [r.origin for r in out.records]
    assert [origins.count(f"r{i}") for i in range(3)] == [4, 3, 3]
    assert out.class_counts()[FaultClass.InnerRace] == 10


# ---------------------------------------------------------------- healthy split

def test_split_healthy_disjoint_and_upsampled(rng):
    healthy = labelled({FaultClass.Healthy: 1200})
    sp = ds.split_healthy(healthy, rng, upsample_to=1200)
    assert not set(sp.source_ids) & set(sp.target_ids)
    assert len(sp.source_ids) + len(sp.target_ids) == 1200
    assert len(sp.source_pool) == len(sp.target_pool) == 1200
    assert {r.origin for r in sp.source_pool.records} <= set(sp.source_ids)
    assert {r.origin for r in sp.target_pool.records} <= set(sp.target_ids)


def test_split_healthy_odd_count(rng):
    sp = ds.split_healthy(labelled({FaultClass.Healthy: 11}), rng)
    assert (len(sp.source_pool), len(sp.target_pool)) == (6, 5)


def test_split_healthy_needs_two(rng):
    with pytest.raises(ParameterError):
        ds.split_healthy(labelled({FaultClass.Healthy: 1}), rng)


# ---------------------------------------------------------------- imbalance

def test_table3_counts(rng):
    split = ds.subsample_imbalanced(labelled(ALL, length=4), ds.ImbalanceSpec.table3(), rng)
    counts = split.evaluation.class_counts()
    assert counts == {FaultClass.Healthy: 1200, FaultClass.OuterRace: 120,
                      FaultClass.InnerRace: 60, FaultClass.RollingElement: 12}


@pytest.mark.parametrize("frac", [0.2, 0.15, 0.1, 0.05, 0.01, 0.333])
def test_histogram_matches_rounded_fraction(frac, rng):
    data = labelled({FaultClass.Healthy: 37, FaultClass.RollingElement: 1200}, length=4)
    split = ds.subsample_imbalanced(data, ds.ImbalanceSpec.rolling_element(frac), rng)
    counts = split.evaluation.class_counts()
    assert counts[FaultClass.RollingElement] == int(np.floor(frac * 1200 + 0.5))
    assert counts[FaultClass.Healthy] == 37


def test_identity_fractions_keep_ids(rng):
    data = labelled({FaultClass.Healthy: 5, FaultClass.OuterRace: 7}, length=4)
    split = ds.subsample_imbalanced(data, ds.ImbalanceSpec(), rng)
    assert split.evaluation.ids == data.ids


def test_zero_sample_fraction_rejected(rng):
    data = labelled({FaultClass.Healthy: 10, FaultClass.RollingElement: 10}, length=4)
    with pytest.raises(ParameterError):
        ds.subsample_imbalanced(data, ds.ImbalanceSpec.rolling_element(0.01), rng)
    with pytest.raises(ParameterError):
        ds.ImbalanceSpec(RollingElement=0.0)


def test_train_and_eval_copies_share_waveforms(rng):
    data = labelled({FaultClass.Healthy: 30, FaultClass.InnerRace: 30})
    split = ds.subsample_imbalanced(data, ds.ImbalanceSpec(InnerRace=0.2), rng)
    assert split.train.ids == split.evaluation.ids
    assert np.all(split.train.labels() == -1)
    assert np.all(split.evaluation.labels() >= 0)
    np.testing.assert_array_equal(split.train.array(), split.evaluation.array())


# ---------------------------------------------------------------- container

def test_save_load_save_byte_identical(tmp_path):
    data = labelled({FaultClass.Healthy: 3, FaultClass.InnerRace: 2})
    data.provenance = {"seed": 1}
    m1, b1 = ds.save_dataset(data, tmp_path / "a")
    back = ds.load_dataset(tmp_path / "a")
    m2, b2 = ds.save_dataset(back, tmp_path / "b")
    assert b1.read_bytes() == b2.read_bytes()
    assert m1.read_text() == m2.read_text()
    assert b1.read_bytes()[:4] == b"SEGD"
    for s, t in zip(data.segments, back.segments):
        np.testing.assert_array_equal(s.samples.astype(np.float32), t.samples)
        assert s.label is t.label
    assert back.ids == data.ids and back.provenance == {"seed": 1}


def test_container_corruption(tmp_path):
    data = labelled({FaultClass.Healthy: 3})
    m, b = ds.save_dataset(data, tmp_path / "x")
    blob = b.read_bytes()

    b.write_bytes(blob[:-2])
    with pytest.raises(FormatError):
        ds.load_dataset(tmp_path / "x")
    b.write_bytes(blob[:-4])
    with pytest.raises(FormatError):
        ds.load_dataset(tmp_path / "x")
    b.write_bytes(b"NOPE" + blob[4:])
    with pytest.raises(FormatError):
        ds.load_dataset(tmp_path / "x")
    b.write_bytes(blob[:4] + (7).to_bytes(4, "little") + blob[8:])
    with pytest.raises(FormatError):
        ds.load_dataset(tmp_path / "x")

    b.write_bytes(blob)
    manifest = json.loads(m.read_text())
    manifest["records"][-1]["offset"] = 10_000
    m.write_text(json.dumps(manifest))
    with pytest.raises(FormatError):
        ds.load_dataset(tmp_path / "x")
    m.write_text("{not json")
    with pytest.raises(FormatError):
        ds.load_dataset(tmp_path / "x")


def test_recordings_round_trip(tmp_path, rng):
    recs = [ds.Recording("h", rng.standard_normal(100), 12000.0, 1797.0, FaultClass.Healthy),
            ds.Recording("b", rng.standard_normal(50), 12000.0, 1772.0, FaultClass.RollingElement)]
    back = ds.load_recordings(ds.write_recordings(recs, tmp_path))
    assert [r.label for r in back] == [FaultClass.Healthy, FaultClass.RollingElement]
    np.testing.assert_array_equal(back[0].samples, recs[0].samples.astype(np.float32))
    assert back[1].shaft_speed == 1772.0


def test_dataset_validation():
    seg = Segment(np.zeros(4), 12000.0, 1797.0, FaultClass.Healthy)
    with pytest.raises(ParameterError):
        ds.Dataset([seg, seg], [ds.Record("a"), ds.Record("a")], [FaultClass.Healthy])
    with pytest.raises(ParameterError):
        ds.Dataset([seg], [ds.Record("a")], [FaultClass.InnerRace])
    with pytest.raises(ParameterError):
        ds.Dataset([seg], [], [FaultClass.Healthy])
