from dataclasses import replace
import csv
import math
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mmbeam import _accel
from mmbeam.dataio import (
    INDEX_COLUMNS, DatasetIndex, GpsNormalizer, IndexFormatError, IndexRecord, SyntheticSceneConfig,
    fit_gps_normalizer, generate_synthetic, label_for_position, load_index, load_points, load_sample,
    normalize_gps, split, write_index,
)
from mmbeam.signalmodel import boresight_angle, make_dft_codebook


def make_index(labels, seed=0):
    rng = np.random.default_rng(seed)
    recs = [IndexRecord(f"id{i}", "a.png", "a.csv", float(33 + rng.random()), float(-111 + rng.random()), int(l))
            for i, l in enumerate(labels)]
    return DatasetIndex(records=recs, split_seed=seed)


def write_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


@pytest.fixture
def tiny_dir(tmp_path):
    for name in ("a.png", "b.png", "c.png", "a.csv", "b.csv", "c.csv"):
        (tmp_path / name).write_text("x")
    return tmp_path


def test_load_index_three_rows(tiny_dir):
    rows = [("s0", "a.png", "a.csv", "33.1", "-111.2", "0"),
            ("s1", "b.png", "b.csv", "33.2", "-111.3", "5"),
            ("s2", "c.png", "c.csv", "33.3", "-111.4", "31")]
    write_rows(tiny_dir / "index.csv", INDEX_COLUMNS, rows)
    idx = load_index(tiny_dir / "index.csv", M=32)
    assert len(idx) == 3
    assert idx.records[1] == IndexRecord("s1", "b.png", "b.csv", 33.2, -111.3, 5)
    assert idx.image_path(2) == tiny_dir / "c.png"


def test_load_index_label_out_of_range_names_row(tiny_dir):
    write_rows(tiny_dir / "index.csv", INDEX_COLUMNS,
               [("s0", "a.png", "a.csv", "33.1", "-111.2", "0"), ("s1", "b.png", "b.csv", "33.2", "-111.3", "32")])
    with pytest.raises(IndexFormatError, match="row 3"):
        load_index(tiny_dir / "index.csv", M=32)


@pytest.mark.parametrize("bad,msg", [
    ({"latitude": "north"}, "non-numeric"),
    ({"beam_index": "1.5"}, "not an integer"),
    ({"image_relpath": "missing.png"}, "file not found"),
])
def test_load_index_row_errors(tiny_dir, bad, msg):
    row = dict(zip(INDEX_COLUMNS, ("s0", "a.png", "a.csv", "33.1", "-111.2", "0")))
    row.update(bad)
    write_rows(tiny_dir / "index.csv", INDEX_COLUMNS, [tuple(row[c] for c in INDEX_COLUMNS)])
    with pytest.raises(IndexFormatError, match=msg):
        load_index(tiny_dir / "index.csv", M=32)


def test_load_index_missing_column(tiny_dir):
    write_rows(tiny_dir / "index.csv", INDEX_COLUMNS[:-1], [("s0", "a.png", "a.csv", "33.1", "-111.2")])
    with pytest.raises(IndexFormatError, match="beam_index"):
        load_index(tiny_dir / "index.csv")


def test_load_index_header_order_irrelevant(tiny_dir):
    rows = [("s0", "a.png", "a.csv", repr(33.123456789012345), "-111.2", "0"),
            ("s1", "b.png", "b.csv", "33.2", "-111.3", "4")]
    write_rows(tiny_dir / "index.csv", INDEX_COLUMNS, rows)
    canonical = load_index(tiny_dir / "index.csv", M=8)
    perm = [5, 2, 0, 4, 1, 3]
    write_rows(tiny_dir / "shuffled.csv", [INDEX_COLUMNS[p] for p in perm], [[r[p] for p in perm] for r in rows])
    assert load_index(tiny_dir / "shuffled.csv", M=8).records == canonical.records
    write_index(canonical, tiny_dir / "round.csv")
    assert load_index(tiny_dir / "round.csv", M=8).records == canonical.records


def test_split_sizes_and_disjoint():
    idx = make_index(np.arange(100) % 7, seed=7)
    tr, va, te = split(idx, seed=7)
    assert (len(tr), len(va), len(te)) == (80, 10, 10)
    ids = [set(r.sample_id for r in p.records) for p in (tr, va, te)]
    assert not (ids[0] & ids[1] or ids[0] & ids[2] or ids[1] & ids[2])
    assert ids[0] | ids[1] | ids[2] == {r.sample_id for r in idx.records}


def test_split_deterministic():
    idx = make_index(np.arange(100) % 7)
    a = split(idx, seed=3)
    b = split(idx, seed=3)
    assert [p.records for p in a] == [p.records for p in b]
    c = split(idx, seed=4)
    assert [p.records for p in a] != [p.records for p in c]


def test_split_stratified_counts():
    labels = np.arange(1000) % 10
    parts = split(make_index(labels), seed=1)
    for part, frac in zip(parts, (0.8, 0.1, 0.1)):
        counts = np.bincount(part.labels, minlength=10)
        assert np.all(np.abs(counts - frac * 100) <= 1), counts


def test_split_too_small():
    with pytest.raises(ValueError):
        split(make_index(np.zeros(9, dtype=int)))


@settings(max_examples=40, deadline=None)
@given(st.integers(10, 300), st.integers(1, 40), st.integers(0, 10_000))
def test_split_partition_property(n, n_labels, seed):
    rng = np.random.default_rng(seed)
    idx = make_index(rng.integers(0, n_labels, n), seed)
    parts = split(idx, seed=seed)
    ids = [r.sample_id for p in parts for r in p.records]
    assert sorted(ids) == sorted(r.sample_id for r in idx.records)
    assert len(set(ids)) == n


def test_gps_normalizer_fit_and_bounds():
    idx = make_index([0, 1])
    idx.records[0] = IndexRecord("a", "", "", 33.0, -112.0, 0)
    idx.records[1] = IndexRecord("b", "", "", 34.0, -111.0, 1)
    norm = fit_gps_normalizer(idx)
    assert (norm.lat_min, norm.lat_max) == (33.0, 34.0)
    assert normalize_gps(norm, (33.0, -112.0))[0] == 0.0
    assert normalize_gps(norm, (34.0, -111.0))[1] == 1.0
    np.testing.assert_allclose(normalize_gps(norm, (33.5, -111.5)), (0.5, 0.5))
    np.testing.assert_allclose(normalize_gps(norm, (34.1, -111.5)), (1.1, 0.5), atol=1e-12)


def test_gps_normalizer_degenerate():
    idx = make_index([0, 1])
    idx.records[0] = IndexRecord("a", "", "", 33.0, -112.0, 0)
    idx.records[1] = IndexRecord("b", "", "", 33.0, -111.0, 1)
    with pytest.raises(ValueError, match="latitude"):
        fit_gps_normalizer(idx)
    with pytest.raises(ValueError):
        GpsNormalizer(1.0, 1.0, 0.0, 1.0)


@settings(max_examples=100, deadline=None)
@given(st.floats(0, 1), st.floats(0, 1))
def test_normalize_denormalize_identity(a, b):
    norm = GpsNormalizer(33.41, 33.43, -111.94, -111.92)
    g = norm.normalize(norm.denormalize((a, b)))
    np.testing.assert_allclose(g, (a, b), rtol=0, atol=1e-12)


def test_generate_synthetic_contract(tmp_path):
    cfg = SyntheticSceneConfig(n_samples=10, rng_seed=3)
    idx = generate_synthetic(cfg, tmp_path)
    assert len(idx) == 10
    loaded = load_index(tmp_path / "index.csv", M=cfg.M)
    assert loaded.records == idx.records
    assert all(0 <= r.beam_index < cfg.M for r in idx.records)
    s = load_sample(loaded, 0)
    assert s.image.shape == (*cfg.image_size, 3)
    assert 0 <= s.image.min() and s.image.max() <= 1
    n_vehicles = {1, 2}
    counts = {load_sample(loaded, i).points.shape for i in range(len(loaded))}
    assert counts <= {(v * cfg.points_per_vehicle + cfg.clutter_points, 4) for v in n_vehicles}
    lone = generate_synthetic(replace(cfg, distractor_prob=0.0), tmp_path / "lone")
    assert load_sample(lone, 0).points.shape == (cfg.points_per_vehicle + cfg.clutter_points, 4)


def test_generate_synthetic_deterministic(tmp_path):
    cfg = SyntheticSceneConfig(n_samples=8, rng_seed=5)
    generate_synthetic(cfg, tmp_path / "a")
    generate_synthetic(cfg, tmp_path / "b")
    assert (tmp_path / "a/index.csv").read_bytes() == (tmp_path / "b/index.csv").read_bytes()
    assert (tmp_path / "a/lidar/s00003.csv").read_bytes() == (tmp_path / "b/lidar/s00003.csv").read_bytes()


def test_point_files_round_trip_exactly(small_dataset):
    _, idx = small_dataset
    pts = load_points(idx.lidar_path(0))
    text = idx.lidar_path(0).read_text().splitlines()
    assert len(text) == pts.shape[0]
    assert float(text[0].split(",")[0]) == pts[0, 0]


def test_night_mode_darkens(tmp_path):
    day = generate_synthetic(SyntheticSceneConfig(n_samples=4, rng_seed=1), tmp_path / "d")
    night = generate_synthetic(SyntheticSceneConfig(n_samples=4, rng_seed=1, night_mode=True), tmp_path / "n")
    assert load_sample(night, 0).image.mean() < 0.5 * load_sample(day, 0).image.mean()


@pytest.mark.parametrize("k", [1, 3, 8, 12, 20, 24, 28, 31])
def test_vehicle_at_beam_boresight_gets_that_label(k):
    cb = make_dft_codebook(32, 32)
    y = 8.0
    x = y * math.tan(boresight_angle(k, 32))
    assert label_for_position(x, y, cb) == k


def test_label_coverage_and_nearest_neighbour_learnability(tmp_path):
    cfg = SyntheticSceneConfig(n_samples=2000, rng_seed=21, image_size=(8, 8), points_per_vehicle=1,
                               clutter_points=0)
    idx = generate_synthetic(cfg, tmp_path)
    labels = idx.labels
    assert np.unique(labels).size >= cfg.M // 2
    xs = np.loadtxt(tmp_path / "vehicle_x.csv")
    pred = _accel.nn1_predict(xs[:1000], labels[:1000], xs[1000:])
    assert np.mean(pred == labels[1000:]) >= 0.9


def test_unwritable_output_dir(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    with pytest.raises(OSError):
        generate_synthetic(SyntheticSceneConfig(n_samples=1), blocker / "sub")


def test_config_validation():
    with pytest.raises(ValueError):
        SyntheticSceneConfig(n_samples=0)
    with pytest.raises(ValueError):
        SyntheticSceneConfig(road_span_m=(5, 5))
    with pytest.raises(ValueError):
        DatasetIndex(records=[], split_fracs=(0.5, 0.5, 0.0))
