import hashlib
import json

import numpy as np
import pytest
from PIL import Image

from qmlbench.data import (
    DatasetManifest,
    build_subset,
    cached_features,
    load_dataset,
    n_train_for,
    read_features_csv,
    split_validation,
    stump_accuracy,
    synth_dataset,
    synth_image,
    write_features_csv,
)
from qmlbench.imaging import extract_features, to_gray_image


def labels_of(n_per_class):
    return np.r_[np.zeros(n_per_class, int), np.ones(n_per_class, int)]


@pytest.mark.parametrize("spc,per_train,per_test", [(250, 200, 50), (200, 160, 40), (100, 80, 20), (50, 40, 10)])
def test_subset_sizes(spc, per_train, per_test):
    y = labels_of(300)
    tr, te = build_subset(y, spc, seed=0)
    assert len(tr) == 2 * per_train and len(te) == 2 * per_test
    assert np.intersect1d(tr, te).size == 0
    for cls in (0, 1):
        assert np.sum(y[tr] == cls) == per_train
        assert np.sum(y[te] == cls) == per_test


def test_subset_deterministic_and_seed_dependent():
    y = labels_of(300)
    a = build_subset(y, 100, 3)
    b = build_subset(y, 100, 3)
    c = build_subset(y, 100, 4)
    np.testing.assert_array_equal(a[0], b[0])
    np.testing.assert_array_equal(a[1], b[1])
    assert not np.array_equal(a[0], c[0])


def test_subset_insufficient_names_class():
    y = np.r_[np.zeros(100, int), np.ones(30, int)]
    with pytest.raises(ValueError, match="AML"):
        build_subset(y, 50, 0)


def test_round_half_up():
    assert [n_train_for(n) for n in (50, 100, 200, 250, 7)] == [40, 80, 160, 200, 6]


def test_validation_split_stratified():
    y = labels_of(200)
    fit, valid = split_validation(y, 0)
    assert np.intersect1d(fit, valid).size == 0
    assert len(fit) + len(valid) == 400
    assert np.sum(y[valid] == 0) == np.sum(y[valid] == 1) == 30


def test_synth_counts_and_determinism(tmp_path):
    m1 = synth_dataset(10, 7, tmp_path / "a")
    m2 = synth_dataset(10, 7, tmp_path / "b")
    assert len(m1) == 20 and m1.counts() == {"Healthy": 10, "AML": 10}
    assert len(list((tmp_path / "a").rglob("*.png"))) == 20
    for p, q in zip(m1.paths, m2.paths):
        assert hashlib.sha256(p.read_bytes()).digest() == hashlib.sha256(q.read_bytes()).digest()
    with Image.open(m1.paths[0]) as im:
        assert im.size == (64, 64) and im.mode == "L"


def test_synth_rejects_tiny(tmp_path):
    with pytest.raises(ValueError):
        synth_dataset(5, 0, tmp_path)


def test_synth_unwritable(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(OSError):
        synth_dataset(10, 0, blocker / "sub")


def test_synth_classes_differ_as_described(synth_dir):
    h = np.array([extract_features(to_gray_image(synth_image("Healthy", 0, i))) for i in range(30)])
    a = np.array([extract_features(to_gray_image(synth_image("AML", 0, i))) for i in range(30)])
    assert np.median(a[:, 10]) > np.median(h[:, 10])  # area
    assert np.median(a[:, 5]) > np.median(h[:, 5])  # GLCM contrast
    assert np.median(a[:, 18]) > np.median(h[:, 18])  # high-frequency energy
    info = json.loads((synth_dir / "synth_info.json").read_text())
    assert info["stump_accuracy"] >= 0.85


def test_stump_oracle_on_simple_data():
    x = np.c_[np.r_[np.zeros(20), np.ones(20)], np.random.default_rng(0).normal(size=40)]
    y = np.r_[np.zeros(20, int), np.ones(20, int)]
    assert stump_accuracy(x, y) == 1.0


def test_manifest_round_trip_and_loading(synth_dir):
    m = load_dataset(synth_dir)
    assert m.counts() == {"Healthy": 250, "AML": 250}
    assert all(p.exists() for p in m.paths)


def test_directory_scan_with_label_map(tmp_path):
    for folder, n in (("MYO", 3), ("LYT", 2), ("ZZZ", 4)):
        (tmp_path / folder).mkdir()
        for i in range(n):
            Image.fromarray(np.full((8, 8), 10 * i, np.uint8)).save(tmp_path / folder / f"{i}.png")
    m = load_dataset(tmp_path)
    assert m.counts() == {"Healthy": 2, "AML": 3}
    (tmp_path / "label_map.json").write_text(json.dumps({"ZZZ": "Healthy", "MYO": "AML"}))
    assert load_dataset(tmp_path).counts() == {"Healthy": 4, "AML": 3}


def test_manifest_missing_file(tmp_path):
    m = DatasetManifest([tmp_path / "nope.png", tmp_path / "x.png"], ["Healthy", "AML"])
    with pytest.raises(FileNotFoundError):
        m.validate()


def test_manifest_needs_both_labels(tmp_path):
    p = tmp_path / "a.png"
    Image.fromarray(np.zeros((4, 4), np.uint8)).save(p)
    with pytest.raises(ValueError):
        DatasetManifest([p], ["Healthy"]).validate()


def test_feature_csv_round_trip_bit_exact(tmp_path):
    rng = np.random.default_rng(0)
    feats = rng.normal(size=(30, 20)) * 10.0 ** rng.integers(-300, 300, (30, 20))
    labels = ["Healthy", "AML"] * 15
    write_features_csv(tmp_path / "f.csv", labels, feats)
    got_labels, got = read_features_csv(tmp_path / "f.csv")
    assert got_labels == labels
    assert got.tobytes() == feats.tobytes()
    header = (tmp_path / "f.csv").read_text().splitlines()[0]
    assert header == "label," + ",".join(f"f{k:02d}" for k in range(1, 21))


def test_feature_cache_reused(tmp_path):
    m = synth_dataset(10, 1, tmp_path / "d")
    a = cached_features(m, tmp_path / "cache")
    files = list((tmp_path / "cache").glob("*.csv"))
    assert len(files) == 1
    mtime = files[0].stat().st_mtime_ns
    b = cached_features(m, tmp_path / "cache")
    assert files[0].stat().st_mtime_ns == mtime
    assert a.tobytes() == b.tobytes()
