"""Datasets: manifests, the synthetic cell generator, subset/split protocol and the feature cache."""

from __future__ import annotations

import csv
import hashlib
import json
import math
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .imaging import N_FEATURES, extract_file, extract_features, to_gray_image

LABELS = ("Healthy", "AML")
LABEL_INDEX = {name: i for i, name in enumerate(LABELS)}
IMAGE_SUFFIXES = {".png", ".tif", ".tiff", ".jpg", ".jpeg", ".bmp"}
MANIFEST_NAME = "manifest.csv"
LABEL_MAP_NAME = "label_map.json"
TRAIN_FRACTION = 0.8
VALID_FRACTION = 0.15

# Default pooling of the AML-Cytomorphology morphological classes into the
# binary task. Blast/promyelocyte classes count as AML, mature leukocytes as
# Healthy; anything else is skipped. Override with <root>/label_map.json.
DEFAULT_LABEL_MAP = {
    "Healthy": "Healthy",
    "AML": "AML",
    "MYO": "AML",
    "MOB": "AML",
    "PMO": "AML",
    "PMB": "AML",
    "NGS": "Healthy",
    "NGB": "Healthy",
    "LYT": "Healthy",
    "MON": "Healthy",
    "EOS": "Healthy",
    "BAS": "Healthy",
}

FEATURE_HEADER = ["label"] + [f"f{k:02d}" for k in range(1, N_FEATURES + 1)]


@dataclass
class DatasetManifest:
    paths: list[Path]
    labels: list[str]
    source: str = "directory"

    def __post_init__(self):
        if len(self.paths) != len(self.labels):
            raise ValueError("paths and labels differ in length")
        bad = set(self.labels) - set(LABELS)
        if bad:
            raise ValueError(f"unknown labels {sorted(bad)}")

    def __len__(self) -> int:
        return len(self.paths)

    @property
    def y(self) -> np.ndarray:
        return np.array([LABEL_INDEX[l] for l in self.labels], dtype=int)

    def counts(self) -> dict[str, int]:
        return {name: self.labels.count(name) for name in LABELS}

    def validate(self) -> None:
        missing = [str(p) for p in self.paths if not Path(p).exists()]
        if missing:
            raise FileNotFoundError(f"{len(missing)} manifest paths missing, e.g. {missing[0]}")
        absent = [name for name, n in self.counts().items() if n == 0]
        if absent:
            raise ValueError(f"dataset has no images labelled {absent}")

    def digest(self) -> str:
        h = hashlib.sha256()
        for p, label in zip(self.paths, self.labels):
            st = Path(p).stat()
            h.update(f"{Path(p).resolve()}|{label}|{st.st_size}|{st.st_mtime_ns}\n".encode())
        return h.hexdigest()[:16]

    def save(self, path) -> None:
        path = Path(path)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["path", "label"])
            for p, label in zip(self.paths, self.labels):
                p = Path(p)
                try:
                    p = p.relative_to(path.parent)
                except ValueError:
                    pass
                w.writerow([p.as_posix(), label])

    @classmethod
    def load(cls, path, source: str = "manifest") -> "DatasetManifest":
        path = Path(path)
        paths, labels = [], []
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                p = Path(row["path"])
                paths.append(p if p.is_absolute() else path.parent / p)
                labels.append(row["label"])
        return cls(paths, labels, source)


def load_dataset(root) -> DatasetManifest:
    """Manifest for a data directory.

    Uses ``<root>/manifest.csv`` when present; otherwise scans
    ``<root>/<CLASS>/*`` and maps each class folder to Healthy/AML through
    ``<root>/label_map.json`` (falling back to ``DEFAULT_LABEL_MAP``).
    Folders that map to nothing are skipped.
    """
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"data directory {root} does not exist")
    if (root / MANIFEST_NAME).exists():
        manifest = DatasetManifest.load(root / MANIFEST_NAME)
    else:
        mapping = DEFAULT_LABEL_MAP
        if (root / LABEL_MAP_NAME).exists():
            mapping = json.loads((root / LABEL_MAP_NAME).read_text())
        paths, labels = [], []
        for sub in sorted(p for p in root.iterdir() if p.is_dir()):
            label = mapping.get(sub.name)
            if label is None:
                continue
            for f in sorted(sub.rglob("*")):
                if f.is_file() and f.suffix.lower() in IMAGE_SUFFIXES:
                    paths.append(f)
                    labels.append(label)
        manifest = DatasetManifest(paths, labels, f"directory:{root}")
    manifest.validate()
    return manifest


# --------------------------------------------------------------------------- #
# Synthetic blood-cell-like images
# --------------------------------------------------------------------------- #


def _healthy_cell(rng: np.random.Generator, size: int = 64) -> np.ndarray:
    """Small smooth ellipse with gentle low-frequency shading."""
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    cy, cx = size / 2 + rng.uniform(-3, 3, size=2)
    a, b = rng.uniform(7.0, 10.0), rng.uniform(5.5, 8.0)
    phi = rng.uniform(0, np.pi)
    u = (xx - cx) * np.cos(phi) + (yy - cy) * np.sin(phi)
    v = -(xx - cx) * np.sin(phi) + (yy - cy) * np.cos(phi)
    r = np.sqrt((u / a) ** 2 + (v / b) ** 2)
    inside = np.clip((1.15 - r) / 0.3, 0.0, 1.0)
    peak = rng.uniform(170, 210)
    shading = 1.0 - 0.25 * r**2
    bg = rng.uniform(25, 45)
    img = bg + inside * (peak * shading - bg)
    img += rng.normal(0, 1.5, size=img.shape)
    return img


def _aml_cell(rng: np.random.Generator, size: int = 64) -> np.ndarray:
    """Larger irregular blob with high-frequency speckle texture."""
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    cy, cx = size / 2 + rng.uniform(-3, 3, size=2)
    theta = np.arctan2(yy - cy, xx - cx)
    dist = np.hypot(yy - cy, xx - cx)
    radius = rng.uniform(15.0, 19.0)
    for k in (2, 3, 5):
        radius = radius + rng.uniform(0.8, 2.0) * np.cos(k * theta + rng.uniform(0, 2 * np.pi))
    inside = np.clip((radius - dist) / 1.5 + 0.5, 0.0, 1.0)
    base = rng.uniform(120, 160)
    speckle = rng.normal(0, rng.uniform(30, 40), size=(size, size))
    bg = rng.uniform(25, 45)
    img = bg + inside * (base + speckle - bg)
    img += rng.normal(0, 1.5, size=img.shape)
    return img


def synth_image(label: str, seed: int, index: int) -> np.ndarray:
    """Deterministic synthetic 64x64 cell for (label, seed, index)."""
    rng = np.random.default_rng([seed, LABEL_INDEX[label], index])
    img = _healthy_cell(rng) if label == "Healthy" else _aml_cell(rng)
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


def stump_accuracy(features: np.ndarray, y: np.ndarray) -> float:
    """Held-out accuracy of the best single-feature threshold.

    Within each class, every other sample fits the stump (feature, threshold
    and polarity chosen by training accuracy) and the rest score it.
    """
    y = np.asarray(y)
    fit = np.zeros(len(y), dtype=bool)
    for cls in np.unique(y):
        fit[np.flatnonzero(y == cls)[0::2]] = True
    xtr, ytr = features[fit], y[fit]
    xte, yte = features[~fit], y[~fit]
    best = (-1.0, 0, 0.0, 1)
    for k in range(features.shape[1]):
        vals = np.unique(xtr[:, k])
        cuts = (vals[:-1] + vals[1:]) / 2 if vals.size > 1 else vals
        for t in cuts:
            pred = (xtr[:, k] > t).astype(int)
            for polarity in (1, -1):
                p = pred if polarity == 1 else 1 - pred
                acc = float(np.mean(p == ytr))
                if acc > best[0]:
                    best = (acc, k, float(t), polarity)
    _, k, t, polarity = best
    pred = (xte[:, k] > t).astype(int)
    if polarity == -1:
        pred = 1 - pred
    return float(np.mean(pred == yte))


def synth_dataset(n_per_class: int, seed: int, out_dir, min_stump_accuracy: float = 0.85) -> DatasetManifest:
    """Write ``n_per_class`` PNGs per class plus ``manifest.csv`` under ``out_dir``."""
    if n_per_class < 10:
        raise ValueError("n_per_class must be at least 10")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths, labels, feats = [], [], []
    for i in range(n_per_class):
        for label in LABELS:
            sub = out / label
            sub.mkdir(exist_ok=True)
            img = synth_image(label, seed, i)
            path = sub / f"{label.lower()}_{i:04d}.png"
            Image.fromarray(img, mode="L").save(path)
            paths.append(path)
            labels.append(label)
            feats.append(extract_features(to_gray_image(img)))
    manifest = DatasetManifest(paths, labels, f"synthetic:seed={seed}")
    acc = stump_accuracy(np.array(feats), manifest.y)
    if acc < min_stump_accuracy:
        raise RuntimeError(f"synthetic classes not separable enough: stump accuracy {acc:.3f}")
    manifest.save(out / MANIFEST_NAME)
    (out / "synth_info.json").write_text(
        json.dumps({"n_per_class": n_per_class, "seed": seed, "stump_accuracy": acc}, indent=2)
    )
    return manifest


# --------------------------------------------------------------------------- #
# Protocol
# --------------------------------------------------------------------------- #


def n_train_for(n: int, fraction: float = TRAIN_FRACTION) -> int:
    return int(math.floor(fraction * n + 0.5))


def build_subset(labels, samples_per_class: int, seed: int):
    """Balanced draw of ``samples_per_class`` per class, split 80/20 within each class.

    Returns ``(train_idx, test_idx)`` as sorted index arrays into ``labels``.
    """
    y = np.asarray([LABEL_INDEX[l] if isinstance(l, str) else int(l) for l in labels])
    if samples_per_class < 2:
        raise ValueError("samples_per_class must be at least 2")
    rng = np.random.default_rng(seed)
    n_train = n_train_for(samples_per_class)
    train, test = [], []
    for cls, name in enumerate(LABELS):
        pool = np.flatnonzero(y == cls)
        if pool.size < samples_per_class:
            raise ValueError(
                f"class {name} has {pool.size} images, {samples_per_class} requested"
            )
        picked = rng.choice(pool, size=samples_per_class, replace=False)
        train.append(picked[:n_train])
        test.append(picked[n_train:])
    return np.sort(np.concatenate(train)), np.sort(np.concatenate(test))


def split_validation(y_train, seed: int, fraction: float = VALID_FRACTION):
    """Stratified carve-out of a validation set from the training indices.

    Returns positions ``(fit_pos, valid_pos)`` into ``y_train``; each class
    keeps at least one sample on both sides.
    """
    y_train = np.asarray(y_train)
    rng = np.random.default_rng([seed, 7])
    fit, valid = [], []
    for cls in np.unique(y_train):
        pos = rng.permutation(np.flatnonzero(y_train == cls))
        k = min(max(1, n_train_for(pos.size, fraction)), pos.size - 1)
        valid.append(pos[:k])
        fit.append(pos[k:])
    return np.sort(np.concatenate(fit)), np.sort(np.concatenate(valid))


# --------------------------------------------------------------------------- #
# Feature cache
# --------------------------------------------------------------------------- #


def write_features_csv(path, labels, features) -> None:
    """Write ``label,f01..f20`` rows; values use 17 significant digits (exact round trip)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
    with os.fdopen(fd, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(FEATURE_HEADER)
        for label, row in zip(labels, np.asarray(features, dtype=np.float64)):
            w.writerow([label] + [format(float(v), ".17g") for v in row])
    os.replace(tmp, path)


def read_features_csv(path):
    labels, rows = [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != FEATURE_HEADER:
            raise ValueError(f"{path}: unexpected header {header[:3]}...")
        for rec in reader:
            labels.append(rec[0])
            rows.append([float(v) for v in rec[1:]])
    return labels, np.array(rows, dtype=np.float64).reshape(-1, N_FEATURES)


def extract_manifest(manifest: DatasetManifest) -> np.ndarray:
    return np.array([extract_file(p) for p in manifest.paths]).reshape(-1, N_FEATURES)


def cached_features(manifest: DatasetManifest, cache_dir) -> np.ndarray:
    """Features for every manifest entry, read from or written to ``cache_dir/<digest>.csv``."""
    path = Path(cache_dir) / f"features_{manifest.digest()}.csv"
    if path.exists():
        labels, feats = read_features_csv(path)
        if labels == list(manifest.labels):
            return feats
    feats = extract_manifest(manifest)
    write_features_csv(path, manifest.labels, feats)
    return feats
