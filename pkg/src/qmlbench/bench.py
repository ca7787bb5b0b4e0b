"""Experiment orchestration: one run, seed/size sweeps, JSON reports and CSV summaries."""

from __future__ import annotations

import csv
import fcntl
import hashlib
import json
import os
import time
from concurrent.futures import ProcessPoolExecutor
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field
from itertools import product
from pathlib import Path

import numpy as np

from . import __version__
from .data import LABELS, build_subset, cached_features, load_dataset, split_validation
from .dense import DenseConfig, train_dense
from .ep import EPConfig, predict_ep, train_ep
from .preprocess import fit_angle_pipeline, fit_standardizer
from .vqc import MAX_ITERS, labels_to_targets, train_vqc

METHODS = ("ep", "vqc", "dense")
SIZES = (50, 100, 200, 250)
DEFAULT_SEEDS = (0, 1, 2)
THREADS_ENV = "QMLBENCH_THREADS"

# Published 250-per-class results, kept in every report for context only.
PUBLISHED_REFERENCE = {
    "cnn": {"accuracy": 0.984, "train_time_s": 745.0, "test_time_s": 0.19},
    "dense": {"accuracy": 0.920, "train_time_s": 0.47, "test_time_s": 0.001},
    "ep": {"accuracy": 0.864, "train_time_s": 89.4, "test_time_s": 0.13},
    "vqc": {"accuracy": 0.830, "train_time_s": 180.0, "test_time_s": 1.0},
}

RUN_COLUMNS = [
    "config_hash", "method", "samples_per_class", "seed", "n_train", "n_test",
    "accuracy", "train_time_s", "test_time_s", "pca_captured_fraction", "report",
]
SWEEP_COLUMNS = [
    "method", "samples_per_class", "n_seeds", "mean_accuracy", "std_accuracy",
    "min_accuracy", "max_accuracy", "mean_train_time_s", "mean_test_time_s",
]


class StageError(RuntimeError):
    """Failure inside one pipeline stage; ``str()`` starts with the stage tag."""

    def __init__(self, stage: str, cause: BaseException):
        self.stage = stage
        self.cause = cause
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")


@contextmanager
def stage(name: str):
    try:
        yield
    except StageError:
        raise
    except Exception as exc:
        raise StageError(name, exc) from exc


@dataclass
class ExperimentConfig:
    method: str
    samples_per_class: int
    seed: int = 0
    data_dir: str = "data"
    out_dir: str = "runs"
    ep: dict = field(default_factory=dict)
    dense: dict = field(default_factory=dict)
    vqc: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.samples_per_class < 2:
            raise ValueError("samples_per_class must be at least 2")
        self.data_dir = str(self.data_dir)
        self.out_dir = str(self.out_dir)

    def to_dict(self) -> dict:
        return asdict(self)

    def config_hash(self) -> str:
        """Key for output filenames; the output directory itself is excluded."""
        d = self.to_dict()
        d.pop("out_dir")
        d["data_dir"] = str(Path(self.data_dir).resolve())
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:12]


def version_hash() -> str:
    """Package version plus a digest of its source files."""
    h = hashlib.sha256()
    for path in sorted(Path(__file__).parent.glob("*.py")):
        h.update(path.name.encode())
        h.update(path.read_bytes())
    return f"{__version__}+{h.hexdigest()[:12]}"


def classification_metrics(y_true, y_pred) -> dict:
    """Accuracy, confusion matrix (rows true, columns predicted) and per-class precision/recall."""
    y_true = np.asarray(y_true, dtype=int)
    y_pred = np.asarray(y_pred, dtype=int)
    k = len(LABELS)
    cm = np.zeros((k, k), dtype=int)
    np.add.at(cm, (y_true, y_pred), 1)
    total = int(cm.sum())
    per_class = {}
    for c, name in enumerate(LABELS):
        col, row = cm[:, c].sum(), cm[c, :].sum()
        per_class[name] = {
            "precision": float(cm[c, c] / col) if col else 0.0,
            "recall": float(cm[c, c] / row) if row else 0.0,
        }
    return {
        "accuracy": float(np.trace(cm) / total) if total else 0.0,
        "confusion_matrix": cm.tolist(),
        "per_class": per_class,
    }


def _append_row(path: Path, columns: list[str], row: dict) -> None:
    """Append one CSV row under an exclusive lock; writes the header for a new file."""
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "a", newline="") as fh:
        fcntl.flock(fh, fcntl.LOCK_EX)
        try:
            if fh.tell() == 0:
                csv.writer(fh).writerow(columns)
            csv.DictWriter(fh, fieldnames=columns).writerow(row)
        finally:
            fcntl.flock(fh, fcntl.LOCK_UN)


def _write_json(path: Path, obj) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(obj, indent=2))
    os.replace(tmp, path)


def _train_method(cfg: ExperimentConfig, x_train, y_train):
    """Fit preprocessing and model on training rows only.

    Returns ``(predict, model, preprocessing, train_seconds, pca_fraction)``.
    """
    pca_fraction = None
    if cfg.method == "vqc":
        with stage("preprocess"):
            pipe = fit_angle_pipeline(x_train)
            a_train = pipe.transform(x_train)
            targets = labels_to_targets(y_train)
        pca_fraction = pipe.pca.captured_fraction
        with stage("train"):
            t0 = time.perf_counter()
            model = train_vqc(a_train, targets, cfg.seed, int(cfg.vqc.get("max_iters", MAX_ITERS)))
            seconds = time.perf_counter() - t0
        return lambda x: model.predict(pipe.transform(x)), model, pipe.to_dict(), seconds, pca_fraction

    with stage("preprocess"):
        std = fit_standardizer(x_train)
        z_train = std.transform(x_train)
        fit_pos, valid_pos = split_validation(y_train, cfg.seed)
    with stage("train"):
        t0 = time.perf_counter()
        if cfg.method == "ep":
            ep_cfg = EPConfig(**{"seed": cfg.seed, **cfg.ep})
            model = train_ep(z_train[fit_pos], y_train[fit_pos], z_train[valid_pos], y_train[valid_pos], ep_cfg)
            predict = lambda x: predict_ep(model, std.transform(x), ep_cfg)
        else:
            d_cfg = DenseConfig(**{"seed": cfg.seed, **cfg.dense})
            model = train_dense(z_train[fit_pos], y_train[fit_pos], z_train[valid_pos], y_train[valid_pos], d_cfg)
            predict = lambda x: model.predict(std.transform(x))
        seconds = time.perf_counter() - t0
    return predict, model, {"standardizer": std.to_dict()}, seconds, pca_fraction


def run_experiment(cfg: ExperimentConfig, features: np.ndarray | None = None,
                   labels: np.ndarray | None = None) -> dict:
    """Run one (method, size, seed) experiment and write its report files.

    ``features``/``labels`` may be passed to skip loading the dataset (the
    sweep extracts once and shares them). Every failure is raised as a
    ``StageError`` naming the stage it came from.
    """
    out = Path(cfg.out_dir)
    key = cfg.config_hash()
    with stage("setup"):
        (out / "reports").mkdir(parents=True, exist_ok=True)
        (out / "models").mkdir(parents=True, exist_ok=True)
    if features is None:
        with stage("load"):
            manifest = load_dataset(cfg.data_dir)
            labels = manifest.y
        with stage("extract"):
            features = cached_features(manifest, out / "cache")
    labels = np.asarray(labels, dtype=int)

    with stage("split"):
        train_idx, test_idx = build_subset(labels, cfg.samples_per_class, cfg.seed)
        if np.intersect1d(train_idx, test_idx).size:
            raise AssertionError("train and test indices overlap")
    x_train, y_train = features[train_idx], labels[train_idx]
    x_test, y_test = features[test_idx], labels[test_idx]

    predict, model, prep, train_s, pca_fraction = _train_method(cfg, x_train, y_train)

    with stage("evaluate"):
        t0 = time.perf_counter()
        y_pred = predict(x_test)
        test_s = time.perf_counter() - t0
        metrics = classification_metrics(y_test, y_pred)

    with stage("report"):
        model_path = out / "models" / f"{cfg.method}_{key}.json"
        _write_json(model_path, {"model": model.to_dict(), "preprocessing": prep})
        report = {
            "config": cfg.to_dict(),
            "config_hash": key,
            "version": version_hash(),
            "n_train": int(len(train_idx)),
            "n_test": int(len(test_idx)),
            **metrics,
            "train_time_s": train_s,
            "test_time_s": test_s,
            "pca_captured_fraction": pca_fraction,
            "published_reference_250": PUBLISHED_REFERENCE,
            "train_indices": train_idx.tolist(),
            "test_indices": test_idx.tolist(),
            "model_file": str(model_path),
        }
        report_path = out / "reports" / f"{cfg.method}_{cfg.samples_per_class}_s{cfg.seed}_{key}.json"
        _write_json(report_path, report)
        _append_row(out / "runs.csv", RUN_COLUMNS, {
            "config_hash": key,
            "method": cfg.method,
            "samples_per_class": cfg.samples_per_class,
            "seed": cfg.seed,
            "n_train": report["n_train"],
            "n_test": report["n_test"],
            "accuracy": report["accuracy"],
            "train_time_s": f"{train_s:.6f}",
            "test_time_s": f"{test_s:.6f}",
            "pca_captured_fraction": "" if pca_fraction is None else pca_fraction,
            "report": report_path.name,
        })
        report["report_file"] = str(report_path)
    return report


def worker_count() -> int:
    env = os.environ.get(THREADS_ENV)
    if env:
        n = int(env)
        if n < 1:
            raise ValueError(f"{THREADS_ENV} must be a positive integer")
        return n
    return os.cpu_count() or 1


def _run_one(args):
    cfg, features, labels = args
    return run_experiment(cfg, features, labels)


def summarize(reports: list[dict]) -> list[dict]:
    """Mean/std (population) accuracy and timings per (method, size)."""
    groups: dict[tuple[str, int], list[dict]] = {}
    for r in reports:
        c = r["config"]
        groups.setdefault((c["method"], c["samples_per_class"]), []).append(r)
    rows = []
    for (method, size), rs in sorted(groups.items()):
        acc = np.array([r["accuracy"] for r in rs])
        rows.append({
            "method": method,
            "samples_per_class": size,
            "n_seeds": len(rs),
            "mean_accuracy": float(acc.mean()),
            "std_accuracy": float(acc.std()),
            "min_accuracy": float(acc.min()),
            "max_accuracy": float(acc.max()),
            "mean_train_time_s": float(np.mean([r["train_time_s"] for r in rs])),
            "mean_test_time_s": float(np.mean([r["test_time_s"] for r in rs])),
        })
    return rows


def run_sweep(methods, sizes, seeds, data_dir, out_dir, workers: int | None = None,
              overrides: dict | None = None) -> tuple[list[dict], list[dict]]:
    """Cartesian product of runs; writes ``sweep_summary.csv`` and returns (reports, summary)."""
    methods, sizes, seeds = list(methods), [int(s) for s in sizes], [int(s) for s in seeds]
    for m in methods:
        if m not in METHODS:
            raise StageError("setup", ValueError(f"unknown method {m!r}"))
    overrides = overrides or {}
    out = Path(out_dir)
    with stage("load"):
        manifest = load_dataset(data_dir)
        labels = manifest.y
    with stage("extract"):
        features = cached_features(manifest, out / "cache")

    configs = [
        ExperimentConfig(m, size, seed, str(data_dir), str(out_dir), **overrides.get(m, {}))
        for m, size, seed in product(methods, sizes, seeds)
    ]
    n_workers = min(workers or worker_count(), len(configs))
    jobs = [(cfg, features, labels) for cfg in configs]
    if n_workers <= 1:
        reports = [_run_one(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=n_workers) as pool:
            reports = list(pool.map(_run_one, jobs))

    summary = summarize(reports)
    with stage("report"):
        path = out / "sweep_summary.csv"
        tmp = path.with_suffix(".csv.tmp")
        with open(tmp, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=SWEEP_COLUMNS)
            w.writeheader()
            w.writerows(summary)
        os.replace(tmp, path)
    return reports, summary
