"""Standardization, PCA down to the qubit count, and min-max mapping to rotation angles."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

TWO_PI = 2.0 * np.pi


def _as_matrix(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[0] == 0:
        raise ValueError("expected a non-empty 2-D array of feature vectors")
    return x


@dataclass(frozen=True)
class Standardizer:
    means: np.ndarray
    stds: np.ndarray

    def transform(self, x) -> np.ndarray:
        return (np.asarray(x, dtype=np.float64) - self.means) / self.stds

    def to_dict(self) -> dict:
        return {"means": self.means.tolist(), "stds": self.stds.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Standardizer":
        return cls(np.asarray(d["means"], dtype=np.float64), np.asarray(d["stds"], dtype=np.float64))


def fit_standardizer(train) -> Standardizer:
    """Per-feature mean and population std; a zero std is replaced by 1."""
    x = _as_matrix(train)
    stds = x.std(axis=0)
    stds = np.where(stds == 0, 1.0, stds)
    return Standardizer(x.mean(axis=0), stds)


@dataclass(frozen=True)
class PCAModel:
    components: np.ndarray  # (k, d), rows orthonormal
    explained_variance: np.ndarray
    captured_fraction: float
    mean: np.ndarray

    def transform(self, x) -> np.ndarray:
        return (np.asarray(x, dtype=np.float64) - self.mean) @ self.components.T

    def inverse_transform(self, z) -> np.ndarray:
        return np.asarray(z, dtype=np.float64) @ self.components + self.mean

    def to_dict(self) -> dict:
        return {
            "components": self.components.tolist(),
            "explained_variance": self.explained_variance.tolist(),
            "captured_fraction": self.captured_fraction,
            "mean": self.mean.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PCAModel":
        return cls(
            np.asarray(d["components"], dtype=np.float64),
            np.asarray(d["explained_variance"], dtype=np.float64),
            float(d["captured_fraction"]),
            np.asarray(d["mean"], dtype=np.float64),
        )


def fit_pca(train, k: int = 4) -> PCAModel:
    """Top-``k`` eigenvectors of the sample covariance (N - 1 normalization).

    Signs are fixed so that each component's largest-magnitude entry is
    positive. The data are centered on their own mean, which is ~0 for
    standardized input.
    """
    x = _as_matrix(train)
    if x.shape[0] < 5:
        raise ValueError(f"PCA needs at least 5 training vectors, got {x.shape[0]}")
    if not 1 <= k <= x.shape[1]:
        raise ValueError(f"k must be in [1, {x.shape[1]}], got {k}")
    mean = x.mean(axis=0)
    cov = np.cov(x - mean, rowvar=False, ddof=1)
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1]
    evals = np.clip(evals[order], 0.0, None)
    evecs = evecs[:, order]
    comps = evecs[:, :k].T.copy()
    for row in comps:
        if row[np.argmax(np.abs(row))] < 0:
            row *= -1.0
    trace = float(evals.sum())
    captured = float(evals[:k].sum() / trace) if trace > 0 else 1.0
    return PCAModel(comps, evals[:k].copy(), captured, mean)


@dataclass(frozen=True)
class AngleScaler:
    mins: np.ndarray
    maxs: np.ndarray

    def transform(self, z) -> np.ndarray:
        """Map train-min to 0 and train-max to 2*pi; out-of-range values are clipped.

        A dimension with zero training range maps to 0.
        """
        z = np.asarray(z, dtype=np.float64)
        span = self.maxs - self.mins
        safe = np.where(span > 0, span, 1.0)
        angles = (z - self.mins) / safe * TWO_PI
        angles = np.where(span > 0, angles, 0.0)
        return np.clip(angles, 0.0, TWO_PI)

    def to_dict(self) -> dict:
        return {"mins": self.mins.tolist(), "maxs": self.maxs.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "AngleScaler":
        return cls(np.asarray(d["mins"], dtype=np.float64), np.asarray(d["maxs"], dtype=np.float64))


def fit_angle_scaler(projected) -> AngleScaler:
    z = _as_matrix(projected)
    return AngleScaler(z.min(axis=0), z.max(axis=0))


@dataclass(frozen=True)
class AnglePipeline:
    """Fitted standardize -> PCA -> angle chain used in front of the VQC."""

    standardizer: Standardizer
    pca: PCAModel
    scaler: AngleScaler

    def transform(self, x) -> np.ndarray:
        return project_and_rescale(x, self.standardizer, self.pca, self.scaler)

    def to_dict(self) -> dict:
        return {
            "standardizer": self.standardizer.to_dict(),
            "pca": self.pca.to_dict(),
            "angle_scaler": self.scaler.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AnglePipeline":
        return cls(
            Standardizer.from_dict(d["standardizer"]),
            PCAModel.from_dict(d["pca"]),
            AngleScaler.from_dict(d["angle_scaler"]),
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    @classmethod
    def load(cls, path) -> "AnglePipeline":
        return cls.from_dict(json.loads(Path(path).read_text()))


def fit_angle_pipeline(train, k: int = 4) -> AnglePipeline:
    std = fit_standardizer(train)
    z = std.transform(_as_matrix(train))
    pca = fit_pca(z, k)
    scaler = fit_angle_scaler(pca.transform(z))
    return AnglePipeline(std, pca, scaler)


def project_and_rescale(x, standardizer: Standardizer, pca: PCAModel, scaler: AngleScaler) -> np.ndarray:
    return scaler.transform(pca.transform(standardizer.transform(x)))
