"""Image loading and the 20 engineered features used by the EP and VQC models.

Every image is canonicalized to a 64x64 float64 array of intensities in
[0, 255] before feature extraction. The feature vector is laid out as::

    [mean, std, min, max, median,
     contrast, dissimilarity, homogeneity, energy, correlation,
     area, perimeter, eccentricity, solidity,
     edge_density, edge_mean, edge_std,
     low_freq, high_freq, freq_centroid]
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError
from scipy import ndimage

IMAGE_SIZE = 64
GLCM_LEVELS = 8
EDGE_THRESHOLD = 0.1
FFT_CUTOFF = 8.0

SUPPORTED_FORMATS = {"PNG", "TIFF", "JPEG", "MPO", "BMP"}

FEATURE_NAMES = (
    "mean_intensity",
    "std_intensity",
    "min_intensity",
    "max_intensity",
    "median_intensity",
    "glcm_contrast",
    "glcm_dissimilarity",
    "glcm_homogeneity",
    "glcm_energy",
    "glcm_correlation",
    "area",
    "perimeter",
    "eccentricity",
    "solidity",
    "edge_density",
    "edge_mean",
    "edge_std",
    "low_freq_energy",
    "high_freq_energy",
    "freq_centroid",
)
N_FEATURES = len(FEATURE_NAMES)

_LUMA = np.array([0.299, 0.587, 0.114])


class ImageFormatError(ValueError):
    """Raised when a file decodes but is not one of the accepted formats."""


# --------------------------------------------------------------------------- #
# Loading and canonicalization
# --------------------------------------------------------------------------- #


def bilinear_resize(img: np.ndarray, height: int, width: int) -> np.ndarray:
    """Resize a 2-D array with bilinear interpolation.

    Pixel centers are aligned (``src = (dst + 0.5) * scale - 0.5``) and
    out-of-range source coordinates are clamped, i.e. borders are replicated.
    """
    img = np.asarray(img, dtype=np.float64)
    in_h, in_w = img.shape
    if in_h == height and in_w == width:
        return img.copy()

    def _coords(n_out: int, n_in: int):
        src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
        src = np.clip(src, 0.0, n_in - 1)
        lo = np.floor(src).astype(int)
        hi = np.minimum(lo + 1, n_in - 1)
        return lo, hi, src - lo

    r0, r1, fr = _coords(height, in_h)
    c0, c1, fc = _coords(width, in_w)
    fr = fr[:, None]
    fc = fc[None, :]
    top = img[np.ix_(r0, c0)] * (1 - fc) + img[np.ix_(r0, c1)] * fc
    bottom = img[np.ix_(r1, c0)] * (1 - fc) + img[np.ix_(r1, c1)] * fc
    return top * (1 - fr) + bottom * fr


def to_gray_image(array) -> np.ndarray:
    """Canonicalize an array (H x W, H x W x 3 or H x W x 4) to a 64x64 gray image."""
    arr = np.asarray(array, dtype=np.float64)
    if arr.ndim == 3:
        if arr.shape[2] not in (3, 4):
            raise ValueError(f"expected 3 or 4 color channels, got {arr.shape[2]}")
        arr = arr[..., :3] @ _LUMA
    if arr.ndim != 2:
        raise ValueError(f"expected a 2-D image, got shape {arr.shape}")
    if arr.shape[0] == 0 or arr.shape[1] == 0:
        raise ValueError("image has a zero dimension")
    if not np.all(np.isfinite(arr)):
        raise ValueError("image contains non-finite values")
    if arr.shape != (IMAGE_SIZE, IMAGE_SIZE):
        arr = bilinear_resize(arr, IMAGE_SIZE, IMAGE_SIZE)
    return np.clip(arr, 0.0, 255.0)


def load_grayscale(path) -> np.ndarray:
    """Read an image file and return it as a 64x64 gray image in [0, 255]."""
    path = Path(path)
    try:
        with Image.open(path) as im:
            fmt = im.format
            if fmt not in SUPPORTED_FORMATS:
                raise ImageFormatError(f"{path}: unsupported image format {fmt!r}")
            im.load()
            if im.width == 0 or im.height == 0:
                raise ValueError(f"{path}: zero-dimension image")
            mode = im.mode
            if mode in ("I;16", "I;16B", "I;16L"):
                arr = np.asarray(im, dtype=np.float64) * (255.0 / 65535.0)
            elif mode in ("I", "F"):
                arr = np.asarray(im, dtype=np.float64)
            elif mode in ("L", "1"):
                arr = np.asarray(im.convert("L"), dtype=np.float64)
            else:
                arr = np.asarray(im.convert("RGB"), dtype=np.float64)
    except UnidentifiedImageError as exc:
        raise ImageFormatError(f"{path}: not a recognized image") from exc
    return to_gray_image(arr)


# --------------------------------------------------------------------------- #
# Feature groups
# --------------------------------------------------------------------------- #


def intensity_stats(img: np.ndarray) -> np.ndarray:
    """Mean, population std, min, max and lower median of the pixel intensities."""
    flat = np.sort(np.asarray(img, dtype=np.float64).ravel())
    median = flat[(flat.size - 1) // 2]
    return np.array([flat.mean(), flat.std(), flat[0], flat[-1], median])


def quantize(img: np.ndarray, levels: int = GLCM_LEVELS) -> np.ndarray:
    step = 256 // levels
    return np.clip(np.floor(np.asarray(img) / step), 0, levels - 1).astype(np.intp)


def glcm(img: np.ndarray, levels: int = GLCM_LEVELS) -> np.ndarray:
    """Symmetric, normalized co-occurrence matrix for the offset (0, +1)."""
    q = quantize(img, levels)
    left = q[:, :-1].ravel()
    right = q[:, 1:].ravel()
    P = np.zeros((levels, levels))
    np.add.at(P, (left, right), 1.0)
    P = P + P.T
    total = P.sum()
    if total == 0:
        # single-column image: no horizontal pairs
        P[0, 0] = 1.0
        return P
    return P / total


def glcm_features(img: np.ndarray) -> np.ndarray:
    """Contrast, dissimilarity, homogeneity, energy (ASM) and correlation."""
    P = glcm(img)
    levels = P.shape[0]
    i, j = np.meshgrid(np.arange(levels), np.arange(levels), indexing="ij")
    diff = np.abs(i - j)
    contrast = np.sum(P * diff**2)
    dissimilarity = np.sum(P * diff)
    homogeneity = np.sum(P / (1.0 + diff))
    energy = np.sum(P**2)
    # P is symmetric, so row and column marginals coincide
    mu = np.sum(i * P)
    var = np.sum((i - mu) ** 2 * P)
    if var <= 1e-15:
        correlation = 1.0
    else:
        correlation = np.sum((i - mu) * (j - mu) * P) / var
        correlation = float(np.clip(correlation, -1.0, 1.0))
    return np.array([contrast, dissimilarity, homogeneity, energy, correlation])


def otsu_threshold(img: np.ndarray) -> int | None:
    """Otsu threshold on the 256-bin histogram, or None if only one bin is occupied.

    Foreground is every pixel whose bin index is strictly greater than the
    returned value.
    """
    bins = np.clip(np.floor(np.asarray(img)), 0, 255).astype(np.intp)
    hist = np.bincount(bins.ravel(), minlength=256).astype(np.float64)
    if np.count_nonzero(hist) < 2:
        return None
    levels = np.arange(256, dtype=np.float64)
    w0 = np.cumsum(hist)
    s0 = np.cumsum(hist * levels)
    total, total_sum = w0[-1], s0[-1]
    w1 = total - w0
    with np.errstate(divide="ignore", invalid="ignore"):
        mu0 = s0 / w0
        mu1 = (total_sum - s0) / w1
        between = w0 * w1 * (mu0 - mu1) ** 2
    between[(w0 == 0) | (w1 == 0)] = -1.0
    return int(np.argmax(between))


def largest_component(mask: np.ndarray) -> np.ndarray:
    """Largest 4-connected component of a boolean mask (first in raster order on ties)."""
    labels, n = ndimage.label(mask)
    if n == 0:
        return np.zeros_like(mask, dtype=bool)
    sizes = np.bincount(labels.ravel())[1:]
    return labels == (int(np.argmax(sizes)) + 1)


def convex_hull(points: np.ndarray) -> np.ndarray:
    """Andrew's monotone chain; returns hull vertices counter-clockwise, collinear points dropped."""
    pts = sorted(set(map(tuple, np.asarray(points, dtype=np.float64))))
    if len(pts) <= 2:
        return np.array(pts, dtype=np.float64).reshape(-1, 2)

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    lower: list = []
    for p in pts:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    upper: list = []
    for p in reversed(pts):
        while len(upper) >= 2 and cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    return np.array(lower[:-1] + upper[:-1], dtype=np.float64)


def polygon_area(vertices: np.ndarray) -> float:
    """Shoelace area of a simple polygon."""
    if len(vertices) < 3:
        return 0.0
    x, y = vertices[:, 0], vertices[:, 1]
    return 0.5 * abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def pixel_hull_area(coords: np.ndarray) -> float:
    """Area of the convex hull of the union of unit pixel squares.

    The hull over pixel centers, dilated by a unit square, has area
    ``shoelace + width + height + 1`` where width/height are the extents of
    the centers. A convex pixel region therefore has solidity 1.
    """
    hull = convex_hull(coords)
    extent = coords.max(axis=0) - coords.min(axis=0)
    return polygon_area(hull) + float(extent.sum()) + 1.0


def morphology_features(img: np.ndarray) -> np.ndarray:
    """Area, perimeter, eccentricity and solidity of the dominant bright region."""
    t = otsu_threshold(img)
    if t is None:
        return np.zeros(4)
    bins = np.clip(np.floor(np.asarray(img)), 0, 255)
    region = largest_component(bins > t)
    area = int(region.sum())
    if area == 0:
        return np.zeros(4)

    padded = np.pad(region, 1, constant_values=False)
    inner = padded[1:-1, 1:-1]
    perimeter = 0
    for dr, dc in ((-1, 0), (1, 0), (0, -1), (0, 1)):
        neighbour = padded[1 + dr : padded.shape[0] - 1 + dr, 1 + dc : padded.shape[1] - 1 + dc]
        perimeter += int(np.count_nonzero(inner & ~neighbour))

    coords = np.argwhere(region).astype(np.float64)
    # each pixel is a unit square: add its own 1/12 second moment per axis
    cov = np.cov(coords, rowvar=False, bias=True) + np.eye(2) / 12.0
    lam = np.linalg.eigvalsh(cov)
    eccentricity = float(np.sqrt(max(0.0, 1.0 - lam[0] / lam[1])))

    solidity = area / pixel_hull_area(coords)
    return np.array([float(area), float(perimeter), eccentricity, solidity])


def sobel_magnitude(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    gx = ndimage.sobel(img, axis=1, mode="nearest")
    gy = ndimage.sobel(img, axis=0, mode="nearest")
    return np.hypot(gx, gy)


def edge_features(img: np.ndarray) -> np.ndarray:
    """Edge density, mean Sobel magnitude and population std of the magnitude."""
    mag = sobel_magnitude(img)
    peak = mag.max()
    density = float(np.mean(mag > EDGE_THRESHOLD * peak)) if peak > 0 else 0.0
    return np.array([density, mag.mean(), mag.std()])


def radial_frequency(shape: tuple[int, int]) -> np.ndarray:
    """Radial frequency (cycles per image) for each cell of a centered spectrum."""
    fu = np.fft.fftshift(np.fft.fftfreq(shape[0], d=1.0 / shape[0]))
    fv = np.fft.fftshift(np.fft.fftfreq(shape[1], d=1.0 / shape[1]))
    return np.hypot(fu[:, None], fv[None, :])


def fft_features(img: np.ndarray) -> np.ndarray:
    """Low-band energy fraction, high-band energy fraction and spectral centroid."""
    img = np.asarray(img, dtype=np.float64)
    power = np.abs(np.fft.fftshift(np.fft.fft2(img))) ** 2
    total = power.sum()
    if total <= 0:
        return np.array([1.0, 0.0, 0.0])
    r = radial_frequency(img.shape)
    low = power[r <= FFT_CUTOFF].sum() / total
    return np.array([low, 1.0 - low, np.sum(r * power) / total])


def extract_features(img: np.ndarray) -> np.ndarray:
    """Full 20-dimensional feature vector for one canonical gray image."""
    return np.concatenate(
        [
            intensity_stats(img),
            glcm_features(img),
            morphology_features(img),
            edge_features(img),
            fft_features(img),
        ]
    )


def extract_file(path) -> np.ndarray:
    return extract_features(load_grayscale(path))
