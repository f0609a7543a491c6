"""Region-wise weighted spatial entropy and the temporal feature-selection mask."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from PIL import Image, ImageDraw

from dvevio.errors import InvalidInputError
from dvevio.imaging import (
    DEFAULT_BINS,
    GradientImage,
    ProbabilityVector,
    bin_index,
    uniform_edges,
)


class RegionStatus(enum.IntEnum):
    BELOW_MEAN = 0
    REJECTED_TEMPORAL = 1
    CANDIDATE = 2


@dataclass(frozen=True)
class RegionGrid:
    """``R x R`` rectangles tiling a ``width x height`` image.

    Rectangles are ``(x0, y0, x1, y1)`` half-open. The last row and column
    absorb the remainder of non-divisible dimensions.
    """

    grid_r: int
    width: int
    height: int

    def __post_init__(self):
        if self.grid_r < 1:
            raise InvalidInputError("grid_r must be >= 1")
        if self.width < self.grid_r or self.height < self.grid_r:
            raise InvalidInputError("image smaller than the region grid")

    @property
    def cell_w(self) -> int:
        return self.width // self.grid_r

    @property
    def cell_h(self) -> int:
        return self.height // self.grid_r

    @property
    def region_rects(self):
        R = self.grid_r
        xs = [i * self.cell_w for i in range(R)] + [self.width]
        ys = [j * self.cell_h for j in range(R)] + [self.height]
        return [(xs[i], ys[j], xs[i + 1], ys[j + 1]) for j in range(R) for i in range(R)]

    def region_of(self, x, y):
        """``(row, col)`` of the region holding integer pixel ``(x, y)``."""
        col = min(int(x) // self.cell_w, self.grid_r - 1)
        row = min(int(y) // self.cell_h, self.grid_r - 1)
        return row, col

    def labels(self):
        """Flat region index ``row * R + col`` for every pixel."""
        return _grid_labels(self.grid_r, self.width, self.height)


@lru_cache(maxsize=16)
def _grid_labels(grid_r, width, height):
    cw, ch = width // grid_r, height // grid_r
    cols = np.minimum(np.arange(width) // cw, grid_r - 1)
    rows = np.minimum(np.arange(height) // ch, grid_r - 1)
    labels = rows[:, None] * grid_r + cols[None, :]
    labels.setflags(write=False)
    return labels


@dataclass(frozen=True, eq=False)
class GaussianWeightVector:
    weights: np.ndarray
    center_bin: float
    sigma_bins: float


def gaussian_weights(bins=DEFAULT_BINS, center_bin=None, sigma_bins=None):
    """Gaussian bin weights, peak 1 at ``center_bin`` (defaults ``B/2``, ``B/6``)."""
    if center_bin is None:
        center_bin = bins / 2.0
    if sigma_bins is None:
        sigma_bins = bins / 6.0
    if sigma_bins <= 0:
        raise InvalidInputError("sigma_bins must be positive")
    k = np.arange(bins, dtype=float)
    w = np.exp(-((k - center_bin) ** 2) / (2.0 * sigma_bins**2))
    return GaussianWeightVector(w, float(center_bin), float(sigma_bins))


def _plogp(p):
    p = np.asarray(p, dtype=float)
    out = np.zeros_like(p)
    nz = p > 0
    out[nz] = np.log2(p[nz])
    return out


def image_entropy(p: ProbabilityVector) -> float:
    """Shannon entropy in bits; empty vectors have zero entropy."""
    if p.empty:
        return 0.0
    bins = np.asarray(p.bins, dtype=float)
    return float(-np.sum(bins * _plogp(bins))) + 0.0


def region_entropy(p: ProbabilityVector, w: GaussianWeightVector) -> float:
    """Weighted entropy ``-sum((w * p) * log2(p))``; zero-probability bins drop out."""
    weights = w.weights if isinstance(w, GaussianWeightVector) else np.asarray(w, dtype=float)
    if len(weights) != len(p.bins):
        raise InvalidInputError(
            f"weight length {len(weights)} != histogram length {len(p.bins)}"
        )
    if p.empty:
        return 0.0
    bins = np.asarray(p.bins, dtype=float)
    return float(-np.sum((weights * bins) * _plogp(bins))) + 0.0


def region_histograms(gradient: GradientImage, grid: RegionGrid, bin_edges):
    """Per-region normalized gradient histograms, shape ``(R*R, B)``."""
    if (gradient.width, gradient.height) != (grid.width, grid.height):
        raise InvalidInputError(
            f"gradient {gradient.width}x{gradient.height} does not match grid "
            f"{grid.width}x{grid.height}"
        )
    nb = len(bin_edges) - 1
    nreg = grid.grid_r**2
    idx = grid.labels().ravel() * nb + bin_index(gradient.magnitude.ravel(), bin_edges)
    counts = np.bincount(idx, minlength=nreg * nb).reshape(nreg, nb).astype(float)
    return counts / counts.sum(axis=1, keepdims=True)


@dataclass(frozen=True, eq=False)
class RegionEntropyMap:
    """Region entropies, their classification and the above-mean history.

    ``history`` has shape ``(K, R, R)``; the last slice is the current frame and
    only the last ``min(frames_seen, K)`` slices are meaningful.
    """

    grid: RegionGrid
    entropies: np.ndarray
    mean_entropy: float
    status: np.ndarray
    history: np.ndarray
    frames_seen: int

    @property
    def above_mean(self):
        return self.history[-1]

    def candidate_image(self):
        """Boolean per-pixel mask, true inside Candidate regions."""
        cand = (self.status == RegionStatus.CANDIDATE).ravel()
        return cand[self.grid.labels()]

    def count(self, status):
        return int(np.sum(self.status == status))


def build_mask(
    gradient: GradientImage,
    grid: RegionGrid,
    w: GaussianWeightVector,
    prior: RegionEntropyMap | None = None,
    K: int = 3,
    bin_edges=None,
) -> RegionEntropyMap:
    """Classify every region of ``gradient`` and roll the temporal history.

    A region is a Candidate when its weighted entropy exceeded the mean over
    all regions in each of the last ``K`` frames (or in every frame so far
    while fewer than ``K`` frames have been seen).
    """
    if K < 1:
        raise InvalidInputError("K must be >= 1")
    if bin_edges is None:
        bin_edges = uniform_edges(len(w.weights))
    if len(bin_edges) - 1 != len(w.weights):
        raise InvalidInputError("bin count and weight length differ")
    R = grid.grid_r
    hists = region_histograms(gradient, grid, bin_edges)
    vectors = [ProbabilityVector(h, bin_edges) for h in hists]
    entropies = np.array([region_entropy(p, w) for p in vectors]).reshape(R, R)
    mean = float(np.mean(entropies))
    above = entropies > mean

    if prior is not None:
        if prior.grid != grid or prior.history.shape[0] != K:
            raise InvalidInputError("prior mask was built with a different grid or K")
        history = np.concatenate([prior.history[1:], above[None]], axis=0)
        frames_seen = prior.frames_seen + 1
    else:
        history = np.zeros((K, R, R), dtype=bool)
        history[-1] = above
        frames_seen = 1
    window = history[-min(frames_seen, K):]
    consistent = np.all(window, axis=0)

    status = np.full((R, R), RegionStatus.BELOW_MEAN, dtype=np.int8)
    status[above & ~consistent] = RegionStatus.REJECTED_TEMPORAL
    status[above & consistent] = RegionStatus.CANDIDATE
    for arr in (entropies, status, history):
        arr.setflags(write=False)
    return RegionEntropyMap(grid, entropies, mean, status, history, frames_seen)


def mask_lookup(emap: RegionEntropyMap, pixel) -> bool:
    """True iff ``pixel`` lies in a Candidate region."""
    x, y = pixel
    if not (0 <= x < emap.grid.width and 0 <= y < emap.grid.height):
        raise InvalidInputError(f"pixel {pixel} outside {emap.grid.width}x{emap.grid.height}")
    row, col = emap.grid.region_of(x, y)
    return bool(emap.status[row, col] == RegionStatus.CANDIDATE)


class EntropyMasker:
    """Stateful per-stream wrapper that threads the history between frames."""

    def __init__(self, width, height, grid_r=8, K=3, bins=DEFAULT_BINS,
                 center_bin=None, sigma_bins=None):
        self.grid = RegionGrid(grid_r, width, height)
        self.K = K
        self.weights = gaussian_weights(bins, center_bin, sigma_bins)
        self.bin_edges = uniform_edges(bins)
        self.current: RegionEntropyMap | None = None

    def update(self, gradient: GradientImage) -> RegionEntropyMap:
        self.current = build_mask(
            gradient, self.grid, self.weights, self.current, self.K, self.bin_edges
        )
        return self.current


_STATUS_COLOURS = {
    RegionStatus.CANDIDATE: (0, 220, 0),
    RegionStatus.REJECTED_TEMPORAL: (230, 0, 0),
    RegionStatus.BELOW_MEAN: (128, 128, 128),
}


def render_overlay(pixels, emap: RegionEntropyMap, features=()):
    """RGB debug image with region outlines and optional feature crosses."""
    img = Image.fromarray(np.asarray(pixels, dtype=np.uint8), mode="L").convert("RGB")
    draw = ImageDraw.Draw(img)
    R = emap.grid.grid_r
    rects = emap.grid.region_rects
    # gray first so coloured outlines win on shared edges
    order = sorted(range(R * R), key=lambda k: int(emap.status.flat[k]))
    for k in order:
        x0, y0, x1, y1 = rects[k]
        draw.rectangle([x0, y0, x1 - 1, y1 - 1],
                       outline=_STATUS_COLOURS[RegionStatus(int(emap.status.flat[k]))])
    for x, y in features:
        draw.line([x - 2, y, x + 2, y], fill=(255, 255, 0))
        draw.line([x, y - 2, x, y + 2], fill=(255, 255, 0))
    return img
