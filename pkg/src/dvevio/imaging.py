"""Frames, Sobel gradient images and normalized histograms."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from dvevio.errors import IngestionError, InvalidInputError

#: largest Sobel magnitude on 8-bit input is 4 * 255 * sqrt(2) ~= 1442.5
GRADIENT_RANGE = (0.0, 1448.0)
DEFAULT_BINS = 64


class Spectrum(enum.Enum):
    VISUAL = "visual"
    THERMAL = "thermal"


@dataclass(frozen=True, eq=False)
class Frame:
    """A timestamped 8-bit single-channel image from one camera."""

    pixels: np.ndarray
    timestamp: float
    spectrum: Spectrum = Spectrum.VISUAL
    camera_id: str = "cam0"

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 2:
            raise InvalidInputError("frame pixels must be a 2-D array (height, width)")
        if px.dtype != np.uint8:
            raise InvalidInputError(f"frame pixels must be uint8, got {px.dtype}")
        if px.shape[0] < 3 or px.shape[1] < 3:
            raise InvalidInputError("frame must be at least 3x3 pixels")
        if not np.isfinite(self.timestamp):
            raise InvalidInputError("frame timestamp must be finite")
        px = np.ascontiguousarray(px)
        px.setflags(write=False)
        object.__setattr__(self, "pixels", px)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]


@dataclass(frozen=True, eq=False)
class GradientImage:
    magnitude: np.ndarray

    @property
    def width(self) -> int:
        return self.magnitude.shape[1]

    @property
    def height(self) -> int:
        return self.magnitude.shape[0]


@dataclass(frozen=True, eq=False)
class ProbabilityVector:
    """Normalized histogram. ``empty`` marks a histogram of zero samples."""

    bins: np.ndarray
    bin_edges: np.ndarray
    empty: bool = False

    def __len__(self):
        return len(self.bins)


def sobel(image):
    """Return ``(gx, gy)`` 3x3 Sobel responses; the 1-pixel border is zero."""
    I = np.asarray(image, dtype=np.float64)
    gx = np.zeros_like(I)
    gy = np.zeros_like(I)
    gx[1:-1, 1:-1] = (
        (I[:-2, 2:] + 2.0 * I[1:-1, 2:] + I[2:, 2:])
        - (I[:-2, :-2] + 2.0 * I[1:-1, :-2] + I[2:, :-2])
    )
    gy[1:-1, 1:-1] = (
        (I[2:, :-2] + 2.0 * I[2:, 1:-1] + I[2:, 2:])
        - (I[:-2, :-2] + 2.0 * I[:-2, 1:-1] + I[:-2, 2:])
    )
    return gx, gy


def compute_gradient(frame: Frame) -> GradientImage:
    """Edge-filtered gradient magnitude ``sqrt(Gx**2 + Gy**2)`` of a frame."""
    if not isinstance(frame, Frame):
        raise InvalidInputError("compute_gradient expects a Frame")
    gx, gy = sobel(frame.pixels)
    mag = np.hypot(gx, gy)
    mag.setflags(write=False)
    return GradientImage(mag)


def uniform_edges(bins=DEFAULT_BINS, value_range=GRADIENT_RANGE):
    return np.linspace(value_range[0], value_range[1], bins + 1)


def _check_edges(bin_edges):
    edges = np.asarray(bin_edges, dtype=float)
    if edges.ndim != 1 or len(edges) < 2:
        raise InvalidInputError("bin_edges needs at least two entries")
    if not np.all(np.diff(edges) > 0):
        raise InvalidInputError("bin_edges must be strictly increasing")
    return edges


def bin_index(values, bin_edges):
    """Bin of each value; out-of-range values clamp to the first/last bin."""
    edges = np.asarray(bin_edges)
    idx = np.searchsorted(edges, values, side="right") - 1
    return np.clip(idx, 0, len(edges) - 2)


def histogram(values, bin_edges) -> ProbabilityVector:
    """Normalized histogram of ``values`` over ``bin_edges``.

    Values above the last edge fall into the last bin. An empty input yields a
    vector flagged ``empty`` whose bins are all zero.
    """
    edges = _check_edges(bin_edges)
    vals = np.asarray(values, dtype=float).ravel()
    if not np.all(np.isfinite(vals)):
        raise InvalidInputError("histogram values must be finite")
    nbins = len(edges) - 1
    if vals.size == 0:
        return ProbabilityVector(np.zeros(nbins), edges, empty=True)
    counts = np.bincount(bin_index(vals, edges), minlength=nbins)
    return ProbabilityVector(counts / vals.size, edges)


# --- file I/O -----------------------------------------------------------------


def load_frame(path, timestamp, spectrum=Spectrum.VISUAL, camera_id="cam0") -> Frame:
    """Read an 8-bit grayscale PNG or binary PGM (P5)."""
    path = Path(path)
    try:
        with Image.open(path) as img:
            if img.mode not in ("L", "P"):
                raise IngestionError(f"{path}: expected 8-bit grayscale, got mode {img.mode}")
            pixels = np.array(img.convert("L"), dtype=np.uint8)
    except (OSError, SyntaxError) as exc:
        raise IngestionError(f"{path}: cannot read image ({exc})") from exc
    return Frame(pixels, float(timestamp), spectrum, camera_id)


def save_frame(path, pixels):
    """Write an 8-bit grayscale PNG (or PGM when the suffix is ``.pgm``)."""
    path = Path(path)
    img = Image.fromarray(np.asarray(pixels, dtype=np.uint8), mode="L")
    if path.suffix.lower() == ".pgm":
        img.save(path, format="PPM")
    else:
        img.save(path, format="PNG", optimize=False)
