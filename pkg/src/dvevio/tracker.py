"""Corner detection inside masked regions, cross-spectral selection and
translation-only photometric patch alignment."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from dvevio.entropy import RegionEntropyMap, RegionGrid
from dvevio.errors import InvalidInputError, OutOfViewError
from dvevio.imaging import Frame, Spectrum, sobel

SPECTRUM_ORDER = {Spectrum.VISUAL: 0, Spectrum.THERMAL: 1}


@dataclass(frozen=True)
class FeatureCandidate:
    x: float
    y: float
    score: float
    spectrum: Spectrum
    region_index: int = -1

    @property
    def pixel(self):
        return (self.x, self.y)


@dataclass(frozen=True)
class MatchResult:
    measured_pixel: tuple
    photometric_residual: float
    converged: bool
    iterations: int


# --- image pyramid and sampling ----------------------------------------------


class ImagePyramid:
    """Float image pyramid; each level is a 2x2 box average of the previous."""

    def __init__(self, pixels, levels=2):
        img = np.asarray(pixels, dtype=np.float64)
        self.levels = [img]
        for _ in range(levels - 1):
            prev = self.levels[-1]
            h, w = (prev.shape[0] // 2) * 2, (prev.shape[1] // 2) * 2
            p = prev[:h, :w]
            self.levels.append(0.25 * (p[0::2, 0::2] + p[1::2, 0::2] + p[0::2, 1::2] + p[1::2, 1::2]))

    @classmethod
    def of(cls, frame_or_pyramid, levels=2):
        if isinstance(frame_or_pyramid, ImagePyramid):
            return frame_or_pyramid
        if isinstance(frame_or_pyramid, Frame):
            return cls(frame_or_pyramid.pixels, levels)
        return cls(frame_or_pyramid, levels)

    def __len__(self):
        return len(self.levels)


def to_level(p, level):
    s = 2.0**level
    return (p[0] + 0.5) / s - 0.5, (p[1] + 0.5) / s - 0.5


def from_level(p, level):
    s = 2.0**level
    return (p[0] + 0.5) * s - 0.5, (p[1] + 0.5) * s - 0.5


def bilinear(img, xs, ys):
    """Bilinear samples at float coordinates; caller guarantees bounds."""
    x0 = np.floor(xs).astype(np.intp)
    y0 = np.floor(ys).astype(np.intp)
    fx = xs - x0
    fy = ys - y0
    x1 = np.minimum(x0 + 1, img.shape[1] - 1)
    y1 = np.minimum(y0 + 1, img.shape[0] - 1)
    top = img[y0, x0] * (1 - fx) + img[y0, x1] * fx
    bot = img[y1, x0] * (1 - fx) + img[y1, x1] * fx
    return top * (1 - fy) + bot * fy


def _inside(img, cx, cy, half):
    return half <= cx <= img.shape[1] - 1 - half and half <= cy <= img.shape[0] - 1 - half


class PatchPyramid:
    """Square reference patches around a feature, one per pyramid level.

    Each stored level carries a one-pixel border so template gradients can be
    taken by central differences over the ``size x size`` interior.
    """

    def __init__(self, extended, size):
        self.extended = extended
        self.size = size
        inner = [e[1:-1, 1:-1] for e in extended]
        self.levels = inner
        self.gradients = [
            (0.5 * (e[1:-1, 2:] - e[1:-1, :-2]), 0.5 * (e[2:, 1:-1] - e[:-2, 1:-1]))
            for e in extended
        ]

    @classmethod
    def extract(cls, image, pixel, size=8, levels=2):
        pyr = ImagePyramid.of(image, levels)
        half = 0.5 * (size + 1)  # interior half-width plus the gradient border
        offs = np.arange(size + 2, dtype=float) - 0.5 * (size + 1)
        extended = []
        for lvl in range(len(pyr)):
            img = pyr.levels[lvl]
            cx, cy = to_level(pixel, lvl)
            if not _inside(img, cx, cy, half + 1e-9):
                raise OutOfViewError(f"patch at {pixel} leaves the image at level {lvl}")
            ys, xs = np.meshgrid(cy + offs, cx + offs, indexing="ij")
            extended.append(bilinear(img, xs, ys))
        return cls(extended, size)

    @staticmethod
    def margin(size=8, levels=2):
        """Minimum pixel distance from the border for a full extraction."""
        return 0.5 * (size + 1) * 2 ** (levels - 1) + 2.0 ** (levels - 1)


def align_patch(
    frame,
    reference: PatchPyramid,
    predicted_pixel,
    search_radius: float,
    *,
    max_iterations: int = 30,
    residual_threshold: float = 12.0,
    min_gradient: float = 3.0,
    step_tolerance: float = 1e-3,
    affine=None,
) -> MatchResult:
    """Coarse-to-fine inverse-compositional alignment of a translation.

    ``affine`` (2x2, default identity) is a fixed warp applied to the patch
    sampling grid, e.g. the predicted scale and shear since extraction.

    Raises :class:`OutOfViewError` when the prediction leaves the frame.
    ``min_gradient`` bounds the smallest eigenvalue of the per-pixel template
    Hessian; weaker templates are reported as not converged.
    """
    pyr = ImagePyramid.of(frame, len(reference.levels))
    size = reference.size
    half = 0.5 * (size - 1)
    base = pyr.levels[0]
    px, py = float(predicted_pixel[0]), float(predicted_pixel[1])
    if not (0.0 <= px <= base.shape[1] - 1 and 0.0 <= py <= base.shape[0] - 1):
        raise OutOfViewError(f"prediction {predicted_pixel} outside frame")

    offs = np.arange(size, dtype=float) - half
    oy, ox = np.meshgrid(offs, offs, indexing="ij")
    A = np.eye(2) if affine is None else np.asarray(affine, dtype=float)
    ox, oy = A[0, 0] * ox.ravel() + A[0, 1] * oy.ravel(), A[1, 0] * ox.ravel() + A[1, 1] * oy.ravel()
    half = half * float(np.abs(A).sum(axis=1).max())

    gx0, gy0 = reference.gradients[0]
    H0 = np.array([[np.sum(gx0 * gx0), np.sum(gx0 * gy0)], [np.sum(gx0 * gy0), np.sum(gy0 * gy0)]])
    if np.linalg.eigvalsh(H0)[0] / size**2 < min_gradient:
        return MatchResult((px, py), float("inf"), False, 0)

    pos = np.array([px, py])
    iterations = 0
    last_step = np.inf
    for lvl in reversed(range(len(reference.levels))):
        img = pyr.levels[lvl]
        T = reference.levels[lvl].ravel()
        gx, gy = (g.ravel() for g in reference.gradients[lvl])
        H = np.array([[gx @ gx, gx @ gy], [gx @ gy, gy @ gy]])
        if np.linalg.cond(H) > 1e8:
            continue
        Hinv = np.linalg.inv(H)
        c = np.array(to_level(pos, lvl))
        for _ in range(max_iterations):
            if not _inside(img, c[0], c[1], half):
                return MatchResult(tuple(from_level(c, lvl)), float("inf"), False, iterations)
            err = bilinear(img, c[0] + ox, c[1] + oy) - T
            dp = Hinv @ np.array([gx @ err, gy @ err])
            c = c - A @ dp
            iterations += 1
            # keep the estimate inside the search disc
            p0 = np.array(from_level(c, lvl))
            d = p0 - (px, py)
            dist = math.hypot(*d)
            if dist > search_radius:
                p0 = np.array([px, py]) + d * (search_radius / dist)
                c = np.array(to_level(p0, lvl))
            last_step = math.hypot(*dp)
            if last_step < step_tolerance:
                break
        pos = np.array(from_level(c, lvl))

    if not _inside(base, pos[0], pos[1], half):
        return MatchResult(tuple(pos), float("inf"), False, iterations)
    err = bilinear(base, pos[0] + ox, pos[1] + oy) - reference.levels[0].ravel()
    residual = float(np.mean(np.abs(err)))
    displacement = math.hypot(pos[0] - px, pos[1] - py)
    converged = (
        residual <= residual_threshold
        and displacement < search_radius - 1e-6
        and last_step < 0.1
    )
    return MatchResult((float(pos[0]), float(pos[1])), residual, converged, iterations)


# --- detection ----------------------------------------------------------------


def shi_tomasi(pixels):
    """Minimum eigenvalue of the 3x3-summed gradient structure tensor."""
    gx, gy = sobel(pixels)
    gx /= 8.0
    gy /= 8.0
    a = ndimage.uniform_filter(gx * gx, 3, mode="constant") * 9.0
    b = ndimage.uniform_filter(gx * gy, 3, mode="constant") * 9.0
    c = ndimage.uniform_filter(gy * gy, 3, mode="constant") * 9.0
    return 0.5 * (a + c) - np.sqrt(0.25 * (a - c) ** 2 + b * b)


def _parabola_offset(lo, mid, hi):
    denom = lo - 2.0 * mid + hi
    if denom >= 0:
        return 0.0
    return float(np.clip(0.5 * (lo - hi) / denom, -0.5, 0.5))


def detect(
    frame: Frame,
    mask: RegionEntropyMap | None,
    min_distance: float = 20.0,
    *,
    existing=(),
    border: float = 12.0,
    min_score: float = 20.0,
    quality: float = 0.01,
    max_candidates: int = 200,
    rng: np.random.Generator | None = None,
    jitter: float = 0.25,
    grid: RegionGrid | None = None,
) -> list[FeatureCandidate]:
    """Shi-Tomasi corners restricted to Candidate regions of ``mask``.

    ``mask=None`` searches the whole frame. ``existing`` holds pixels of
    currently tracked features of the same spectrum; no returned candidate lies
    within ``min_distance`` of them or of another returned candidate. When
    ``rng`` is given each sub-pixel refinement is perturbed by a uniform offset
    in ``[-jitter, jitter]``.
    """
    score = shi_tomasi(frame.pixels)
    h, w = score.shape
    peak = score.max()
    if peak <= 0:
        return []
    thresh = max(min_score, quality * peak)
    local_max = score == ndimage.maximum_filter(score, size=3, mode="constant")
    keep = local_max & (score > thresh)
    b = int(math.ceil(border))
    keep[:b] = keep[h - b:] = False
    keep[:, :b] = keep[:, w - b:] = False
    cand_img = None
    if mask is not None:
        if (mask.grid.width, mask.grid.height) != (w, h):
            raise InvalidInputError("mask grid does not match frame size")
        cand_img = mask.candidate_image()
        keep &= cand_img
        grid = mask.grid
    ys, xs = np.nonzero(keep)
    if len(xs) == 0:
        return []
    s = score[ys, xs]
    # descending score, ties by (x, y)
    order = np.lexsort((ys, xs, -s))
    xs, ys, s = xs[order], ys[order], s[order]

    accepted: list[FeatureCandidate] = []
    taken = [tuple(p) for p in existing]
    min_d2 = min_distance * min_distance
    for x, y, sc in zip(xs, ys, s):
        dx = _parabola_offset(score[y, x - 1], sc, score[y, x + 1])
        dy = _parabola_offset(score[y - 1, x], sc, score[y + 1, x])
        if rng is not None:
            dx += rng.uniform(-jitter, jitter)
            dy += rng.uniform(-jitter, jitter)
        fx, fy = x + dx, y + dy
        if cand_img is not None and not cand_img[int(round(fy)), int(round(fx))]:
            continue
        if any((fx - tx) ** 2 + (fy - ty) ** 2 < min_d2 for tx, ty in taken):
            continue
        region = -1
        if grid is not None:
            row, col = grid.region_of(int(round(fx)), int(round(fy)))
            region = row * grid.grid_r + col
        spectrum = frame.spectrum
        accepted.append(FeatureCandidate(float(fx), float(fy), float(sc), spectrum, region))
        taken.append((fx, fy))
        if len(accepted) >= max_candidates:
            break
    return accepted


def select_best(visual, thermal, free_slots: int) -> list[FeatureCandidate]:
    """Top ``free_slots`` candidates of both spectra by max-normalized score.

    Ties go to the visual spectrum, then lower ``x``, then lower ``y``.
    """
    if free_slots <= 0:
        return []
    pool = []
    for cands in (visual, thermal):
        if not cands:
            continue
        top = max(c.score for c in cands)
        pool.extend((c.score / top, c) for c in cands)
    pool.sort(key=lambda t: (-t[0], SPECTRUM_ORDER[t[1].spectrum], t[1].x, t[1].y))
    return [c for _, c in pool[:free_slots]]
