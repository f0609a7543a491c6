"""Procedurally textured corridor and a per-pixel ray caster.

The corridor runs along world +x. Its walls sit at ``y = +-width/2``, the floor
at ``z = 0`` and the ceiling at ``z = height``; end caps close it so every ray
has a finite depth (needed by the fog model).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage


@dataclass(frozen=True)
class TextureStyle:
    """Value-noise octaves (lattice spacings in metres) and a contrast sigmoid."""

    spacings: tuple
    gain: float
    low: float = 25.0
    high: float = 230.0


VISUAL_STYLE = TextureStyle(spacings=(0.6, 0.3, 0.15, 0.08), gain=9.0)
THERMAL_STYLE = TextureStyle(spacings=(1.2, 0.6, 0.3, 0.15), gain=6.0, low=40.0, high=210.0)


def value_noise(shape_m, texel, style: TextureStyle, rng):
    """Texture of ``shape_m`` metres sampled every ``texel`` metres, in [low, high]."""
    h = int(round(shape_m[0] / texel))
    w = int(round(shape_m[1] / texel))
    acc = np.zeros((h, w), dtype=np.float64)
    amp_total = 0.0
    for k, spacing in enumerate(style.spacings):
        lh = max(int(np.ceil(shape_m[0] / spacing)) + 4, 4)
        lw = max(int(np.ceil(shape_m[1] / spacing)) + 4, 4)
        lattice = rng.random((lh, lw))
        up = ndimage.zoom(lattice, (spacing / texel, spacing / texel), order=3, mode="nearest")
        amp = 0.6**k
        acc += amp * up[:h, :w]
        amp_total += amp
    acc /= amp_total
    acc = (acc - acc.mean()) / (acc.std() + 1e-12)
    s = 1.0 / (1.0 + np.exp(-style.gain * 0.25 * acc))
    return (style.low + (style.high - style.low) * s).astype(np.float32)


def mip_chain(tex, levels=6):
    chain = [tex]
    for _ in range(levels - 1):
        prev = chain[-1]
        if min(prev.shape) < 4:
            break
        blurred = ndimage.uniform_filter(prev, 2, mode="nearest")
        chain.append(np.ascontiguousarray(blurred[::2, ::2]))
    return chain


def _bilinear_clamped(img, xs, ys):
    h, w = img.shape
    xs = np.clip(xs, 0.0, w - 1.000001)
    ys = np.clip(ys, 0.0, h - 1.000001)
    x0 = xs.astype(np.intp)
    y0 = ys.astype(np.intp)
    fx = xs - x0
    fy = ys - y0
    top = img[y0, x0] * (1 - fx) + img[y0, x0 + 1] * fx
    bot = img[y0 + 1, x0] * (1 - fx) + img[y0 + 1, x0 + 1] * fx
    return top * (1 - fy) + bot * fy


class Surface:
    """Axis-aligned rectangle ``coord[axis] == value`` with a mip-mapped texture.

    ``u_axis``/``v_axis`` pick the world coordinates used as texture columns
    and rows; ``origin`` is their world value at texel (0, 0).
    """

    def __init__(self, axis, value, u_axis, v_axis, origin, extent, texel, style, rng):
        self.axis = axis
        self.value = value
        self.u_axis = u_axis
        self.v_axis = v_axis
        self.origin = origin
        self.texel = texel
        self.mips = mip_chain(value_noise((extent[1], extent[0]), texel, style, rng))

    def sample(self, hits, footprint):
        u = (hits[:, self.u_axis] - self.origin[0]) / self.texel
        v = (hits[:, self.v_axis] - self.origin[1]) / self.texel
        level = np.clip(np.log2(np.maximum(footprint / self.texel, 1e-9)), 0.0, len(self.mips) - 1.0)
        lo = np.floor(level).astype(int)
        frac = level - lo
        out = np.empty(len(u))
        for lvl in np.unique(lo):
            sel = lo == lvl
            s = 2.0**lvl
            a = _bilinear_clamped(self.mips[lvl], (u[sel] + 0.5) / s - 0.5, (v[sel] + 0.5) / s - 0.5)
            if lvl + 1 < len(self.mips):
                s2 = 2.0 ** (lvl + 1)
                b = _bilinear_clamped(self.mips[lvl + 1], (u[sel] + 0.5) / s2 - 0.5, (v[sel] + 0.5) / s2 - 0.5)
                a = a * (1.0 - frac[sel]) + b * frac[sel]
            out[sel] = a
        return out


class Corridor:
    """Textured box corridor; one texture set per spectrum with its own seed."""

    def __init__(self, length_m=20.0, width=3.0, height=3.0, margin=6.0, texel=0.01,
                 seed=0, style=VISUAL_STYLE):
        self.length_m = length_m
        self.width = width
        self.height = height
        x0, x1 = -margin, length_m + margin
        self.bounds = (x0, x1)
        rng = np.random.default_rng(seed)
        hw = width / 2.0
        L = x1 - x0
        self.surfaces = [
            Surface(1, hw, 0, 2, (x0, 0.0), (L, height), texel, style, rng),       # left wall
            Surface(1, -hw, 0, 2, (x0, 0.0), (L, height), texel, style, rng),      # right wall
            Surface(2, 0.0, 0, 1, (x0, -hw), (L, width), texel, style, rng),       # floor
            Surface(2, height, 0, 1, (x0, -hw), (L, width), texel, style, rng),    # ceiling
            Surface(0, x1, 1, 2, (-hw, 0.0), (width, height), texel, style, rng),  # far end
            Surface(0, x0, 1, 2, (-hw, 0.0), (width, height), texel, style, rng),  # near end
        ]

    def cast(self, origin, dirs, focal):
        """Intensity and hit distance for unit ray directions ``dirs`` (N x 3)."""
        n = len(dirs)
        best_t = np.full(n, np.inf)
        best_s = np.full(n, -1, dtype=int)
        with np.errstate(divide="ignore", invalid="ignore"):
            for k, s in enumerate(self.surfaces):
                t = (s.value - origin[s.axis]) / dirs[:, s.axis]
                better = (t > 1e-6) & (t < best_t)
                best_t[better] = t[better]
                best_s[better] = k
        hits = origin + dirs * best_t[:, None]
        intensity = np.zeros(n)
        for k, s in enumerate(self.surfaces):
            sel = best_s == k
            if not np.any(sel):
                continue
            cos_inc = np.abs(dirs[sel, s.axis])
            footprint = best_t[sel] / (focal * np.sqrt(np.maximum(cos_inc, 1e-3)))
            intensity[sel] = s.sample(hits[sel], footprint)
        return intensity, best_t
