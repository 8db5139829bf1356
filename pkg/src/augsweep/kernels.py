"""Per-pixel kernels behind the augmentation ops.

Every kernel exists twice: a loop version compiled with ``numba.njit`` and a
vectorized numpy version. Both produce bit-identical output. The loop path is
used when numba imports and ``AUGSWEEP_DISABLE_NUMBA`` is unset (or ``0``);
otherwise the numpy path is bound to the public names.

All kernels take and return ``uint8`` arrays shaped ``(H, W, C)`` unless noted.
Real-to-intensity conversion is ``floor(x + 0.5)`` followed by a clamp to
[0, 255], i.e. round-half-away-from-zero on the clamped range.
"""

from __future__ import annotations

import os

import numpy as np

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

_DISABLED = os.environ.get("AUGSWEEP_DISABLE_NUMBA", "").strip().lower() not in ("", "0", "false", "no")
USE_NUMBA = numba is not None and not _DISABLED

GRAY_WEIGHTS = (299, 587, 114)  # parts per 1000


def _njit(fn):
    if numba is None:
        return fn
    return numba.njit(cache=True, nogil=True)(fn)


def backend() -> str:
    return "numba" if USE_NUMBA else "numpy"


# ---------------------------------------------------------------------------
# affine warp with bilinear sampling
# ---------------------------------------------------------------------------


@_njit
def _warp_affine_numba(src, inv, fill):
    h, w, c = src.shape
    out = np.empty((h, w, c), dtype=np.uint8)
    lo_x = -0.5
    hi_x = w - 0.5
    lo_y = -0.5
    hi_y = h - 0.5
    for y in range(h):
        for x in range(w):
            sx = inv[0, 0] * x + inv[0, 1] * y + inv[0, 2]
            sy = inv[1, 0] * x + inv[1, 1] * y + inv[1, 2]
            if sx < lo_x or sx > hi_x or sy < lo_y or sy > hi_y:
                for ch in range(c):
                    out[y, x, ch] = fill
                continue
            x0 = int(np.floor(sx))
            y0 = int(np.floor(sy))
            fx = sx - x0
            fy = sy - y0
            x1 = x0 + 1
            y1 = y0 + 1
            in_x0 = 0 <= x0 < w
            in_x1 = 0 <= x1 < w
            in_y0 = 0 <= y0 < h
            in_y1 = 0 <= y1 < h
            for ch in range(c):
                v00 = float(fill)
                v01 = float(fill)
                v10 = float(fill)
                v11 = float(fill)
                if in_y0 and in_x0:
                    v00 = float(src[y0, x0, ch])
                if in_y0 and in_x1:
                    v01 = float(src[y0, x1, ch])
                if in_y1 and in_x0:
                    v10 = float(src[y1, x0, ch])
                if in_y1 and in_x1:
                    v11 = float(src[y1, x1, ch])
                top = (1.0 - fx) * v00 + fx * v01
                bot = (1.0 - fx) * v10 + fx * v11
                val = np.floor((1.0 - fy) * top + fy * bot + 0.5)
                if val < 0.0:
                    val = 0.0
                elif val > 255.0:
                    val = 255.0
                out[y, x, ch] = np.uint8(val)
    return out


def _warp_affine_numpy(src, inv, fill):
    h, w, c = src.shape
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    sx = inv[0, 0] * xs + inv[0, 1] * ys + inv[0, 2]
    sy = inv[1, 0] * xs + inv[1, 1] * ys + inv[1, 2]
    outside = (sx < -0.5) | (sx > w - 0.5) | (sy < -0.5) | (sy > h - 0.5)
    sx = np.where(outside, 0.0, sx)
    sy = np.where(outside, 0.0, sy)
    x0 = np.floor(sx).astype(np.int64)
    y0 = np.floor(sy).astype(np.int64)
    fx = (sx - x0)[..., None]
    fy = (sy - y0)[..., None]
    ffill = float(fill)

    def tap(yy, xx):
        ok = (xx >= 0) & (xx < w) & (yy >= 0) & (yy < h)
        vals = src[np.clip(yy, 0, h - 1), np.clip(xx, 0, w - 1)].astype(np.float64)
        return np.where(ok[..., None], vals, ffill)

    top = (1.0 - fx) * tap(y0, x0) + fx * tap(y0, x0 + 1)
    bot = (1.0 - fx) * tap(y0 + 1, x0) + fx * tap(y0 + 1, x0 + 1)
    val = np.clip(np.floor((1.0 - fy) * top + fy * bot + 0.5), 0.0, 255.0)
    val[outside] = ffill
    return val.astype(np.uint8)


# ---------------------------------------------------------------------------
# CLAHE
# ---------------------------------------------------------------------------


def tile_edges(size: int, tiles: int) -> np.ndarray:
    """Split ``size`` pixels into ``tiles`` contiguous runs of near-equal length."""
    return (np.arange(tiles + 1, dtype=np.int64) * size) // tiles


@_njit
def _clip_redistribute_numba(hist, limit):
    bins = hist.shape[0]
    excess = 0
    for b in range(bins):
        if hist[b] > limit:
            excess += hist[b] - limit
            hist[b] = limit
    while excess >= bins:
        inc = excess // bins
        moved = 0
        for b in range(bins):
            room = limit - hist[b]
            add = inc if inc < room else room
            hist[b] += add
            moved += add
        excess -= moved
        if moved == 0:
            break
    b = 0
    while excess > 0 and b < bins:
        if hist[b] < limit:
            hist[b] += 1
            excess -= 1
        b += 1
    return hist


def _clip_redistribute_numpy(hist, limit):
    bins = hist.shape[0]
    excess = int(np.maximum(hist - limit, 0).sum())
    hist = np.minimum(hist, limit)
    while excess >= bins:
        inc = excess // bins
        add = np.minimum(inc, limit - hist)
        hist = hist + add
        moved = int(add.sum())
        excess -= moved
        if moved == 0:
            break
    if excess > 0:
        room = np.flatnonzero(hist < limit)[:excess]
        hist[room] += 1
    return hist


@_njit
def _clahe_luts_numba(img, ey, ex, clip_limit, bins, levels):
    ty = ey.shape[0] - 1
    tx = ex.shape[0] - 1
    luts = np.empty((ty, tx, bins), dtype=np.float64)
    for i in range(ty):
        for j in range(tx):
            hist = np.zeros(bins, dtype=np.int64)
            for y in range(ey[i], ey[i + 1]):
                for x in range(ex[j], ex[j + 1]):
                    hist[(np.int64(img[y, x]) * bins) // 256] += 1
            npx = (ey[i + 1] - ey[i]) * (ex[j + 1] - ex[j])
            lim = np.ceil(clip_limit * npx / bins)
            if lim > npx:
                lim = npx
            limit = np.int64(lim)
            if limit < 1:
                limit = 1
            hist = _clip_redistribute_numba(hist, limit)
            cdf = 0
            for b in range(bins):
                cdf += hist[b]
                luts[i, j, b] = np.floor((levels - 1.0) * cdf / npx + 0.5)
    return luts


def _clahe_luts_numpy(img, ey, ex, clip_limit, bins, levels):
    ty, tx = ey.shape[0] - 1, ex.shape[0] - 1
    luts = np.empty((ty, tx, bins), dtype=np.float64)
    binned = (img.astype(np.int64) * bins) // 256
    for i in range(ty):
        for j in range(tx):
            tile = binned[ey[i]:ey[i + 1], ex[j]:ex[j + 1]]
            npx = tile.size
            hist = np.bincount(tile.ravel(), minlength=bins).astype(np.int64)
            limit = max(int(min(np.ceil(clip_limit * npx / bins), npx)), 1)
            hist = _clip_redistribute_numpy(hist, limit)
            luts[i, j] = np.floor((levels - 1.0) * np.cumsum(hist) / npx + 0.5)
    return luts


def _interp_axis(size, edges):
    """Per-coordinate (lower tile, upper tile, upper weight) between tile centers."""
    centers = (edges[:-1] + edges[1:] - 1) / 2.0
    n = centers.shape[0]
    coords = np.arange(size, dtype=np.float64)
    hi = np.searchsorted(centers, coords, side="right")
    lo = np.clip(hi - 1, 0, n - 1)
    hi = np.clip(hi, 0, n - 1)
    span = centers[hi] - centers[lo]
    wgt = np.where(span > 0, (coords - centers[lo]) / np.where(span > 0, span, 1.0), 0.0)
    return lo, hi, wgt


@_njit
def _clahe_blend_numba(img, luts, ylo, yhi, yw, xlo, xhi, xw, bins):
    h, w = img.shape
    out = np.empty((h, w), dtype=np.uint8)
    for y in range(h):
        fy = yw[y]
        for x in range(w):
            fx = xw[x]
            b = (np.int64(img[y, x]) * bins) // 256
            top = (1.0 - fx) * luts[ylo[y], xlo[x], b] + fx * luts[ylo[y], xhi[x], b]
            bot = (1.0 - fx) * luts[yhi[y], xlo[x], b] + fx * luts[yhi[y], xhi[x], b]
            val = np.floor((1.0 - fy) * top + fy * bot + 0.5)
            if val < 0.0:
                val = 0.0
            elif val > 255.0:
                val = 255.0
            out[y, x] = np.uint8(val)
    return out


def _clahe_blend_numpy(img, luts, ylo, yhi, yw, xlo, xhi, xw, bins):
    b = (img.astype(np.int64) * bins) // 256
    fy = yw[:, None]
    fx = xw[None, :]
    yl, yh = ylo[:, None], yhi[:, None]
    xl, xh = xlo[None, :], xhi[None, :]
    top = (1.0 - fx) * luts[yl, xl, b] + fx * luts[yl, xh, b]
    bot = (1.0 - fx) * luts[yh, xl, b] + fx * luts[yh, xh, b]
    val = np.clip(np.floor((1.0 - fy) * top + fy * bot + 0.5), 0.0, 255.0)
    return val.astype(np.uint8)


def _make_clahe(luts_fn, blend_fn):
    def clahe_plane(img, tiles_y, tiles_x, clip_limit, bins, levels=256):
        h, w = img.shape
        ey = tile_edges(h, tiles_y)
        ex = tile_edges(w, tiles_x)
        luts = luts_fn(img, ey, ex, float(clip_limit), int(bins), float(levels))
        ylo, yhi, yw = _interp_axis(h, ey)
        xlo, xhi, xw = _interp_axis(w, ex)
        return blend_fn(img, luts, ylo, yhi, yw, xlo, xhi, xw, int(bins))

    return clahe_plane


_clahe_plane_numba = _make_clahe(_clahe_luts_numba, _clahe_blend_numba)
_clahe_plane_numpy = _make_clahe(_clahe_luts_numpy, _clahe_blend_numpy)


def equalize_plane(img: np.ndarray, levels: int = 256) -> np.ndarray:
    """Global histogram equalization of a 2-D uint8 plane."""
    hist = np.bincount(img.ravel(), minlength=256)
    lut = np.floor((levels - 1.0) * np.cumsum(hist) / img.size + 0.5)
    return np.clip(lut, 0, 255).astype(np.uint8)[img]


# ---------------------------------------------------------------------------
# HSV and color jitter
# ---------------------------------------------------------------------------


@_njit
def _rgb_to_hsv_numba(rgb):
    # rgb: float64 (..., 3) with values in [0, 1]
    flat = rgb.reshape(-1, 3)
    out = np.empty_like(flat)
    for i in range(flat.shape[0]):
        r = flat[i, 0]
        g = flat[i, 1]
        b = flat[i, 2]
        mx = max(r, g, b)
        mn = min(r, g, b)
        delta = mx - mn
        h = 0.0
        if delta > 0.0:
            if mx == r:
                h = ((g - b) / delta) / 6.0
            elif mx == g:
                h = ((b - r) / delta + 2.0) / 6.0
            else:
                h = ((r - g) / delta + 4.0) / 6.0
            h = h - np.floor(h)
        s = delta / mx if mx > 0.0 else 0.0
        out[i, 0] = h
        out[i, 1] = s
        out[i, 2] = mx
    return out.reshape(rgb.shape)


def _rgb_to_hsv_numpy(rgb):
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    mx = np.maximum(np.maximum(r, g), b)
    mn = np.minimum(np.minimum(r, g), b)
    delta = mx - mn
    safe = np.where(delta > 0.0, delta, 1.0)
    h = np.where(
        mx == r,
        ((g - b) / safe) / 6.0,
        np.where(mx == g, ((b - r) / safe + 2.0) / 6.0, ((r - g) / safe + 4.0) / 6.0),
    )
    h = np.where(delta > 0.0, h - np.floor(h), 0.0)
    s = np.where(mx > 0.0, delta / np.where(mx > 0.0, mx, 1.0), 0.0)
    return np.stack([h, s, mx], axis=-1)


@_njit
def _hsv_to_rgb_numba(hsv):
    flat = hsv.reshape(-1, 3)
    out = np.empty_like(flat)
    for n in range(flat.shape[0]):
        h = flat[n, 0]
        s = flat[n, 1]
        v = flat[n, 2]
        h6 = h * 6.0
        i = np.floor(h6)
        f = h6 - i
        p = v * (1.0 - s)
        q = v * (1.0 - s * f)
        t = v * (1.0 - s * (1.0 - f))
        k = int(i) % 6
        if k == 0:
            r, g, b = v, t, p
        elif k == 1:
            r, g, b = q, v, p
        elif k == 2:
            r, g, b = p, v, t
        elif k == 3:
            r, g, b = p, q, v
        elif k == 4:
            r, g, b = t, p, v
        else:
            r, g, b = v, p, q
        out[n, 0] = r
        out[n, 1] = g
        out[n, 2] = b
    return out.reshape(hsv.shape)


def _hsv_to_rgb_numpy(hsv):
    h, s, v = hsv[..., 0], hsv[..., 1], hsv[..., 2]
    h6 = h * 6.0
    i = np.floor(h6)
    f = h6 - i
    p = v * (1.0 - s)
    q = v * (1.0 - s * f)
    t = v * (1.0 - s * (1.0 - f))
    k = i.astype(np.int64) % 6
    r = np.choose(k, [v, q, p, p, t, v])
    g = np.choose(k, [t, v, v, q, p, p])
    b = np.choose(k, [p, p, t, v, v, q])
    return np.stack([r, g, b], axis=-1)


def _round_u8(x):
    return np.clip(np.floor(x + 0.5), 0.0, 255.0).astype(np.uint8)


def _gray_numer(img):
    """Integer luma numerator (parts per 1000) of an (H, W, 3) uint8 image."""
    x = img.astype(np.int64)
    return GRAY_WEIGHTS[0] * x[..., 0] + GRAY_WEIGHTS[1] * x[..., 1] + GRAY_WEIGHTS[2] * x[..., 2]


def _make_jitter(rgb_to_hsv, hsv_to_rgb):
    def color_jitter(img, brightness, contrast, saturation, hue):
        c = img.shape[2]
        out = _round_u8(brightness * img.astype(np.float64))
        if c == 3:
            mean = float(_gray_numer(out).sum()) / (1000.0 * out.shape[0] * out.shape[1])
        else:
            mean = float(out.astype(np.int64).sum()) / out.size
        out = _round_u8(mean + contrast * (out.astype(np.float64) - mean))
        if c == 3:
            gray = (_gray_numer(out) / 1000.0)[..., None]
            out = _round_u8(gray + saturation * (out.astype(np.float64) - gray))
            if hue != 0.0:
                hsv = rgb_to_hsv(out.astype(np.float64) / 255.0)
                shifted = hsv[..., 0] + hue
                hsv[..., 0] = shifted - np.floor(shifted)
                out = _round_u8(hsv_to_rgb(hsv) * 255.0)
        return out

    return color_jitter


_color_jitter_numba = _make_jitter(_rgb_to_hsv_numba, _hsv_to_rgb_numba)
_color_jitter_numpy = _make_jitter(_rgb_to_hsv_numpy, _hsv_to_rgb_numpy)


def _make_clahe_rgb(rgb_to_hsv, hsv_to_rgb, plane_fn):
    def clahe_value_channel(img, tiles_y, tiles_x, clip_limit, bins):
        v = img.max(axis=2)
        v_new = plane_fn(v, tiles_y, tiles_x, clip_limit, bins)
        hsv = rgb_to_hsv(img.astype(np.float64) / 255.0)
        hsv[..., 2] = v_new / 255.0
        return _round_u8(hsv_to_rgb(hsv) * 255.0)

    return clahe_value_channel


_clahe_rgb_numba = _make_clahe_rgb(_rgb_to_hsv_numba, _hsv_to_rgb_numba, _clahe_plane_numba)
_clahe_rgb_numpy = _make_clahe_rgb(_rgb_to_hsv_numpy, _hsv_to_rgb_numpy, _clahe_plane_numpy)


IMPLS = {
    "numba": {
        "warp_affine": _warp_affine_numba,
        "clahe_plane": _clahe_plane_numba,
        "clahe_rgb": _clahe_rgb_numba,
        "rgb_to_hsv": _rgb_to_hsv_numba,
        "hsv_to_rgb": _hsv_to_rgb_numba,
        "color_jitter": _color_jitter_numba,
    },
    "numpy": {
        "warp_affine": _warp_affine_numpy,
        "clahe_plane": _clahe_plane_numpy,
        "clahe_rgb": _clahe_rgb_numpy,
        "rgb_to_hsv": _rgb_to_hsv_numpy,
        "hsv_to_rgb": _hsv_to_rgb_numpy,
        "color_jitter": _color_jitter_numpy,
    },
}

_active = IMPLS[backend()]
warp_affine = _active["warp_affine"]
clahe_plane = _active["clahe_plane"]
clahe_rgb = _active["clahe_rgb"]
rgb_to_hsv_array = _active["rgb_to_hsv"]
hsv_to_rgb_array = _active["hsv_to_rgb"]
color_jitter = _active["color_jitter"]
