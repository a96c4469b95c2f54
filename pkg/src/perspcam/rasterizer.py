"""Binary silhouette rendering, Gaussian smoothing and soft IoU.

Masks are stored as ``(height, width)`` float arrays indexed ``[row, col]``;
pixel ``(row, col)`` samples the image point ``(col + 0.5, row + 0.5)``.
"""

from __future__ import annotations

import functools
import math
import warnings
from dataclasses import dataclass
from pathlib import Path

import numba
import numpy as np
from scipy.ndimage import correlate1d

from .errors import (BehindCameraError, EmptySilhouetteError, InvalidArgumentError,
                     ModelFormatError)
from .projection import PerspectiveCamera, Translation, project_perspective

PENALTY = 2.0


@dataclass(frozen=True, eq=False)
class SilhouetteMask:
    values: np.ndarray  # (height, width) in [0, 1]
    kind: str = "binary"
    sigma_px: float | None = None

    def __post_init__(self):
        vals = np.array(self.values, dtype=float)
        if vals.ndim != 2:
            raise InvalidArgumentError(f"mask values must be 2-D, got shape {vals.shape}")
        if self.kind not in ("binary", "soft"):
            raise InvalidArgumentError(f"unknown mask kind {self.kind!r}")
        if self.kind == "binary" and not np.all((vals == 0) | (vals == 1)):
            raise InvalidArgumentError("binary mask may only contain 0 and 1")
        if not np.all((vals >= 0) & (vals <= 1)):
            raise InvalidArgumentError("mask values must lie in [0, 1]")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    def binarized(self, threshold: float = 0.5) -> np.ndarray:
        return self.values >= threshold if self.kind == "soft" else self.values > 0


@numba.njit(cache=True)
def _fill_triangles(uv, faces, out):
    height, width = out.shape
    for t in range(faces.shape[0]):
        ax = uv[faces[t, 0], 0]
        ay = uv[faces[t, 0], 1]
        bx = uv[faces[t, 1], 0]
        by = uv[faces[t, 1], 1]
        cx = uv[faces[t, 2], 0]
        cy = uv[faces[t, 2], 1]
        area = (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)
        if not area != 0.0:  # degenerate or NaN
            continue
        sgn = 1.0 if area > 0 else -1.0
        lo_x = min(ax, bx, cx) - 0.5
        hi_x = max(ax, bx, cx) - 0.5
        lo_y = min(ay, by, cy) - 0.5
        hi_y = max(ay, by, cy) - 0.5
        if hi_x < 0 or hi_y < 0 or lo_x > width - 1 or lo_y > height - 1:
            continue
        j0 = max(int(math.ceil(max(lo_x, -1.0))), 0)
        j1 = min(int(math.floor(min(hi_x, width))), width - 1)
        i0 = max(int(math.ceil(max(lo_y, -1.0))), 0)
        i1 = min(int(math.floor(min(hi_y, height))), height - 1)
        for i in range(i0, i1 + 1):
            py = i + 0.5
            for j in range(j0, j1 + 1):
                px = j + 0.5
                e0 = (bx - ax) * (py - ay) - (by - ay) * (px - ax)
                e1 = (cx - bx) * (py - by) - (cy - by) * (px - bx)
                e2 = (ax - cx) * (py - cy) - (ay - cy) * (px - cx)
                if sgn * e0 >= 0 and sgn * e1 >= 0 and sgn * e2 >= 0:
                    out[i, j] = 1.0


def rasterize_uv(uv, faces, width: int, height: int) -> np.ndarray:
    """Fill projected triangles; returns a (height, width) 0/1 float array.

    A pixel is set when its centre lies inside or on the boundary of at least
    one non-degenerate triangle, whatever the winding.
    """
    out = np.zeros((int(height), int(width)))
    _fill_triangles(np.ascontiguousarray(uv, dtype=np.float64),
                    np.ascontiguousarray(faces, dtype=np.int64), out)
    return out


def rasterize(mesh, cam: PerspectiveCamera, t: Translation) -> SilhouetteMask:
    uv = project_perspective(mesh.vertices, cam, t)
    out = rasterize_uv(uv, mesh.faces, cam.width, cam.height)
    if not out.any():
        raise EmptySilhouetteError("silhouette is empty: mesh is outside the view or degenerate")
    return SilhouetteMask(out, "binary")


def gaussian_kernel(sigma_px: float) -> np.ndarray:
    """1-D Gaussian truncated at 3 sigma and normalized to unit sum."""
    radius = int(math.ceil(3 * sigma_px))
    x = np.arange(-radius, radius + 1, dtype=float)
    k = np.exp(-0.5 * (x / sigma_px) ** 2)
    return k / k.sum()


@functools.lru_cache(maxsize=64)
def _border_mass(n: int, sigma_px: float) -> np.ndarray:
    return correlate1d(np.ones(n), gaussian_kernel(sigma_px), mode="constant")


def _blur(values, sigma_px, rows=None, cols=None):
    """Separable blur of ``values``, renormalized at the image border.

    ``rows``/``cols`` give the offset of ``values`` inside a larger image whose
    remaining pixels are zero; the crop must extend 3 sigma past its support
    or reach the image edge.
    """
    kernel = gaussian_kernel(sigma_px)
    h, w = values.shape
    rows = rows or (0, h, h)
    cols = cols or (0, w, w)
    tmp = correlate1d(values, kernel, axis=0, mode="constant")
    out = correlate1d(tmp, kernel, axis=1, mode="constant")
    wy = _border_mass(rows[2], sigma_px)[rows[0]:rows[1]]
    wx = _border_mass(cols[2], sigma_px)[cols[0]:cols[1]]
    return out / np.outer(wy, wx)


def gaussian_smooth(mask: SilhouetteMask, sigma_px: float) -> SilhouetteMask:
    if not sigma_px > 0:
        raise InvalidArgumentError(f"sigma_px must be positive, got {sigma_px}")
    out = np.clip(_blur(mask.values, float(sigma_px)), 0.0, 1.0)
    return SilhouetteMask(out, "soft", float(sigma_px))


def soft_iou(a: SilhouetteMask, b: SilhouetteMask) -> float:
    """Sum of pixelwise min over sum of pixelwise max."""
    va = a.values if isinstance(a, SilhouetteMask) else np.asarray(a, dtype=float)
    vb = b.values if isinstance(b, SilhouetteMask) else np.asarray(b, dtype=float)
    if va.shape != vb.shape:
        raise InvalidArgumentError(f"mask size mismatch: {va.shape} vs {vb.shape}")
    union = np.maximum(va, vb).sum()
    if union == 0:
        warnings.warn("soft_iou of two empty masks is undefined; returning 0", RuntimeWarning,
                      stacklevel=2)
        return 0.0
    return float(np.minimum(va, vb).sum() / union)


def camera_for(target: SilhouetteMask, focal_px: float) -> PerspectiveCamera:
    return PerspectiveCamera(focal_px, target.width, target.height)


def objective(params, mesh, target: SilhouetteMask, sigma_px: float, principal=None) -> float:
    """1 - soft IoU of the smoothed render at ``params = (f, tx, ty, tz)``.

    ``target`` must already be smoothed with the same sigma. Infeasible
    parameters (behind camera, nothing visible) score :data:`PENALTY`.
    ``principal`` defaults to the centre of ``target``.
    """
    f, tx, ty, tz = (float(p) for p in params)
    if not all(math.isfinite(p) for p in (f, tx, ty, tz)):
        return math.nan
    try:
        if principal is None:
            cam = camera_for(target, f)
        else:
            cam = PerspectiveCamera(f, target.width, target.height, *principal)
        rendered = rasterize(mesh, cam, Translation(tx, ty, tz))
    except (BehindCameraError, EmptySilhouetteError, InvalidArgumentError):
        return PENALTY
    return 1.0 - _cropped_soft_iou(rendered.values, target.values, sigma_px)


def _cropped_soft_iou(binary, target, sigma_px):
    # the smoothed render vanishes outside its padded bounding box, where the
    # min term is 0 and the max term is just the target
    h, w = binary.shape
    pad = int(math.ceil(3 * sigma_px))
    rows = np.flatnonzero(binary.any(axis=1))
    cols = np.flatnonzero(binary.any(axis=0))
    r0, r1 = max(rows[0] - pad, 0), min(rows[-1] + pad + 1, h)
    c0, c1 = max(cols[0] - pad, 0), min(cols[-1] + pad + 1, w)
    smooth = _blur(binary[r0:r1, c0:c1], float(sigma_px), (r0, r1, h), (c0, c1, w))
    np.clip(smooth, 0.0, 1.0, out=smooth)
    tgt = target[r0:r1, c0:c1]
    inter = np.minimum(smooth, tgt).sum()
    union = target.sum() - tgt.sum() + np.maximum(smooth, tgt).sum()
    return float(inter / union)


def downsample(mask: SilhouetteMask, factor: int) -> SilhouetteMask:
    """Block-average by an integer factor; partial blocks at the far edges count as zero."""
    if factor == 1:
        return mask
    h, w = mask.height, mask.width
    hh, ww = -(-h // factor), -(-w // factor)
    padded = np.zeros((hh * factor, ww * factor))
    padded[:h, :w] = mask.values
    out = padded.reshape(hh, factor, ww, factor).mean(axis=(1, 3))
    return SilhouetteMask(np.clip(out, 0.0, 1.0), "soft")


# --- PGM (P5) ---------------------------------------------------------------

def write_pgm(mask: SilhouetteMask, path) -> None:
    """8-bit binary PGM, 255 = inside; soft values round to nearest level."""
    levels = np.floor(mask.values * 255.0 + 0.5).astype(np.uint8)
    header = f"P5\n{mask.width} {mask.height}\n255\n".encode("ascii")
    Path(path).write_bytes(header + levels.tobytes())


def _pgm_tokens(data: bytes, count: int):
    tokens, pos = [], 0
    while len(tokens) < count:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ModelFormatError("truncated PGM header")
        tokens.append(data[start:pos])
    return tokens, pos + 1  # one whitespace byte ends the header


def read_pgm(path) -> SilhouetteMask:
    data = Path(path).read_bytes()
    (magic, w, h, maxval), offset = _pgm_tokens(data, 4)
    if magic != b"P5":
        raise ModelFormatError(f"{path}: not a binary PGM (magic {magic!r})")
    try:
        w, h, maxval = int(w), int(h), int(maxval)
    except ValueError:
        raise ModelFormatError(f"{path}: malformed PGM header") from None
    if maxval != 255:
        raise ModelFormatError(f"{path}: only 8-bit PGM (maxval 255) is supported, got {maxval}")
    pixels = np.frombuffer(data, dtype=np.uint8, count=-1, offset=offset)
    if pixels.size < w * h:
        raise ModelFormatError(f"{path}: expected {w * h} pixels, found {pixels.size}")
    levels = pixels[: w * h].reshape(h, w)
    binary = np.all((levels == 0) | (levels == 255))
    return SilhouetteMask(levels / 255.0, "binary" if binary else "soft")
