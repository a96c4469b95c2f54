"""Pinhole and weak-perspective projection, and perspective-distortion analysis."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BehindCameraError, DegenerateGeometryError, InvalidArgumentError

MIN_DEPTH = 1e-6


@dataclass(frozen=True)
class PerspectiveCamera:
    focal_px: float
    width: int
    height: int
    cx: float | None = None
    cy: float | None = None

    def __post_init__(self):
        if not (np.isfinite(self.focal_px) and self.focal_px > 0):
            raise InvalidArgumentError(f"focal_px must be finite and positive, got {self.focal_px}")
        if self.width <= 0 or self.height <= 0:
            raise InvalidArgumentError(f"image size must be positive, got {self.width}x{self.height}")
        # principal point defaults to the image centre
        if self.cx is None:
            object.__setattr__(self, "cx", self.width / 2.0)
        if self.cy is None:
            object.__setattr__(self, "cy", self.height / 2.0)
        if not (0 <= self.cx <= self.width and 0 <= self.cy <= self.height):
            raise InvalidArgumentError(f"principal point ({self.cx}, {self.cy}) outside the image")

    @property
    def principal(self) -> tuple[float, float]:
        return (self.cx, self.cy)

    def with_focal(self, focal_px: float) -> "PerspectiveCamera":
        return PerspectiveCamera(focal_px, self.width, self.height, self.cx, self.cy)


@dataclass(frozen=True)
class Translation:
    tx: float
    ty: float
    tz: float

    def __post_init__(self):
        if not np.all(np.isfinite([self.tx, self.ty, self.tz])):
            raise InvalidArgumentError("translation must be finite")
        if self.tz <= 0:
            raise InvalidArgumentError(f"tz must be positive (subject in front of camera), got {self.tz}")

    def as_array(self) -> np.ndarray:
        return np.array([self.tx, self.ty, self.tz])


@dataclass(frozen=True)
class OrthographicCamera:
    scale: float
    tx: float = 0.0
    ty: float = 0.0

    def __post_init__(self):
        if not (np.isfinite(self.scale) and self.scale > 0):
            raise InvalidArgumentError(f"scale must be finite and positive, got {self.scale}")


def project_perspective(points, cam: PerspectiveCamera, t: Translation) -> np.ndarray:
    """Project (M, 3) body-frame points to (M, 2) pixel coordinates."""
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    depth = pts[:, 2] + t.tz
    behind = np.flatnonzero(~(depth > MIN_DEPTH))
    if behind.size:
        raise BehindCameraError(behind)
    u = cam.focal_px * ((pts[:, 0] + t.tx) / depth) + cam.cx
    v = cam.focal_px * ((pts[:, 1] + t.ty) / depth) + cam.cy
    return np.stack([u, v], axis=1)


def project_orthographic(points, cam: OrthographicCamera) -> np.ndarray:
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    return np.stack([cam.scale * pts[:, 0] + cam.tx, cam.scale * pts[:, 1] + cam.ty], axis=1)


def fit_orthographic(points, image_points) -> tuple[OrthographicCamera, np.ndarray]:
    """Least-squares (s, tx, ty) mapping ``points[:, :2]`` onto ``image_points``.

    Returns the camera and the (M, 2) residual.
    """
    xy = np.asarray(points, dtype=float)[:, :2]
    uv = np.asarray(image_points, dtype=float)
    xy_c = xy - xy.mean(axis=0)
    uv_c = uv - uv.mean(axis=0)
    denom = np.sum(xy_c * xy_c)
    if denom <= 0:
        raise DegenerateGeometryError("points have no extent in the image plane")
    s = np.sum(xy_c * uv_c) / denom
    t = uv.mean(axis=0) - s * xy.mean(axis=0)
    if s <= 0:
        raise DegenerateGeometryError(f"best-fit orthographic scale is non-positive ({s})")
    cam = OrthographicCamera(float(s), float(t[0]), float(t[1]))
    return cam, uv - project_orthographic(np.asarray(points, dtype=float), cam)


def distortion_magnitude(vertices, tz: float) -> float:
    """Normalized RMS gap between perspective and best-fit orthographic projection.

    The vertices are projected with unit focal length at translation
    ``(0, 0, tz)``; the result is the RMS residual of the best orthographic fit
    divided by the RMS radius of the perspective image about its centroid.
    Scaling the focal length scales numerator and denominator alike, so the
    value does not depend on it.
    """
    if hasattr(vertices, "vertices"):
        vertices = vertices.vertices
    pts = np.asarray(vertices, dtype=float).reshape(-1, 3)
    if not tz > 0:
        raise InvalidArgumentError(f"tz must be positive, got {tz}")
    persp = project_perspective(pts, PerspectiveCamera(1.0, 1, 1, 0.0, 0.0), Translation(0.0, 0.0, tz))
    centred = persp - persp.mean(axis=0)
    sv = np.linalg.svd(centred, compute_uv=False)
    if len(pts) < 3 or sv[-1] <= 1e-12 * max(sv[0], 1e-300):
        raise DegenerateGeometryError("need at least 3 non-collinear projected points")
    _, residual = fit_orthographic(pts, persp)
    rms_res = np.sqrt(np.mean(np.sum(residual**2, axis=1)))
    rms_rad = np.sqrt(np.mean(np.sum(centred**2, axis=1)))
    return float(rms_res / rms_rad)


def zolly_heuristic_focal(scale: float, height: float, tz: float) -> float:
    """Focal length from a weak-perspective scale via ``f = s * h * tz / 2``."""
    for name, val in (("scale", scale), ("height", height), ("tz", tz)):
        if not (np.isfinite(val) and val > 0):
            raise InvalidArgumentError(f"{name} must be positive, got {val}")
    return scale * height * tz / 2.0
