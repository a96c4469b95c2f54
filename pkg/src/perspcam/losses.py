"""Supervision losses for depth, body shape, pose, joints and vertices.

Each function is pure and returns a Python float. The L1 terms are
mean-reduced so their magnitude does not depend on array sizes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .body_model import rodrigues
from .errors import InvalidArgumentError


@dataclass(frozen=True)
class LossWeights:
    w_shape: float = 1.0
    w_pose: float = 1.0
    w_joint: float = 5.0
    w_vert: float = 5.0

    def __post_init__(self):
        for name in ("w_shape", "w_pose", "w_joint", "w_vert"):
            w = getattr(self, name)
            if not (np.isfinite(w) and w >= 0):
                raise InvalidArgumentError(f"{name} must be finite and non-negative, got {w}")


@dataclass(frozen=True)
class LossParts:
    shape: float
    pose: float
    joint: float
    vert: float


def l_depth(tz: float, tz_gt: float) -> float:
    """Depth error weighted by inverse ground-truth depth, ``|tz - tz_gt| / tz_gt``."""
    if not tz_gt > 0:
        raise InvalidArgumentError(f"tz_gt must be positive, got {tz_gt}")
    return abs(tz - tz_gt) / tz_gt


def _l1(a, b, what: str) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise InvalidArgumentError(f"{what} shape mismatch: {a.shape} vs {b.shape}")
    if a.size == 0:
        return 0.0
    return float(np.mean(np.abs(a - b)))


def l_shape(beta, beta_gt) -> float:
    return _l1(beta, beta_gt, "shape")


def l_joint(joints, joints_gt) -> float:
    return _l1(joints, joints_gt, "joints")


def l_vert(vertices, vertices_gt) -> float:
    return _l1(vertices, vertices_gt, "vertices")


def geodesic_angles(theta, theta_gt) -> np.ndarray:
    """Per-joint angle (radians) of ``R_pred @ R_gt.T`` for axis-angle inputs."""
    a = np.asarray(theta, dtype=float).reshape(-1, 3)
    b = np.asarray(theta_gt, dtype=float).reshape(-1, 3)
    if a.shape != b.shape:
        raise InvalidArgumentError(f"pose joint count mismatch: {len(a)} vs {len(b)}")
    rel = rodrigues(a) @ np.swapaxes(rodrigues(b), -1, -2)
    cos = (np.trace(rel, axis1=-2, axis2=-1) - 1.0) / 2.0
    # arccos loses precision near 0 and pi; atan2 of the skew part does not
    skew = np.stack([rel[:, 2, 1] - rel[:, 1, 2], rel[:, 0, 2] - rel[:, 2, 0],
                     rel[:, 1, 0] - rel[:, 0, 1]], axis=-1)
    sin = np.linalg.norm(skew, axis=-1) / 2.0
    return np.arctan2(sin, cos)


def l_pose(theta, theta_gt) -> float:
    """Mean geodesic rotation distance over joints."""
    angles = geodesic_angles(theta, theta_gt)
    return float(np.mean(angles)) if angles.size else 0.0


def total_loss(parts, weights: LossWeights | None = None) -> float:
    """Weighted sum of the shape, pose, joint and vertex terms.

    ``parts`` is a :class:`LossParts` or a ``(shape, pose, joint, vert)`` sequence.
    """
    w = weights or LossWeights()
    if not isinstance(parts, LossParts):
        vals = tuple(float(p) for p in parts)
        if len(vals) != 4:
            raise InvalidArgumentError(f"expected 4 loss parts, got {len(vals)}")
        parts = LossParts(*vals)
    return (w.w_shape * parts.shape + w.w_pose * parts.pose
            + w.w_joint * parts.joint + w.w_vert * parts.vert)
