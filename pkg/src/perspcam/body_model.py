"""Parametric articulated body: shape blendshapes + linear blend skinning.

The model has the same mathematical form as the SMPL family: a rest template
is displaced by a linear combination of shape blendshapes, joints are
regressed from the shaped template, and the pose is applied with linear blend
skinning over a kinematic tree. The output is re-centred on the pelvis joint.

:func:`make_default_model` builds a small procedural humanoid made of capsules
so that everything downstream can run without licensed assets.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InvalidArgumentError, ModelFormatError

FORMAT_VERSION = 1
NUM_BETAS = 10

JOINT_NAMES = (
    "pelvis", "left_hip", "right_hip", "spine1", "left_knee", "right_knee",
    "spine2", "left_ankle", "right_ankle", "spine3", "left_shoulder",
    "right_shoulder", "neck", "left_elbow", "right_elbow", "head",
)
PARENTS = (-1, 0, 0, 0, 1, 2, 3, 4, 5, 6, 9, 9, 9, 10, 11, 12)


@dataclass(frozen=True, eq=False)
class BodyModel:
    template_vertices: np.ndarray  # (N, 3)
    shape_blendshapes: np.ndarray  # (B, N, 3)
    joint_regressor: np.ndarray  # (K, N)
    skinning_weights: np.ndarray  # (N, K)
    parents: np.ndarray  # (K,), parents[0] == -1
    faces: np.ndarray  # (F, 3)

    def __post_init__(self):
        for name in ("template_vertices", "shape_blendshapes", "joint_regressor",
                     "skinning_weights", "parents", "faces"):
            arr = np.array(getattr(self, name))
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        validate_model(self)

    @property
    def vertex_count(self) -> int:
        return self.template_vertices.shape[0]

    @property
    def joint_count(self) -> int:
        return self.parents.shape[0]

    @property
    def num_betas(self) -> int:
        return self.shape_blendshapes.shape[0]

    def __eq__(self, other):
        if not isinstance(other, BodyModel):
            return NotImplemented
        return all(
            np.array_equal(getattr(self, k), getattr(other, k))
            for k in ("template_vertices", "shape_blendshapes", "joint_regressor",
                      "skinning_weights", "parents", "faces")
        )

    __hash__ = None


@dataclass(frozen=True, eq=False)
class Mesh:
    vertices: np.ndarray  # (N, 3), pelvis joint at the origin
    faces: np.ndarray  # (F, 3)
    joints: np.ndarray  # (K, 3)


def validate_model(model: BodyModel) -> None:
    """Raise :class:`ModelFormatError` if any structural invariant is broken."""
    v = model.template_vertices
    if v.ndim != 2 or v.shape[1] != 3:
        raise ModelFormatError(f"template_vertices: expected shape (N, 3), got {v.shape}")
    n = v.shape[0]
    k = model.parents.shape[0] if model.parents.ndim == 1 else -1
    if k < 1:
        raise ModelFormatError(f"parents: expected a non-empty 1-D array, got {model.parents.shape}")
    bs = model.shape_blendshapes
    if bs.ndim != 3 or bs.shape[1:] != (n, 3):
        raise ModelFormatError(f"shape_blendshapes: expected shape (B, {n}, 3), got {bs.shape}")
    if model.joint_regressor.shape != (k, n):
        raise ModelFormatError(
            f"joint_regressor: expected shape ({k}, {n}), got {model.joint_regressor.shape}")
    if model.skinning_weights.shape != (n, k):
        raise ModelFormatError(
            f"skinning_weights: expected shape ({n}, {k}), got {model.skinning_weights.shape}")
    f = model.faces
    if f.ndim != 2 or f.shape[1] != 3:
        raise ModelFormatError(f"faces: expected shape (F, 3), got {f.shape}")
    if f.size and (f.min() < 0 or f.max() >= n):
        raise ModelFormatError(f"faces: vertex index out of range [0, {n})")
    for name in ("template_vertices", "shape_blendshapes", "joint_regressor", "skinning_weights"):
        if not np.all(np.isfinite(getattr(model, name))):
            raise ModelFormatError(f"{name}: contains non-finite values")

    w = model.skinning_weights
    bad = np.flatnonzero((np.abs(w.sum(axis=1) - 1.0) > 1e-9) | (w < 0).any(axis=1))
    if bad.size:
        r = int(bad[0])
        raise ModelFormatError(
            f"skinning_weights row {r}: sums to {w[r].sum():.12g}, must be non-negative and sum to 1")
    jr = model.joint_regressor
    bad = np.flatnonzero(np.abs(jr.sum(axis=1) - 1.0) > 1e-9)
    if bad.size:
        r = int(bad[0])
        raise ModelFormatError(f"joint_regressor row {r}: sums to {jr[r].sum():.12g}, must sum to 1")

    parents = model.parents
    if parents[0] != -1:
        raise ModelFormatError("parents[0]: joint 0 must be the root (parent -1)")
    for j in range(1, k):
        # requiring parent < child rules out cycles and extra roots
        if not 0 <= parents[j] < j:
            raise ModelFormatError(f"parents[{j}] = {parents[j]}: must index an earlier joint")


def canonical_rotvec(rotvec) -> np.ndarray:
    """Wrap axis-angle vectors so each angle lies in [0, pi]."""
    rv = np.asarray(rotvec, dtype=float)
    angle = np.linalg.norm(rv, axis=-1, keepdims=True)
    safe = np.where(angle > 0, angle, 1.0)
    wrapped = np.mod(angle + np.pi, 2 * np.pi) - np.pi
    return rv / safe * wrapped * (angle > 0)


def rodrigues(rotvec) -> np.ndarray:
    """Axis-angle (..., 3) to rotation matrices (..., 3, 3)."""
    rv = np.asarray(rotvec, dtype=float)
    theta = np.linalg.norm(rv, axis=-1)
    small = theta < 1e-12
    axis = rv / np.where(small, 1.0, theta)[..., None]
    x, y, z = axis[..., 0], axis[..., 1], axis[..., 2]
    zero = np.zeros_like(x)
    kmat = np.stack([
        np.stack([zero, -z, y], -1),
        np.stack([z, zero, -x], -1),
        np.stack([-y, x, zero], -1),
    ], -2)
    s = np.sin(theta)[..., None, None]
    c = np.cos(theta)[..., None, None]
    eye = np.broadcast_to(np.eye(3), kmat.shape)
    rot = eye + s * kmat + (1 - c) * (kmat @ kmat)
    return np.where(small[..., None, None], eye, rot)


def matrix_to_rotvec(rot) -> np.ndarray:
    from scipy.spatial.transform import Rotation

    return Rotation.from_matrix(np.asarray(rot, dtype=float)).as_rotvec()


def synthesize(model: BodyModel, shape, pose) -> Mesh:
    """Pose and shape the body; returns a pelvis-centred :class:`Mesh`.

    ``shape`` has length ``model.num_betas``; ``pose`` is ``(K, 3)`` axis-angle
    with row 0 the global (root) orientation.
    """
    beta = np.asarray(shape, dtype=float)
    theta = np.asarray(pose, dtype=float)
    k = model.joint_count
    if beta.shape != (model.num_betas,):
        raise InvalidArgumentError(f"shape: expected length {model.num_betas}, got {beta.shape}")
    if theta.shape != (k, 3):
        raise InvalidArgumentError(f"pose: expected shape ({k}, 3), got {theta.shape}")
    if not (np.all(np.isfinite(beta)) and np.all(np.isfinite(theta))):
        raise InvalidArgumentError("shape/pose must be finite")

    shaped = model.template_vertices + np.tensordot(beta, model.shape_blendshapes, axes=1)
    rest_joints = model.joint_regressor @ shaped
    rots = rodrigues(theta)

    g_rot = np.empty((k, 3, 3))
    g_t = np.empty((k, 3))
    for j in range(k):
        p = model.parents[j]
        if p < 0:
            g_rot[j] = rots[j]
            g_t[j] = rest_joints[j]
        else:
            g_rot[j] = g_rot[p] @ rots[j]
            g_t[j] = g_rot[p] @ (rest_joints[j] - rest_joints[p]) + g_t[p]

    # per-joint affine maps taking rest-space points to posed space
    a_rot = g_rot
    a_t = g_t - np.einsum("kij,kj->ki", g_rot, rest_joints)
    blend_rot = np.einsum("nk,kij->nij", model.skinning_weights, a_rot)
    blend_t = model.skinning_weights @ a_t
    posed = np.einsum("nij,nj->ni", blend_rot, shaped) + blend_t

    pelvis = g_t[0].copy()
    return Mesh(vertices=posed - pelvis, faces=np.array(model.faces), joints=g_t - pelvis)


# --- procedural default model -------------------------------------------------

# bone table: (owner joint, end joint or None, radius key)
_BONES = (
    (0, 3, "r_torso0"), (3, 6, "r_torso1"), (6, 9, "r_torso2"), (9, 12, "r_chest"),
    (12, 15, "r_neck"), (15, None, "r_head"),
    (1, 4, "r_thigh"), (2, 5, "r_thigh"), (4, 7, "r_shin"), (5, 8, "r_shin"),
    (7, None, "r_foot"), (8, None, "r_foot"),
    (10, 13, "r_upper_arm"), (11, 14, "r_upper_arm"),
    (13, None, "r_forearm"), (14, None, "r_forearm"),
)


def _rest_params() -> dict:
    s45 = np.sqrt(0.5)
    p = {
        # joint offsets relative to the parent (meters), A-pose
        "off": {
            1: np.array([0.09, -0.06, 0.0]), 2: np.array([-0.09, -0.06, 0.0]),
            3: np.array([0.0, 0.12, 0.0]),
            4: np.array([0.0, -0.42, 0.0]), 5: np.array([0.0, -0.42, 0.0]),
            6: np.array([0.0, 0.13, 0.0]),
            7: np.array([0.0, -0.40, 0.0]), 8: np.array([0.0, -0.40, 0.0]),
            9: np.array([0.0, 0.13, 0.0]),
            10: np.array([0.17, 0.10, 0.0]), 11: np.array([-0.17, 0.10, 0.0]),
            12: np.array([0.0, 0.17, 0.0]),
            13: np.array([0.28 * s45, -0.28 * s45, 0.0]),
            14: np.array([-0.28 * s45, -0.28 * s45, 0.0]),
            15: np.array([0.0, 0.08, 0.0]),
        },
        # end offsets of the leaf capsules relative to their owner joint
        "tip": {
            15: np.array([0.0, 0.12, 0.0]),
            7: np.array([0.0, -0.04, 0.14]), 8: np.array([0.0, -0.04, 0.14]),
            13: np.array([0.27 * s45, -0.27 * s45, 0.0]),
            14: np.array([-0.27 * s45, -0.27 * s45, 0.0]),
        },
        "r_torso0": 0.13, "r_torso1": 0.14, "r_torso2": 0.15, "r_chest": 0.12,
        "r_neck": 0.05, "r_head": 0.10, "r_thigh": 0.075, "r_shin": 0.055,
        "r_foot": 0.04, "r_upper_arm": 0.05, "r_forearm": 0.04,
    }
    return p


def _unit(v):
    return v / np.linalg.norm(v)


def _shape_deltas() -> list:
    """Per-unit-coefficient parameter perturbations, one per blendshape."""
    base = _rest_params()

    def scale_all(p, a):
        for j in p["off"]:
            p["off"][j] = p["off"][j] * a
        for j in p["tip"]:
            p["tip"][j] = p["tip"][j] * a
        for key in p:
            if key.startswith("r_"):
                p[key] *= a

    def lengthen(p, joints, dl, table="off"):
        for j in joints:
            v = p[table][j]
            p[table][j] = v + dl * _unit(v)

    def widen(p, keys, dr):
        for key in keys:
            p[key] += dr

    def lateral(p, joints, dx):
        for j in joints:
            p["off"][j] = p["off"][j] + np.array([np.sign(p["off"][j][0]) * dx, 0.0, 0.0])

    edits = [
        lambda p: scale_all(p, 1.05),
        lambda p: lengthen(p, (4, 5, 7, 8), 0.03),
        lambda p: (lengthen(p, (13, 14), 0.025), lengthen(p, (13, 14), 0.025, "tip")),
        lambda p: lengthen(p, (3, 6, 9), 0.015),
        lambda p: widen(p, ("r_torso0", "r_torso1", "r_torso2", "r_chest"), 0.015),
        lambda p: widen(p, ("r_thigh", "r_shin", "r_upper_arm", "r_forearm"), 0.008),
        lambda p: lateral(p, (10, 11), 0.02),
        lambda p: lateral(p, (1, 2), 0.015),
        lambda p: widen(p, ("r_head",), 0.012),
        lambda p: lengthen(p, (12, 15), 0.015),
    ]
    deltas = []
    for edit in edits:
        p = _rest_params()
        edit(p)
        deltas.append(p)
    return base, deltas


def _joint_positions(p) -> np.ndarray:
    pos = np.zeros((len(PARENTS), 3))
    for j in range(1, len(PARENTS)):
        pos[j] = pos[PARENTS[j]] + p["off"][j]
    return pos


def _capsule(start, end, radius, segments, rings):
    """Closed capsule surface: equator rings at ``start`` and ``end`` plus caps.

    Returns (points, faces, t) where t is the position along the axis in
    units of the bone length (negative in the start cap, >1 in the end cap).
    """
    axis = end - start
    length = np.linalg.norm(axis)
    a = axis / length
    helper = np.array([0.0, 0.0, 1.0]) if abs(a[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
    u = _unit(np.cross(a, helper))
    w = np.cross(a, u)
    phi = 2 * np.pi * np.arange(segments) / segments
    circle = np.cos(phi)[:, None] * u + np.sin(phi)[:, None] * w

    # polar angle of each ring, measured from the cap pole; pi/2 is the equator
    polar = np.pi / 2 * np.arange(1, rings + 1) / rings
    rings_pts, rings_t = [], []
    for al in polar:
        rings_pts.append(start - radius * np.cos(al) * a + radius * np.sin(al) * circle)
        rings_t.append(-radius * np.cos(al) / length)
    for al in polar[::-1]:
        rings_pts.append(end + radius * np.cos(al) * a + radius * np.sin(al) * circle)
        rings_t.append(1.0 + radius * np.cos(al) / length)
    n_rings = len(rings_pts)
    pts = np.concatenate([start[None] - radius * a, *rings_pts, end[None] + radius * a])
    t = np.concatenate([[-radius / length], np.repeat(rings_t, segments), [1 + radius / length]])

    faces = []
    first = 1
    for s in range(segments):
        faces.append((0, first + (s + 1) % segments, first + s))
    for r in range(n_rings - 1):
        a0 = first + r * segments
        b0 = a0 + segments
        for s in range(segments):
            s1 = (s + 1) % segments
            faces.append((a0 + s, a0 + s1, b0 + s1))
            faces.append((a0 + s, b0 + s1, b0 + s))
    last = first + (n_rings - 1) * segments
    top = len(pts) - 1
    for s in range(segments):
        faces.append((top, last + s, last + (s + 1) % segments))
    return pts, np.array(faces), t


def _build(p, segments, rings):
    joints = _joint_positions(p)
    verts, faces, owners, ts, equators = [], [], [], [], {}
    offset = 0
    for owner, end_joint, rkey in _BONES:
        start = joints[owner]
        end = joints[end_joint] if end_joint is not None else start + p["tip"][owner]
        pts, f, t = _capsule(start, end, p[rkey], segments, rings)
        verts.append(pts)
        faces.append(f + offset)
        owners.append(np.full(len(pts), owner))
        ts.append(t)
        # equator ring at the start of the capsule is centred on the owner joint
        equators[owner] = offset + 1 + (rings - 1) * segments + np.arange(segments)
        offset += len(pts)
    return (np.concatenate(verts), np.concatenate(faces), np.concatenate(owners),
            np.concatenate(ts), equators)


def make_default_model(segments: int = 8, rings: int = 4) -> BodyModel:
    """Deterministic capsule humanoid with 16 joints and 10 blendshapes.

    ``segments`` is the number of vertices around each capsule and ``rings``
    the number of latitude rings per hemispherical cap.
    """
    if int(segments) != segments or segments < 3:
        raise InvalidArgumentError(f"segments must be an integer >= 3, got {segments}")
    if int(rings) != rings or rings < 2:
        raise InvalidArgumentError(f"rings must be an integer >= 2, got {rings}")
    segments, rings = int(segments), int(rings)

    base, deltas = _shape_deltas()
    template, faces, owners, ts, equators = _build(base, segments, rings)
    # geometry is linear in the parameters, so each difference is an exact direction
    blendshapes = np.stack([_build(d, segments, rings)[0] - template for d in deltas])

    n, k = len(template), len(PARENTS)
    regressor = np.zeros((k, n))
    for j, ring in equators.items():
        regressor[j, ring] = 1.0 / len(ring)

    weights = np.zeros((n, k))
    own = np.clip(0.5 + 2.5 * ts, 0.5, 1.0)
    for i in range(n):
        j = owners[i]
        parent = PARENTS[j]
        if parent < 0:
            weights[i, j] = 1.0
        else:
            weights[i, j] = own[i]
            weights[i, parent] = 1.0 - own[i]

    return BodyModel(
        template_vertices=template,
        shape_blendshapes=blendshapes,
        joint_regressor=regressor,
        skinning_weights=weights,
        parents=np.array(PARENTS),
        faces=faces,
    )


# --- file formats ------------------------------------------------------------

_ARRAYS = {
    "template_vertices": float,
    "shape_blendshapes": float,
    "joint_regressor": float,
    "skinning_weights": float,
    "parents": int,
    "faces": int,
}


def save_model(model: BodyModel, path) -> None:
    """Write the model as JSON.

    Layout: ``{"format_version": 1, "<array name>": {"shape": [...],
    "data": [flat row-major values]}, ...}`` for every array field.
    """
    doc = {"format_version": FORMAT_VERSION}
    for name, kind in _ARRAYS.items():
        arr = getattr(model, name)
        data = arr.ravel().tolist() if kind is float else [int(x) for x in arr.ravel()]
        doc[name] = {"shape": list(arr.shape), "data": data}
    Path(path).write_text(json.dumps(doc))


def load_model(path) -> BodyModel:
    text = Path(path).read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    if not isinstance(doc, dict):
        raise ModelFormatError(f"{path}: top level must be an object")
    if doc.get("format_version") != FORMAT_VERSION:
        raise ModelFormatError(
            f"{path}: field 'format_version': expected {FORMAT_VERSION}, got {doc.get('format_version')!r}")
    arrays = {}
    for name, kind in _ARRAYS.items():
        entry = doc.get(name)
        if not isinstance(entry, dict) or "shape" not in entry or "data" not in entry:
            raise ModelFormatError(f"{path}: field '{name}': missing or lacks 'shape'/'data'")
        try:
            arr = np.asarray(entry["data"], dtype=kind)
            arrays[name] = arr.reshape([int(s) for s in entry["shape"]])
        except (TypeError, ValueError) as exc:
            raise ModelFormatError(f"{path}: field '{name}': {exc}") from None
    try:
        return BodyModel(**arrays)
    except ModelFormatError as exc:
        raise ModelFormatError(f"{path}: {exc}") from None


def save_obj(mesh: Mesh, path) -> None:
    lines = [f"v {x:.9g} {y:.9g} {z:.9g}" for x, y, z in mesh.vertices]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.faces]
    Path(path).write_text("\n".join(lines) + "\n")


def load_obj(path) -> tuple[np.ndarray, np.ndarray]:
    """Read ``v``/``f`` lines of an OBJ file; returns (vertices, faces)."""
    verts, faces = [], []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        parts = line.split()
        if not parts or parts[0].startswith("#"):
            continue
        try:
            if parts[0] == "v":
                verts.append([float(x) for x in parts[1:4]])
            elif parts[0] == "f":
                idx = [int(tok.split("/")[0]) for tok in parts[1:]]
                for i in range(1, len(idx) - 1):  # fan-triangulate polygons
                    faces.append([idx[0] - 1, idx[i] - 1, idx[i + 1] - 1])
        except ValueError as exc:
            raise ModelFormatError(f"{path}: line {lineno}: {exc}") from None
    v = np.array(verts, dtype=float).reshape(-1, 3)
    f = np.array(faces, dtype=np.int64).reshape(-1, 3)
    if f.size and (f.min() < 0 or f.max() >= len(v)):
        raise ModelFormatError(f"{path}: face index out of range")
    return v, f
