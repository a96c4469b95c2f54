"""Close-range synthetic scenes with ground-truth perspective cameras.

Sampling protocol per record:

* pelvis depth: inverse depth uniform inside a near band with probability
  ``near_fraction``, otherwise uniform inside the far band;
* camera on a sphere of radius ``tz`` around the pelvis (azimuth ``theta``,
  polar angle ``phi`` from world +Y), looking at a spine joint plus noise;
* focal length by a dolly-zoom law, 15 mm per metre on a 36 mm sensor,
  jittered uniformly by [0.7, 1.3].

Random streams are independent per (global seed, record index, purpose):
each draws from a Philox generator seeded with
``SeedSequence(global_seed, spawn_key=(index, purpose))``, purposes being
shape=0, pose=1, depth=2, camera=3, focal=4. Regenerating one index never
depends on any other record.
"""

from __future__ import annotations

import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .body_model import BodyModel, matrix_to_rotvec, rodrigues, synthesize
from .errors import InvalidArgumentError, PerspcamError
from .projection import PerspectiveCamera, Translation
from .rasterizer import SilhouetteMask, rasterize, write_pgm

log = logging.getLogger(__name__)

FORMAT_VERSION = 1
PURPOSES = {"shape": 0, "pose": 1, "depth": 2, "camera": 3, "focal": 4}


@dataclass(frozen=True)
class GenConfig:
    n_records: int = 100
    global_seed: int = 0
    image_size: int = 256
    near_fraction: float = 0.8
    near_band: tuple = (0.3, 1.2)
    far_band: tuple = (1.2, 10.0)
    focal_jitter: tuple = (0.7, 1.3)
    f_default_mm: float = 15.0
    sensor_mm: float = 36.0
    phi_range: tuple = (0.1 * np.pi, 0.7 * np.pi)
    theta_range: tuple = (0.0, 2 * np.pi)
    lookat_bones: tuple = (0, 3, 6, 9, 12, 15)
    lookat_noise_m: float = 0.05
    pose_max_angle: float = 0.4
    shape_clip: float = 2.0
    min_vertex_depth: float = 0.05
    max_camera_attempts: int = 500

    def __post_init__(self):
        for name in ("near_band", "far_band", "focal_jitter", "phi_range", "theta_range",
                     "lookat_bones"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        nb, fb = self.near_band, self.far_band
        if not (0 < nb[0] < nb[1] <= fb[0] < fb[1]):
            raise InvalidArgumentError(f"depth bands must be ordered and disjoint: {nb}, {fb}")
        if not 0 <= self.near_fraction <= 1:
            raise InvalidArgumentError(f"near_fraction must be in [0, 1], got {self.near_fraction}")
        if self.n_records < 0:
            raise InvalidArgumentError(f"n_records must be >= 0, got {self.n_records}")
        if self.image_size < 1:
            raise InvalidArgumentError(f"image_size must be positive, got {self.image_size}")
        if not 0 < self.focal_jitter[0] <= self.focal_jitter[1]:
            raise InvalidArgumentError(f"focal_jitter must be a positive range, got {self.focal_jitter}")


@dataclass
class SceneRecord:
    id: str
    shape: np.ndarray
    pose: np.ndarray  # (K, 3); row 0 already includes the camera rotation
    camera: PerspectiveCamera
    translation: Translation
    camera_rotation: np.ndarray  # world-to-camera, 3x3
    camera_position: np.ndarray
    tz_sampled: float
    mask_path: str
    seed_provenance: tuple
    extra: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "shape": _round(self.shape).tolist(),
            "pose": _round(self.pose).tolist(),
            "camera": {"focal_px": self.camera.focal_px, "width": self.camera.width,
                       "height": self.camera.height, "cx": self.camera.cx, "cy": self.camera.cy},
            "T": [self.translation.tx, self.translation.ty, self.translation.tz],
            "camera_rotation": _round(self.camera_rotation).tolist(),
            "camera_position": _round(self.camera_position).tolist(),
            "tz_sampled": self.tz_sampled,
            "mask_path": self.mask_path,
            "seed_provenance": list(self.seed_provenance),
        }

    @classmethod
    def from_json(cls, doc: dict) -> "SceneRecord":
        cam = doc["camera"]
        return cls(
            id=doc["id"],
            shape=np.array(doc["shape"], dtype=float),
            pose=np.array(doc["pose"], dtype=float),
            camera=PerspectiveCamera(float(cam["focal_px"]), int(cam["width"]), int(cam["height"]),
                                     float(cam["cx"]), float(cam["cy"])),
            translation=Translation(*(float(x) for x in doc["T"])),
            camera_rotation=np.array(doc["camera_rotation"], dtype=float),
            camera_position=np.array(doc["camera_position"], dtype=float),
            tz_sampled=float(doc["tz_sampled"]),
            mask_path=doc["mask_path"],
            seed_provenance=tuple(doc["seed_provenance"]),
        )

    def mesh(self, model: BodyModel):
        return synthesize(model, self.shape, self.pose)


def _round(x):
    """Round to 9 significant digits, the precision used in every output file."""
    return np.vectorize(lambda v: float(f"{v:.9g}"), otypes=[float])(np.asarray(x, dtype=float))


def _r9(v: float) -> float:
    return float(f"{float(v):.9g}")


def record_rng(global_seed: int, index: int, purpose: str) -> np.random.Generator:
    ss = np.random.SeedSequence(int(global_seed), spawn_key=(int(index), PURPOSES[purpose]))
    return np.random.Generator(np.random.Philox(ss))


def sample_tz(rng: np.random.Generator, cfg: GenConfig | None = None) -> float:
    """Pelvis depth with uniform inverse depth inside the chosen band."""
    cfg = cfg or GenConfig()
    near = rng.random() < cfg.near_fraction
    if near:
        lo, hi = 1.0 / cfg.near_band[1], 1.0 / cfg.near_band[0]
        return float(1.0 / rng.uniform(lo, hi))
    lo, hi = 1.0 / cfg.far_band[1], 1.0 / cfg.far_band[0]
    # u in [lo, hi) keeps tz in (near_max, far_max]
    return float(1.0 / rng.uniform(lo, hi))


def sphere_position(radius: float, theta: float, phi: float) -> np.ndarray:
    """Point at polar angle ``phi`` from +Y and azimuth ``theta`` from +Z."""
    return radius * np.array([np.sin(phi) * np.sin(theta), np.cos(phi), np.sin(phi) * np.cos(theta)])


def look_at(position, target, up=(0.0, 1.0, 0.0)) -> np.ndarray:
    """World-to-camera rotation; camera x right, y down, z towards ``target``.

    Falls back to +Z as the up vector when the view axis is within 1 degree
    of the given up direction.
    """
    position = np.asarray(position, dtype=float)
    fwd = np.asarray(target, dtype=float) - position
    norm = np.linalg.norm(fwd)
    if norm < 1e-9:
        raise InvalidArgumentError("look-at target coincides with the camera position")
    fwd = fwd / norm
    up = np.asarray(up, dtype=float)
    if abs(np.dot(fwd, up / np.linalg.norm(up))) > np.cos(np.deg2rad(1.0)):
        up = np.array([0.0, 0.0, 1.0])
    right = np.cross(fwd, up)
    right /= np.linalg.norm(right)
    down = np.cross(fwd, right)
    return np.stack([right, down, fwd])


def sample_camera(rng: np.random.Generator, joints, tz: float, cfg: GenConfig | None = None):
    """Camera position on the depth sphere around the pelvis and its rotation."""
    cfg = cfg or GenConfig()
    joints = np.asarray(joints, dtype=float)
    pelvis = joints[0]
    bones = [min(int(b), len(joints) - 1) for b in cfg.lookat_bones]
    for _ in range(10):
        theta = rng.uniform(*cfg.theta_range)
        phi = rng.uniform(*cfg.phi_range)
        bone = bones[int(rng.integers(len(bones)))]
        noise = rng.uniform(-cfg.lookat_noise_m, cfg.lookat_noise_m, size=3)
        position = pelvis + sphere_position(tz, theta, phi)
        target = joints[bone] + noise
        if np.linalg.norm(target - position) > 1e-6:
            return position, look_at(position, target)
    raise InvalidArgumentError("could not find a non-degenerate look-at target in 10 attempts")


def sample_focal(rng: np.random.Generator, tz: float, cfg: GenConfig | None = None,
                 width: int | None = None) -> float:
    """Dolly-zoom focal length in pixels: 15 mm per metre of depth, jittered."""
    cfg = cfg or GenConfig()
    if not tz > 0:
        raise InvalidArgumentError(f"tz must be positive, got {tz}")
    width = cfg.image_size if width is None else width
    f_mm = cfg.f_default_mm * tz * rng.uniform(*cfg.focal_jitter)
    return float(f_mm / cfg.sensor_mm * width)


def sample_shape(rng, num_betas: int, clip: float) -> np.ndarray:
    beta = rng.standard_normal(num_betas)
    while np.any(np.abs(beta) > clip):
        bad = np.abs(beta) > clip
        beta[bad] = rng.standard_normal(int(bad.sum()))
    return beta


def sample_pose(rng, num_joints: int, max_angle: float) -> np.ndarray:
    axes = rng.standard_normal((num_joints, 3))
    axes /= np.linalg.norm(axes, axis=1, keepdims=True)
    angles = rng.uniform(0.0, max_angle, size=num_joints)
    pose = axes * angles[:, None]
    pose[0] = 0.0  # upright root; the camera supplies the global orientation
    return pose


def generate_record(cfg: GenConfig, model: BodyModel, index: int):
    """Sample and render record ``index``; returns ``(record, mask)``.

    Raises :class:`PerspcamError` when no camera placement keeps the whole body
    in front of the camera with a non-empty silhouette.
    """
    seed = cfg.global_seed
    beta = _round(sample_shape(record_rng(seed, index, "shape"), model.num_betas, cfg.shape_clip))
    body_pose = sample_pose(record_rng(seed, index, "pose"), model.joint_count, cfg.pose_max_angle)
    tz = _r9(sample_tz(record_rng(seed, index, "depth"), cfg))
    f_px = _r9(sample_focal(record_rng(seed, index, "focal"), tz, cfg, cfg.image_size))

    world = synthesize(model, beta, body_pose)
    cam_rng = record_rng(seed, index, "camera")
    size = cfg.image_size
    camera = PerspectiveCamera(f_px, size, size)
    for _ in range(cfg.max_camera_attempts):
        position, rot = sample_camera(cam_rng, world.joints, tz, cfg)
        # dolly along the view axis so the pelvis depth equals the sampled tz
        depth = float(np.dot(world.joints[0] - position, rot[2]))
        position = position - (tz - depth) * rot[2]
        pose = body_pose.copy()
        pose[0] = matrix_to_rotvec(rot @ rodrigues(body_pose[0]))
        pose = _round(pose)
        t = -rot @ (position - world.joints[0])
        translation = Translation(_r9(t[0]), _r9(t[1]), tz)
        mesh = synthesize(model, beta, pose)
        if np.min(mesh.vertices[:, 2]) + tz < cfg.min_vertex_depth:
            continue
        try:
            mask = rasterize(mesh, camera, translation)
        except PerspcamError:
            continue
        rid = f"scene_{index:06d}"
        record = SceneRecord(
            id=rid, shape=beta, pose=pose, camera=camera, translation=translation,
            camera_rotation=rot, camera_position=position, tz_sampled=tz,
            mask_path=f"masks/{rid}.pgm", seed_provenance=(int(seed), int(index)),
        )
        return record, mask
    raise PerspcamError(
        f"record {index}: no valid camera in {cfg.max_camera_attempts} attempts at tz={tz:.3f}")


def _config_json(cfg: GenConfig) -> dict:
    doc = asdict(cfg)
    return {k: (list(v) if isinstance(v, tuple) else v) for k, v in doc.items()}


def generate_dataset(cfg: GenConfig, model: BodyModel, out_dir, threads: int = 1,
                     model_info: dict | None = None) -> dict:
    """Render ``cfg.n_records`` scenes into ``out_dir``.

    Writes ``masks/<id>.pgm`` and ``manifest.jsonl`` (a header line followed by
    one record per line, in index order). Returns the header dict.
    """
    out = Path(out_dir)
    try:
        (out / "masks").mkdir(parents=True, exist_ok=True)
        probe = out / ".write_probe"
        probe.write_bytes(b"")
        probe.unlink()
    except OSError as exc:
        raise OSError(f"output directory {out} is not writable: {exc}") from exc

    def job(i):
        try:
            return generate_record(cfg, model, i)
        except PerspcamError as exc:
            log.warning("skipping record %d: %s", i, exc)
            return None

    indices = range(cfg.n_records)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(job, indices))
    else:
        results = [job(i) for i in indices]

    skipped = [i for i, r in zip(indices, results) if r is None]
    header = {
        "format_version": FORMAT_VERSION,
        "config": _config_json(cfg),
        "model": model_info or {"kind": "default", "segments": 8, "rings": 4},
        "n_written": cfg.n_records - len(skipped),
        "skipped": skipped,
    }
    lines = [json.dumps(header, sort_keys=True)]
    for res in results:
        if res is None:
            continue
        record, mask = res
        write_pgm(mask, out / record.mask_path)
        lines.append(json.dumps(record.to_json(), sort_keys=True))
    tmp = out / "manifest.jsonl.tmp"
    tmp.write_text("\n".join(lines) + "\n")
    os.replace(tmp, out / "manifest.jsonl")
    return header


def read_manifest(path) -> tuple[dict, list[SceneRecord]]:
    from .errors import ModelFormatError

    path = Path(path)
    lines = path.read_text().splitlines()
    if not lines:
        raise ModelFormatError(f"{path}: empty manifest")
    try:
        header = json.loads(lines[0])
        records = [SceneRecord.from_json(json.loads(line)) for line in lines[1:] if line.strip()]
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise ModelFormatError(f"{path}: {exc}") from None
    if header.get("format_version") != FORMAT_VERSION:
        raise ModelFormatError(f"{path}: unsupported format_version {header.get('format_version')!r}")
    return header, records
